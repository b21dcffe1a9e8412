#include "chanfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace chanfuse::nn {

namespace {
constexpr char kMagic[8] = {'C', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ostream& out, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}
}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
    tensors[name] = Entry{t.shape(), t.values()};
}

Tensor Checkpoint::take(const std::string& name, bool requires_grad) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    return Tensor::from_values(it->second.shape, it->second.data, requires_grad);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, const std::string& dtype) {
    if (dtype != "f64" && dtype != "f32")
        throw ConfigError("checkpoint: dtype must be f64 or f32, got " + dtype);

    nlohmann::json header;
    header["format"] = "chanfuse-checkpoint";
    header["version"] = 1;
    header["dtype"] = dtype;
    header["meta"] = nlohmann::json::parse(ckpt.meta_json);
    nlohmann::json tensor_list = nlohmann::json::array();
    uint64_t offset = 0;
    const size_t elem = dtype == "f64" ? 8 : 4;
    for (const auto& [name, entry] : ckpt.tensors) {
        nlohmann::json t;
        t["name"] = name;
        t["shape"] = entry.shape;
        t["offset"] = offset;
        t["count"] = entry.data.size();
        tensor_list.push_back(t);
        offset += entry.data.size() * elem;
    }
    header["tensors"] = tensor_list;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, entry] : ckpt.tensors) {
        if (dtype == "f64") {
            out.write(reinterpret_cast<const char*>(entry.data.data()),
                      static_cast<std::streamsize>(entry.data.size() * 8));
        } else {
            std::vector<float> f(entry.data.begin(), entry.data.end());
            out.write(reinterpret_cast<const char*>(f.data()),
                      static_cast<std::streamsize>(f.size() * 4));
        }
    }
    if (!out) throw IoError("checkpoint: failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const uint64_t header_len = read_u64(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("checkpoint: truncated header in " + path);

    nlohmann::json header = nlohmann::json::parse(header_str);
    if (header.value("format", "") != "chanfuse-checkpoint")
        throw IoError("checkpoint: unrecognized container format in " + path);
    const std::string dtype = header.at("dtype");

    Checkpoint ckpt;
    ckpt.meta_json = header.value("meta", nlohmann::json::object()).dump();
    for (const auto& t : header.at("tensors")) {
        Checkpoint::Entry entry;
        entry.shape = t.at("shape").get<Shape>();
        const size_t count = t.at("count");
        entry.data.resize(count);
        if (dtype == "f64") {
            in.read(reinterpret_cast<char*>(entry.data.data()),
                    static_cast<std::streamsize>(count * 8));
        } else {
            std::vector<float> f(count);
            in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * 4));
            for (size_t i = 0; i < count; ++i) entry.data[i] = static_cast<double>(f[i]);
        }
        if (!in) throw IoError("checkpoint: truncated tensor data in " + path);
        ckpt.tensors[t.at("name").get<std::string>()] = std::move(entry);
    }
    return ckpt;
}

}  // namespace chanfuse::nn
