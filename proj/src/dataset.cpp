#include "chanfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "chanfuse/textconfig.hpp"

namespace chanfuse {

namespace {

// stream ids for derive_seed; per-user counters keep every draw independent
enum Stream : uint64_t {
    kGrid = 1,
    kSplit = 2,
    kPilot = 3,
    kRxNoise = 4,
    kLabelPilot = 5,
    kLabelNoise = 6,
    kUplinkPilot = 7,
    kUplinkNoise = 8,
    kMask = 9,
    kHistoryBase = 32,  // +2k / +2k+1 per history position
};

ChannelVector estimate_channel(const ChannelVector& h_true, const EstimatorSpec& est,
                               const Eigen::MatrixXcd& cov, uint64_t pilot_seed,
                               uint64_t noise_seed) {
    if (est.mode == LabelMode::Perfect) return h_true;
    const int m = static_cast<int>(h_true.entries.size());
    PilotBlock s = make_pilots(m, m, pilot_seed);
    RxSignal rx = receive(h_true, s, est.snr_db, noise_seed);
    double sigma2 = noise_variance(h_true, s, est.snr_db);
    ChannelVector h = lmmse_estimate(rx, s, cov, sigma2);
    h.carrier_freq_hz = h_true.carrier_freq_hz;
    return h;
}

std::vector<int> draw_mask(const DatasetConfig& cfg, uint64_t seed) {
    const int m = cfg.scene.num_antennas;
    std::vector<int> mask;
    if (cfg.mask_mode == MaskMode::Prefix) {
        mask.resize(static_cast<size_t>(cfg.m_fb));
        std::iota(mask.begin(), mask.end(), 0);
        return mask;
    }
    std::vector<int> all(static_cast<size_t>(m));
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    mask.assign(all.begin(), all.begin() + cfg.m_fb);
    std::sort(mask.begin(), mask.end());
    return mask;
}

bool inside(const Vec3& p, const Vec3& lo, const Vec3& hi) {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
}

void check_finite(const std::vector<cxd>& v, const char* what) {
    for (const cxd& z : v)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw ShapeError(std::string("sample: non-finite ") + what);
}

}  // namespace

void DatasetConfig::validate() const {
    scene.validate();
    if (train_count < 1 || test_count < 0) throw ConfigError("dataset: bad split sizes");
    if (t_unit < 0) throw ConfigError("dataset: t_unit must be >= 0");
    if (t_p < 1) throw ConfigError("dataset: t_p must be >= 1");
    const int m = scene.num_antennas;
    if (m_fb < 1 || m_fb > m) throw ConfigError("dataset: m_fb must be within [1, M]");
    if (traj_step <= 0.0) throw ConfigError("dataset: traj_step must be > 0");
    if (std::isnan(snr_db) || std::isnan(label.snr_db) || std::isnan(history.snr_db))
        throw ConfigError("dataset: snr fields must not be NaN");
    if (f_up <= 0.0 || f_down <= 0.0) throw ConfigError("dataset: carrier frequencies must be > 0");
    if (area_min.x > area_max.x || area_min.y > area_max.y || area_min.z > area_max.z)
        throw ConfigError("dataset: area bounds inverted");
    const double y_lo = area_min.y + t_unit * traj_step;
    if (y_lo > area_max.y)
        throw ConfigError("dataset: area too small along y for the trajectory history");
}

void validate_sample(const Sample& s, const DatasetConfig& cfg) {
    const size_t m = static_cast<size_t>(cfg.scene.num_antennas);
    if (s.prev_channels.size() != static_cast<size_t>(cfg.t_unit))
        throw ShapeError("sample: history length != t_unit");
    for (const ChannelVector& h : s.prev_channels) {
        if (h.entries.size() != m) throw ShapeError("sample: history channel length != M");
        check_finite(h.entries, "history channel");
    }
    if (s.uplink.entries.size() != m) throw ShapeError("sample: uplink length != M");
    check_finite(s.uplink.entries, "uplink channel");
    if (s.label.entries.size() != m) throw ShapeError("sample: label length != M");
    check_finite(s.label.entries, "label channel");
    if (s.pilots.m() != static_cast<int>(m) || s.pilots.t_p() != cfg.t_p)
        throw ShapeError("sample: pilot block dims mismatch");
    if (s.rx.r.cols() != cfg.t_p) throw ShapeError("sample: rx length != t_p");
    const bool want_ls = cfg.t_p >= cfg.scene.num_antennas;
    if (s.ls_est.has_value() != want_ls)
        throw ShapeError("sample: ls_est present iff T_p >= M violated");
    if (s.ls_est && s.ls_est->entries.size() != m) throw ShapeError("sample: ls_est length != M");
    if (s.mask.size() != static_cast<size_t>(cfg.m_fb)) throw ShapeError("sample: mask size != m_fb");
    if (s.partial_known.size() + s.partial_unknown.size() != m)
        throw ShapeError("sample: partial parts do not sum to M");
    std::vector<cxd> rebuilt = assemble_channel(s.partial_known, s.partial_unknown, s.mask,
                                                static_cast<int>(m));
    for (size_t i = 0; i < m; ++i)
        if (rebuilt[i] != s.label.entries[i])
            throw ShapeError("sample: partial split does not reassemble the label channel");
}

Dataset generate(const DatasetConfig& cfg) {
    cfg.validate();
    const int m = cfg.scene.num_antennas;
    const int total = cfg.train_count + cfg.test_count;

    // jittered grid of current-position users; history extends toward -y, so
    // end positions start t_unit*step above the lower y bound
    const double y_lo = cfg.area_min.y + cfg.t_unit * cfg.traj_step;
    const double y_hi = cfg.area_max.y;
    const int nx = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(total))));
    const int ny = (total + nx - 1) / nx;
    const double cell_x = (cfg.area_max.x - cfg.area_min.x) / nx;
    const double cell_y = (y_hi - y_lo) / ny;
    std::mt19937_64 grid_rng(derive_seed(cfg.seed, kGrid, 0));
    std::uniform_real_distribution<double> jitter(-0.45, 0.45);
    std::uniform_real_distribution<double> uz(cfg.area_min.z, cfg.area_max.z);

    std::vector<Vec3> positions;
    positions.reserve(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) {
        const int gx = i % nx;
        const int gy = i / nx;
        Vec3 p;
        p.x = cfg.area_min.x + (gx + 0.5 + jitter(grid_rng)) * cell_x;
        p.y = y_lo + (gy + 0.5 + jitter(grid_rng)) * cell_y;
        p.z = (cfg.area_min.z == cfg.area_max.z) ? cfg.area_min.z : uz(grid_rng);
        if (!inside(p, {cfg.area_min.x, y_lo, cfg.area_min.z}, {cfg.area_max.x, y_hi, cfg.area_max.z}))
            throw ConfigError("dataset: sampled user position outside scene bounds");
        positions.push_back(p);
    }

    // noiseless geometry for every user
    std::vector<ChannelVector> cur_true(positions.size()), up_true(positions.size());
    std::vector<std::vector<ChannelVector>> hist_true(positions.size());
    for (size_t u = 0; u < positions.size(); ++u) {
        Trajectory traj = make_trajectory(positions[u], cfg.traj_step, cfg.t_unit + 1);
        PathSet cur_paths = derive_paths(cfg.scene, positions[u]);
        cur_true[u] = synthesize_channel(cfg.scene, cur_paths, cfg.f_down);
        up_true[u] = synthesize_channel(cfg.scene, cur_paths, cfg.f_up);
        hist_true[u] = channel_history(cfg.scene, traj, cfg.f_down, cfg.t_unit);
    }

    // seeded disjoint split by user index
    std::vector<int> order(positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(derive_seed(cfg.seed, kSplit, 0));
    std::shuffle(order.begin(), order.end(), split_rng);

    const bool need_cov = cfg.label.mode == LabelMode::Lmmse ||
                          cfg.history.mode == LabelMode::Lmmse;
    Eigen::MatrixXcd r_down, r_up;
    if (need_cov) {
        std::vector<ChannelVector> train_down, train_up;
        train_down.reserve(static_cast<size_t>(cfg.train_count));
        for (int k = 0; k < cfg.train_count; ++k) {
            train_down.push_back(cur_true[static_cast<size_t>(order[static_cast<size_t>(k)])]);
            train_up.push_back(up_true[static_cast<size_t>(order[static_cast<size_t>(k)])]);
        }
        r_down = empirical_covariance(train_down);
        r_up = empirical_covariance(train_up);
    }

    auto build_sample = [&](int user) {
        const uint64_t uid = static_cast<uint64_t>(user);
        Sample s;
        s.user_id = user;
        s.location = positions[static_cast<size_t>(user)];
        s.pilots = make_pilots(m, cfg.t_p, derive_seed(cfg.seed, kPilot, uid));
        const ChannelVector& h_cur = cur_true[static_cast<size_t>(user)];
        s.rx = receive(h_cur, s.pilots, cfg.snr_db, derive_seed(cfg.seed, kRxNoise, uid));
        if (cfg.t_p >= m) s.ls_est = ls_estimate(s.rx, s.pilots);
        s.label = estimate_channel(h_cur, cfg.label, r_down,
                                   derive_seed(cfg.seed, kLabelPilot, uid),
                                   derive_seed(cfg.seed, kLabelNoise, uid));
        s.uplink = estimate_channel(up_true[static_cast<size_t>(user)], cfg.history, r_up,
                                    derive_seed(cfg.seed, kUplinkPilot, uid),
                                    derive_seed(cfg.seed, kUplinkNoise, uid));
        s.prev_channels.reserve(static_cast<size_t>(cfg.t_unit));
        for (int k = 0; k < cfg.t_unit; ++k) {
            s.prev_channels.push_back(estimate_channel(
                hist_true[static_cast<size_t>(user)][static_cast<size_t>(k)], cfg.history, r_down,
                derive_seed(cfg.seed, kHistoryBase + 2 * static_cast<uint64_t>(k), uid),
                derive_seed(cfg.seed, kHistoryBase + 2 * static_cast<uint64_t>(k) + 1, uid)));
        }
        if (cfg.m_fb == m) {
            s.mask.resize(static_cast<size_t>(m));
            std::iota(s.mask.begin(), s.mask.end(), 0);
            s.partial_known = s.label.entries;
        } else {
            s.mask = draw_mask(cfg, derive_seed(cfg.seed, kMask, uid));
            PartialChannel parts = partial_channel(s.label, s.mask);
            s.partial_known = std::move(parts.known);
            s.partial_unknown = std::move(parts.unknown);
        }
        validate_sample(s, cfg);
        return s;
    };

    Dataset ds;
    ds.config = cfg;
    ds.train.reserve(static_cast<size_t>(cfg.train_count));
    ds.test.reserve(static_cast<size_t>(cfg.test_count));
    for (int k = 0; k < cfg.train_count; ++k)
        ds.train.push_back(build_sample(order[static_cast<size_t>(k)]));
    for (int k = 0; k < cfg.test_count; ++k)
        ds.test.push_back(build_sample(order[static_cast<size_t>(cfg.train_count + k)]));
    return ds;
}

// ---- container serialization (layout documented in docs/formats.md) --------

namespace {

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

double get_f64(std::istream& in) {
    double v;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void put_cvec(std::ostream& out, const std::vector<cxd>& v) {
    for (const cxd& z : v) {
        put_f64(out, z.real());
        put_f64(out, z.imag());
    }
}

std::vector<cxd> get_cvec(std::istream& in, size_t n) {
    std::vector<cxd> v(n);
    for (size_t i = 0; i < n; ++i) {
        double re = get_f64(in);
        double im = get_f64(in);
        v[i] = cxd(re, im);
    }
    return v;
}

nlohmann::json estimator_json(const EstimatorSpec& e) {
    return {{"mode", e.mode == LabelMode::Perfect ? "perfect" : "lmmse"}, {"snr_db", e.snr_db}};
}

EstimatorSpec estimator_from_json(const nlohmann::json& j) {
    EstimatorSpec e;
    e.mode = j.at("mode") == "perfect" ? LabelMode::Perfect : LabelMode::Lmmse;
    e.snr_db = j.at("snr_db");
    return e;
}

nlohmann::json config_json(const DatasetConfig& cfg) {
    nlohmann::json j;
    j["scene"] = {{"bs_position", {cfg.scene.bs_position.x, cfg.scene.bs_position.y,
                                   cfg.scene.bs_position.z}},
                  {"num_antennas", cfg.scene.num_antennas},
                  {"antenna_spacing", cfg.scene.antenna_spacing},
                  {"ref_freq", cfg.scene.ref_freq_hz},
                  {"include_los", cfg.scene.include_los},
                  {"max_paths", cfg.scene.max_paths},
                  {"seed", cfg.scene.seed}};
    nlohmann::json scat = nlohmann::json::array();
    for (const Vec3& s : cfg.scene.scatterers) scat.push_back({s.x, s.y, s.z});
    j["scene"]["scatterers"] = scat;
    j["scene_file"] = cfg.scene_file;
    j["area_min"] = {cfg.area_min.x, cfg.area_min.y, cfg.area_min.z};
    j["area_max"] = {cfg.area_max.x, cfg.area_max.y, cfg.area_max.z};
    j["train_count"] = cfg.train_count;
    j["test_count"] = cfg.test_count;
    j["t_unit"] = cfg.t_unit;
    j["t_p"] = cfg.t_p;
    j["m_fb"] = cfg.m_fb;
    j["mask_mode"] = cfg.mask_mode == MaskMode::Prefix ? "prefix" : "random";
    j["traj_step"] = cfg.traj_step;
    j["snr_db"] = cfg.snr_db;
    j["label"] = estimator_json(cfg.label);
    j["history"] = estimator_json(cfg.history);
    j["f_up"] = cfg.f_up;
    j["f_down"] = cfg.f_down;
    j["seed"] = cfg.seed;
    // conventions baked into the generator, echoed for consumers
    j["conventions"] = {{"history_order", "most_recent_first"},
                        {"history_direction", "-y"},
                        {"independent_label_noise", true},
                        {"partial_source", "label_channel"}};
    return j;
}

DatasetConfig config_from_json(const nlohmann::json& j) {
    DatasetConfig cfg;
    const auto& sc = j.at("scene");
    cfg.scene.bs_position = {sc.at("bs_position")[0], sc.at("bs_position")[1],
                             sc.at("bs_position")[2]};
    cfg.scene.num_antennas = sc.at("num_antennas");
    cfg.scene.antenna_spacing = sc.at("antenna_spacing");
    cfg.scene.ref_freq_hz = sc.at("ref_freq");
    cfg.scene.include_los = sc.at("include_los");
    cfg.scene.max_paths = sc.at("max_paths");
    cfg.scene.seed = sc.at("seed");
    for (const auto& s : sc.at("scatterers"))
        cfg.scene.scatterers.push_back({s[0], s[1], s[2]});
    cfg.scene_file = j.value("scene_file", "");
    cfg.area_min = {j.at("area_min")[0], j.at("area_min")[1], j.at("area_min")[2]};
    cfg.area_max = {j.at("area_max")[0], j.at("area_max")[1], j.at("area_max")[2]};
    cfg.train_count = j.at("train_count");
    cfg.test_count = j.at("test_count");
    cfg.t_unit = j.at("t_unit");
    cfg.t_p = j.at("t_p");
    cfg.m_fb = j.at("m_fb");
    cfg.mask_mode = j.at("mask_mode") == "prefix" ? MaskMode::Prefix : MaskMode::Random;
    cfg.traj_step = j.at("traj_step");
    cfg.snr_db = j.at("snr_db");
    cfg.label = estimator_from_json(j.at("label"));
    cfg.history = estimator_from_json(j.at("history"));
    cfg.f_up = j.at("f_up");
    cfg.f_down = j.at("f_down");
    cfg.seed = j.at("seed");
    return cfg;
}

void write_sample(std::ostream& out, const Sample& s, const DatasetConfig& cfg) {
    put_u64(out, static_cast<uint64_t>(s.user_id));
    put_f64(out, s.location.x);
    put_f64(out, s.location.y);
    put_f64(out, s.location.z);
    for (const ChannelVector& h : s.prev_channels) put_cvec(out, h.entries);
    put_cvec(out, s.uplink.entries);
    const int m = cfg.scene.num_antennas;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cfg.t_p; ++j) {
            put_f64(out, s.pilots.s(i, j).real());
            put_f64(out, s.pilots.s(i, j).imag());
        }
    for (int j = 0; j < cfg.t_p; ++j) {
        put_f64(out, s.rx.r(j).real());
        put_f64(out, s.rx.r(j).imag());
    }
    if (s.ls_est) put_cvec(out, s.ls_est->entries);
    for (int idx : s.mask) put_u64(out, static_cast<uint64_t>(idx));
    put_cvec(out, s.partial_known);
    put_cvec(out, s.partial_unknown);
    put_cvec(out, s.label.entries);
}

Sample read_sample(std::istream& in, const DatasetConfig& cfg) {
    const int m = cfg.scene.num_antennas;
    Sample s;
    s.user_id = static_cast<long long>(get_u64(in));
    s.location.x = get_f64(in);
    s.location.y = get_f64(in);
    s.location.z = get_f64(in);
    s.prev_channels.resize(static_cast<size_t>(cfg.t_unit));
    for (auto& h : s.prev_channels) {
        h.entries = get_cvec(in, static_cast<size_t>(m));
        h.carrier_freq_hz = cfg.f_down;
    }
    s.uplink.entries = get_cvec(in, static_cast<size_t>(m));
    s.uplink.carrier_freq_hz = cfg.f_up;
    s.pilots.s.resize(m, cfg.t_p);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cfg.t_p; ++j) {
            double re = get_f64(in);
            double im = get_f64(in);
            s.pilots.s(i, j) = cxd(re, im);
        }
    s.rx.r.resize(cfg.t_p);
    s.rx.snr_db = cfg.snr_db;
    for (int j = 0; j < cfg.t_p; ++j) {
        double re = get_f64(in);
        double im = get_f64(in);
        s.rx.r(j) = cxd(re, im);
    }
    if (cfg.t_p >= m) {
        ChannelVector ls;
        ls.entries = get_cvec(in, static_cast<size_t>(m));
        ls.carrier_freq_hz = cfg.f_down;
        s.ls_est = std::move(ls);
    }
    s.mask.resize(static_cast<size_t>(cfg.m_fb));
    for (int& idx : s.mask) idx = static_cast<int>(get_u64(in));
    s.partial_known = get_cvec(in, static_cast<size_t>(cfg.m_fb));
    s.partial_unknown = get_cvec(in, static_cast<size_t>(m - cfg.m_fb));
    s.label.entries = get_cvec(in, static_cast<size_t>(m));
    s.label.carrier_freq_hz = cfg.f_down;
    return s;
}

constexpr char kDatasetMagic[8] = {'C', 'F', 'D', 'S', 'E', 'T', '0', '1'};

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    nlohmann::json header;
    header["format"] = "chanfuse-dataset";
    header["version"] = 1;
    header["config"] = config_json(ds.config);
    header["train_count"] = ds.train.size();
    header["test_count"] = ds.test.size();
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("dataset: cannot write " + path);
    out.write(kDatasetMagic, sizeof(kDatasetMagic));
    put_u64(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const Sample& s : ds.train) write_sample(out, s, ds.config);
    for (const Sample& s : ds.test) write_sample(out, s, ds.config);
    if (!out) throw IoError("dataset: failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("dataset: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kDatasetMagic, 8) != 0)
        throw IoError("dataset: bad magic in " + path);
    const uint64_t header_len = get_u64(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("dataset: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_str);
    if (header.value("format", "") != "chanfuse-dataset")
        throw IoError("dataset: unrecognized container format in " + path);

    Dataset ds;
    ds.config = config_from_json(header.at("config"));
    const size_t n_train = header.at("train_count");
    const size_t n_test = header.at("test_count");
    ds.train.reserve(n_train);
    ds.test.reserve(n_test);
    for (size_t i = 0; i < n_train; ++i) ds.train.push_back(read_sample(in, ds.config));
    for (size_t i = 0; i < n_test; ++i) ds.test.push_back(read_sample(in, ds.config));
    if (!in) throw IoError("dataset: truncated sample data in " + path);
    return ds;
}

PathImport import_paths(const std::string& path, int max_paths) {
    std::ifstream in(path);
    if (!in) throw IoError("import_paths: cannot open " + path);
    if (max_paths < 1) throw ConfigError("import_paths: max_paths must be >= 1");

    PathImport result;
    std::string line;
    int lineno = 0;
    auto deg2rad = [](double d) { return d * kPi / 180.0; };
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream iss(line);
        std::vector<std::string> fields;
        std::string tok;
        while (iss >> tok) fields.push_back(tok);
        if (fields.empty()) continue;
        if (fields.size() != 6)
            throw ParseError(path, lineno,
                             "expected 6 columns (user_id alpha phi_deg tau_sec theta_az_deg "
                             "theta_el_deg), got " +
                                 std::to_string(fields.size()));
        auto num = [&](size_t i) {
            try {
                size_t pos = 0;
                double v = std::stod(fields[i], &pos);
                if (pos != fields[i].size()) throw std::invalid_argument(fields[i]);
                return v;
            } catch (const std::exception&) {
                throw ParseError(path, lineno, "bad number '" + fields[i] + "'");
            }
        };
        long long user;
        try {
            user = std::stoll(fields[0]);
        } catch (const std::exception&) {
            throw ParseError(path, lineno, "bad user_id '" + fields[0] + "'");
        }
        Path p;
        p.alpha = num(1);
        p.phi = deg2rad(num(2));
        p.tau = num(3);
        p.theta_az = deg2rad(num(4));
        p.theta_el = deg2rad(num(5));
        if (!(p.alpha > 0.0)) throw ParseError(path, lineno, "alpha must be > 0");
        if (!(p.tau > 0.0)) throw ParseError(path, lineno, "tau must be > 0");
        if (!std::isfinite(p.phi) || !std::isfinite(p.theta_az) || !std::isfinite(p.theta_el))
            throw ParseError(path, lineno, "angles must be finite");
        result.users[user].paths.push_back(p);
    }
    for (auto& [user, paths] : result.users) {
        std::stable_sort(paths.paths.begin(), paths.paths.end(),
                         [](const Path& a, const Path& b) { return a.alpha > b.alpha; });
        if (paths.paths.size() > static_cast<size_t>(max_paths)) {
            result.warnings.push_back("user " + std::to_string(user) + ": " +
                                      std::to_string(paths.paths.size()) +
                                      " paths, keeping the strongest " +
                                      std::to_string(max_paths));
            paths.paths.resize(static_cast<size_t>(max_paths));
        }
    }
    return result;
}

DatasetConfig load_dataset_config(const std::string& path) {
    TextConfig cfg = TextConfig::parse_file(path);
    DatasetConfig out;
    out.scene_file = cfg.get_str("scene");
    std::filesystem::path scene_path(out.scene_file);
    if (scene_path.is_relative())
        scene_path = std::filesystem::path(path).parent_path() / scene_path;
    out.scene = load_scene(scene_path.string());
    out.area_min = cfg.get_vec3("area_min");
    out.area_max = cfg.get_vec3("area_max");
    out.train_count = static_cast<int>(cfg.get_int("train_count"));
    out.test_count = static_cast<int>(cfg.get_int("test_count"));
    out.t_unit = static_cast<int>(cfg.get_int("t_unit", 3));
    out.t_p = static_cast<int>(cfg.get_int("t_p", 64));
    out.m_fb = static_cast<int>(cfg.get_int("m_fb", out.scene.num_antennas * 3 / 4));
    std::string mask = cfg.get_str("mask", "prefix");
    if (mask == "prefix")
        out.mask_mode = MaskMode::Prefix;
    else if (mask == "random")
        out.mask_mode = MaskMode::Random;
    else
        throw ParseError(path, 0, "mask must be 'prefix' or 'random'");
    out.traj_step = cfg.get_double("step", 1.0);
    out.snr_db = cfg.get_double("snr_db", 25.0);
    auto parse_estimator = [&](const std::string& key, EstimatorSpec fallback) {
        const auto* e = cfg.find(key);
        if (!e) return fallback;
        if (e->fields.empty()) throw ParseError(path, e->line, key + " needs a mode");
        EstimatorSpec spec;
        if (e->fields[0] == "perfect") {
            spec.mode = LabelMode::Perfect;
        } else if (e->fields[0] == "lmmse") {
            spec.mode = LabelMode::Lmmse;
            spec.snr_db = TextConfig::parse_double_field(*e, 1, path);
        } else {
            throw ParseError(path, e->line, key + " mode must be 'perfect' or 'lmmse <snr_db>'");
        }
        return spec;
    };
    out.label = parse_estimator("label", EstimatorSpec{});
    out.history = parse_estimator("history", out.label);
    out.f_up = cfg.get_double("uplink_freq", 2.50e9);
    out.f_down = cfg.get_double("downlink_freq", 2.62e9);
    out.seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
    out.validate();
    return out;
}

void save_dataset_config(const DatasetConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset config: " + path);
    char buf[256];
    out << "scene = " << (cfg.scene_file.empty() ? "scene.scene" : cfg.scene_file) << "\n";
    std::snprintf(buf, sizeof(buf), "area_min = %.17g %.17g %.17g\n", cfg.area_min.x,
                  cfg.area_min.y, cfg.area_min.z);
    out << buf;
    std::snprintf(buf, sizeof(buf), "area_max = %.17g %.17g %.17g\n", cfg.area_max.x,
                  cfg.area_max.y, cfg.area_max.z);
    out << buf;
    out << "train_count = " << cfg.train_count << "\n";
    out << "test_count = " << cfg.test_count << "\n";
    out << "t_unit = " << cfg.t_unit << "\n";
    out << "t_p = " << cfg.t_p << "\n";
    out << "m_fb = " << cfg.m_fb << "\n";
    out << "mask = " << (cfg.mask_mode == MaskMode::Prefix ? "prefix" : "random") << "\n";
    std::snprintf(buf, sizeof(buf), "step = %.17g\n", cfg.traj_step);
    out << buf;
    std::snprintf(buf, sizeof(buf), "snr_db = %.17g\n", cfg.snr_db);
    out << buf;
    auto emit_estimator = [&](const char* key, const EstimatorSpec& e) {
        if (e.mode == LabelMode::Perfect) {
            out << key << " = perfect\n";
        } else {
            std::snprintf(buf, sizeof(buf), "%s = lmmse %.17g\n", key, e.snr_db);
            out << buf;
        }
    };
    emit_estimator("label", cfg.label);
    emit_estimator("history", cfg.history);
    std::snprintf(buf, sizeof(buf), "uplink_freq = %.17g\n", cfg.f_up);
    out << buf;
    std::snprintf(buf, sizeof(buf), "downlink_freq = %.17g\n", cfg.f_down);
    out << buf;
    out << "seed = " << cfg.seed << "\n";
    if (!out) throw IoError("failed writing dataset config: " + path);
}

}  // namespace chanfuse
