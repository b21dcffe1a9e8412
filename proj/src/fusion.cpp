#include "chanfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "chanfuse/checkpoint.hpp"
#include "chanfuse/textconfig.hpp"

namespace chanfuse {

std::string tap_name(Tap t) {
    switch (t) {
        case Tap::Hidden: return "hidden";
        case Tap::Output: return "output";
        case Tap::Input: return "input";
    }
    return "?";
}

Tap tap_from_name(const std::string& s) {
    if (s == "hidden") return Tap::Hidden;
    if (s == "output") return Tap::Output;
    if (s == "input") return Tap::Input;
    throw ConfigError("unknown tap '" + s + "'");
}

std::string level_name(FusionLevel l) {
    switch (l) {
        case FusionLevel::Elementary: return "elementary";
        case FusionLevel::Data: return "data";
        case FusionLevel::Feature: return "feature";
        case FusionLevel::Decision: return "decision";
        case FusionLevel::Hybrid: return "hybrid";
    }
    return "?";
}

FusionLevel level_from_name(const std::string& s) {
    if (s == "elementary") return FusionLevel::Elementary;
    if (s == "data") return FusionLevel::Data;
    if (s == "feature") return FusionLevel::Feature;
    if (s == "decision") return FusionLevel::Decision;
    if (s == "hybrid") return FusionLevel::Hybrid;
    throw ConfigError("unknown fusion level '" + s + "'");
}

const BranchSpec* WiringSpec::find_branch(const std::string& n) const {
    for (const BranchSpec& b : branches)
        if (b.name == n) return &b;
    return nullptr;
}

void WiringSpec::validate() const {
    static const std::set<std::string> kKnown = {"H", "L", "U", "P", "R", "S"};
    if (branches.empty()) throw ConfigError("wiring '" + name + "': no branches");
    std::set<std::string> seen;
    for (const BranchSpec& b : branches) {
        if (!kKnown.count(b.name))
            throw ConfigError("wiring '" + name + "': unknown branch '" + b.name + "'");
        if (!seen.insert(b.name).second)
            throw ConfigError("wiring '" + name + "': duplicate branch '" + b.name + "'");
    }
    if (stages.empty()) {
        if (branches.size() != 1)
            throw ConfigError("wiring '" + name + "': multiple branches need fusion stages");
        return;
    }
    std::set<std::string> stage_names;
    std::set<std::string> consumed;
    for (size_t k = 0; k < stages.size(); ++k) {
        const StageSpec& st = stages[k];
        if (st.name.empty() || !stage_names.insert(st.name).second)
            throw ConfigError("wiring '" + name + "': bad or duplicate stage name");
        if (st.inputs.empty())
            throw ConfigError("wiring '" + name + "': stage " + st.name + " has no inputs");
        for (const StageInput& in : st.inputs) {
            const BranchSpec* b = find_branch(in.producer);
            if (b) {
                if (in.tap != b->tap)
                    throw ConfigError("wiring '" + name + "': stage " + st.name + " taps " +
                                      in.producer + "." + tap_name(in.tap) +
                                      " but the branch declares tap " + tap_name(b->tap));
                if (!b->trainable && in.tap != Tap::Input)
                    throw ConfigError("wiring '" + name + "': non-trainable branch " + b->name +
                                      " can only contribute its input");
                consumed.insert(in.producer);
                continue;
            }
            bool earlier = false;
            for (size_t j = 0; j < k; ++j) earlier = earlier || stages[j].name == in.producer;
            if (!earlier)
                throw ConfigError("wiring '" + name + "': stage " + st.name +
                                  " references unknown producer '" + in.producer + "'");
            if (in.tap == Tap::Input)
                throw ConfigError("wiring '" + name + "': stages expose no input tap");
            consumed.insert(in.producer);
        }
    }
    for (const BranchSpec& b : branches)
        if (!consumed.count(b.name))
            throw ConfigError("wiring '" + name + "': branch " + b.name +
                              " is not consumed by any stage");
}

namespace {

BranchSpec br(const std::string& name, Tap tap, bool trainable = true) {
    return BranchSpec{name, tap, trainable};
}

WiringSpec elementary(const std::string& b) {
    WiringSpec w;
    w.name = "{" + b + "}";
    w.level = FusionLevel::Elementary;
    w.branches = {br(b, Tap::Output)};
    return w;
}

WiringSpec two_way(const std::string& a, const std::string& b, bool feature) {
    WiringSpec w;
    w.name = "{" + a + "," + b + "}_" + (feature ? "f" : "d");
    w.level = feature ? FusionLevel::Feature : FusionLevel::Decision;
    Tap t = feature ? Tap::Hidden : Tap::Output;
    w.branches = {br(a, t), br(b, t)};
    w.stages = {{"Fus1", {{a, t}, {b, t}}}};
    return w;
}

}  // namespace

std::vector<std::string> named_wirings() {
    return {"{H}",        "{L}",        "{U}",         "{P}",          "{R}",
            "{S}",        "{H,L}_d",    "{H,L}_f",     "{H,U}_d",      "{H,U}_f",
            "{L,U}_d",    "{L,U}_f",    "{H,L,U}_d",   "{H,L,U}_f",    "{H,L,U}_h1",
            "{H,L,U}_h2", "{P,H}",      "{P,H,U}",     "{P,H,L,U}",    "{R,H,U}",
            "{R,H,L}",    "{R,H,L,U}",  "{S,R}",       "{S,H}"};
}

WiringSpec wiring_preset(const std::string& name) {
    WiringSpec w;
    if (name == "{H}" || name == "{L}" || name == "{U}" || name == "{P}" || name == "{R}" ||
        name == "{S}") {
        w = elementary(name.substr(1, 1));
    } else if (name == "{H,L}_d") {
        w = two_way("H", "L", false);
    } else if (name == "{H,L}_f") {
        w = two_way("H", "L", true);
    } else if (name == "{H,U}_d") {
        w = two_way("H", "U", false);
    } else if (name == "{H,U}_f") {
        w = two_way("H", "U", true);
    } else if (name == "{L,U}_d") {
        w = two_way("L", "U", false);
    } else if (name == "{L,U}_f") {
        w = two_way("L", "U", true);
    } else if (name == "{H,L,U}_d") {
        w.level = FusionLevel::Decision;
        w.branches = {br("H", Tap::Output), br("L", Tap::Output), br("U", Tap::Output)};
        w.stages = {{"Fus1", {{"H", Tap::Output}, {"L", Tap::Output}, {"U", Tap::Output}}}};
    } else if (name == "{H,L,U}_f") {
        w.level = FusionLevel::Feature;
        w.branches = {br("H", Tap::Hidden), br("L", Tap::Hidden), br("U", Tap::Hidden)};
        w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"L", Tap::Hidden}, {"U", Tap::Hidden}}}};
    } else if (name == "{H,L,U}_h1") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("H", Tap::Hidden), br("U", Tap::Hidden), br("L", Tap::Hidden)};
        w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"U", Tap::Hidden}}},
                    {"Fus2", {{"Fus1", Tap::Output}, {"L", Tap::Hidden}}}};
    } else if (name == "{H,L,U}_h2") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("H", Tap::Hidden), br("U", Tap::Hidden), br("L", Tap::Hidden)};
        w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"U", Tap::Hidden}}},
                    {"Fus2", {{"Fus1", Tap::Hidden}, {"L", Tap::Hidden}}}};
    } else if (name == "{P,H}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("P", Tap::Output), br("H", Tap::Hidden)};
        w.stages = {{"Fus1", {{"P", Tap::Output}, {"H", Tap::Hidden}}}};
    } else if (name == "{P,H,U}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("P", Tap::Output), br("H", Tap::Hidden), br("U", Tap::Hidden)};
        w.stages = {{"Fus1", {{"P", Tap::Output}, {"H", Tap::Hidden}}},
                    {"Fus2", {{"Fus1", Tap::Output}, {"U", Tap::Hidden}}}};
    } else if (name == "{P,H,L,U}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("H", Tap::Hidden), br("U", Tap::Hidden), br("L", Tap::Hidden),
                      br("P", Tap::Output)};
        w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"U", Tap::Hidden}}},
                    {"Fus2", {{"Fus1", Tap::Hidden}, {"L", Tap::Hidden}}},
                    {"Fus3", {{"Fus2", Tap::Output}, {"P", Tap::Output}}}};
    } else if (name == "{R,H,U}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("R", Tap::Output), br("H", Tap::Hidden), br("U", Tap::Hidden)};
        w.stages = {{"Fus1", {{"R", Tap::Output}, {"H", Tap::Hidden}, {"U", Tap::Hidden}}}};
    } else if (name == "{R,H,L}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("R", Tap::Output), br("L", Tap::Output), br("H", Tap::Hidden)};
        w.stages = {{"Fus1", {{"R", Tap::Output}, {"L", Tap::Output}, {"H", Tap::Hidden}}}};
    } else if (name == "{R,H,L,U}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("H", Tap::Hidden), br("U", Tap::Hidden), br("L", Tap::Hidden),
                      br("R", Tap::Output)};
        w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"U", Tap::Hidden}}},
                    {"Fus2", {{"Fus1", Tap::Hidden}, {"L", Tap::Hidden}}},
                    {"Fus3", {{"Fus2", Tap::Output}, {"R", Tap::Output}}}};
    } else if (name == "{S,R}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("S", Tap::Input, false), br("R", Tap::Output)};
        w.stages = {{"Fus1", {{"S", Tap::Input}, {"R", Tap::Output}}}};
    } else if (name == "{S,H}") {
        w.level = FusionLevel::Hybrid;
        w.branches = {br("S", Tap::Output), br("H", Tap::Hidden)};
        w.stages = {{"Fus1", {{"S", Tap::Output}, {"H", Tap::Hidden}}}};
    } else {
        throw ConfigError("unknown wiring '" + name + "'");
    }
    if (w.name.empty()) w.name = name;
    w.validate();
    return w;
}

WiringSpec load_wiring(const std::string& path) {
    TextConfig cfg = TextConfig::parse_file(path);
    WiringSpec w;
    w.name = cfg.get_str("name");
    w.level = level_from_name(cfg.get_str("level"));
    for (const auto* e : cfg.find_all("branch")) {
        if (e->fields.size() < 2)
            throw ParseError(path, e->line, "branch needs '<name> <tap> [fixed]'");
        BranchSpec b;
        b.name = e->fields[0];
        b.tap = tap_from_name(e->fields[1]);
        b.trainable = !(e->fields.size() > 2 && e->fields[2] == "fixed");
        w.branches.push_back(b);
    }
    for (const auto* e : cfg.find_all("stage")) {
        if (e->fields.size() < 2)
            throw ParseError(path, e->line, "stage needs '<name> <producer.tap>...'");
        StageSpec st;
        st.name = e->fields[0];
        for (size_t i = 1; i < e->fields.size(); ++i) {
            const std::string& f = e->fields[i];
            size_t dot = f.rfind('.');
            if (dot == std::string::npos)
                throw ParseError(path, e->line, "stage input '" + f + "' must be producer.tap");
            st.inputs.push_back({f.substr(0, dot), tap_from_name(f.substr(dot + 1))});
        }
        w.stages.push_back(st);
    }
    w.validate();
    return w;
}

void save_wiring(const WiringSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write wiring file: " + path);
    out << "name = " << spec.name << "\n";
    out << "level = " << level_name(spec.level) << "\n";
    for (const BranchSpec& b : spec.branches) {
        out << "branch = " << b.name << " " << tap_name(b.tap);
        if (!b.trainable) out << " fixed";
        out << "\n";
    }
    for (const StageSpec& st : spec.stages) {
        out << "stage = " << st.name;
        for (const StageInput& in : st.inputs) out << " " << in.producer << "." << tap_name(in.tap);
        out << "\n";
    }
    if (!out) throw IoError("failed writing wiring file: " + path);
}

// ---- normalization ----------------------------------------------------------

void Standardizer::fit(const std::vector<double>& rows, int dim) {
    if (dim <= 0 || rows.size() % static_cast<size_t>(dim) != 0)
        throw ShapeError("standardizer: bad data layout");
    const size_t n = rows.size() / static_cast<size_t>(dim);
    if (n == 0) throw ShapeError("standardizer: no rows");
    mean.assign(static_cast<size_t>(dim), 0.0);
    inv_std.assign(static_cast<size_t>(dim), 1.0);
    for (size_t r = 0; r < n; ++r)
        for (int c = 0; c < dim; ++c) mean[static_cast<size_t>(c)] += rows[r * dim + c];
    for (double& v : mean) v /= static_cast<double>(n);
    std::vector<double> var(static_cast<size_t>(dim), 0.0);
    for (size_t r = 0; r < n; ++r)
        for (int c = 0; c < dim; ++c) {
            const double d = rows[r * dim + c] - mean[static_cast<size_t>(c)];
            var[static_cast<size_t>(c)] += d * d;
        }
    for (int c = 0; c < dim; ++c) {
        const double sd = std::sqrt(var[static_cast<size_t>(c)] / static_cast<double>(n));
        inv_std[static_cast<size_t>(c)] = sd > 1e-12 ? 1.0 / sd : 1.0;  // constant feature guard
    }
}

void Standardizer::apply(std::vector<double>& rows, int dim) const {
    if (!fitted()) return;
    if (static_cast<size_t>(dim) != mean.size()) throw ShapeError("standardizer: dim mismatch");
    const size_t n = rows.size() / static_cast<size_t>(dim);
    for (size_t r = 0; r < n; ++r)
        for (int c = 0; c < dim; ++c) {
            double& v = rows[r * dim + c];
            v = (v - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
        }
}

void Standardizer::invert_row(double* row, int dim) const {
    if (!fitted()) return;
    if (static_cast<size_t>(dim) != mean.size()) throw ShapeError("standardizer: dim mismatch");
    for (int c = 0; c < dim; ++c)
        row[c] = row[c] / inv_std[static_cast<size_t>(c)] + mean[static_cast<size_t>(c)];
}

GraphDims GraphDims::from_config(const DatasetConfig& cfg) {
    return {cfg.scene.num_antennas, cfg.m_fb, cfg.t_unit, cfg.t_p};
}

BranchHyper branch_hyper(const std::string& name) {
    BranchHyper h;
    if (name == "H") {
        h.lstm = {256, 256};
        h.lr = 5e-4;
    } else if (name == "L") {
        h.dense = {256, 256, 256, 256};
        h.lr = 1e-4;
    } else if (name == "U") {
        h.dense = {256, 256, 256};
        h.lr = 1e-3;
    } else if (name == "P") {
        h.dense = {256, 256, 256};
        h.lr = 5e-4;
    } else if (name == "R") {
        h.dense = {256, 128, 128};
        h.conv_filters = {16, 32, 8};
        h.conv_kernel = 5;
        h.lr = 5e-4;
    } else if (name == "S") {
        h.dense = {256};
        h.lr = 5e-4;
    } else if (name == "Fus") {
        h.dense = {512, 512, 256};
        h.lr = 5e-4;
    } else {
        throw ConfigError("unknown branch '" + name + "'");
    }
    return h;
}

// ---- realized nets ----------------------------------------------------------

FusNet::Out FusNet::forward(const nn::Tensor& x) const {
    nn::Tensor h = x;
    nn::Tensor tap;
    for (size_t i = 0; i < hidden.size(); ++i) {
        h = nn::leaky_relu(hidden[i].forward(h));
        if (static_cast<int>(i) == tap_index) tap = h;
    }
    return {out.forward(h), tap};
}

void FusNet::collect(const std::string& prefix, std::vector<nn::NamedParam>& params) const {
    for (size_t i = 0; i < hidden.size(); ++i)
        hidden[i].collect(prefix + "/hidden" + std::to_string(i), params);
    out.collect(prefix + "/out", params);
}

namespace {

int middle_index(size_t n_layers) { return static_cast<int>((n_layers - 1) / 2); }

FusNet make_fus_net(int input_dim, int output_dim, std::mt19937_64& rng) {
    BranchHyper h = branch_hyper("Fus");
    FusNet f;
    int cur = input_dim;
    for (int width : h.dense) {
        f.hidden.push_back(nn::make_dense(cur, width, rng));
        cur = width;
    }
    f.out = nn::make_dense(cur, output_dim, rng);
    f.tap_index = middle_index(h.dense.size());
    return f;
}

}  // namespace

BranchNet BranchNet::build(const std::string& name, const GraphDims& dims, std::mt19937_64& rng) {
    if (dims.m < 1) throw ConfigError("branch " + name + ": M must be >= 1");
    BranchNet net;
    net.name_ = name;
    net.dims_ = dims;
    BranchHyper hyper = branch_hyper(name);
    net.lr_ = hyper.lr;
    const int out2m = 2 * dims.m;

    if (name == "H") {
        if (dims.t_unit < 1) throw ConfigError("branch H: t_unit must be >= 1");
        net.kind_ = Kind::Lstm;
        net.input_dim_ = dims.t_unit * out2m;
        net.output_dim_ = out2m;
        int cur = out2m;
        for (int width : hyper.lstm) {
            net.lstm_.push_back(nn::make_lstm(cur, width, rng));
            cur = width;
        }
        net.hidden_tap_ = middle_index(hyper.lstm.size());
        net.hidden_dim_ = hyper.lstm[static_cast<size_t>(net.hidden_tap_)];
        net.out_ = nn::make_dense(cur, out2m, rng);
        return net;
    }
    if (name == "R") {
        net.kind_ = Kind::Rx;
        if (dims.t_p < 1) throw ConfigError("branch R: t_p must be >= 1");
        net.input_dim_ = 2 * dims.t_p;
        net.output_dim_ = out2m;
        int cur = net.input_dim_;
        for (int width : hyper.dense) {
            net.dense_.push_back(nn::make_dense(cur, width, rng));
            cur = width;
        }
        int ch = 2, sh = dims.m, sw = dims.t_p;
        for (int filters : hyper.conv_filters) {
            net.conv_.push_back(nn::make_conv2d(ch, filters, hyper.conv_kernel, rng));
            ch = filters;
            if (sh < 2 || sw < 2)
                throw ConfigError("branch R: pilot image too small for the pooling chain");
            sh /= 2;
            sw /= 2;
        }
        net.conv_flat_dim_ = ch * sh * sw;
        net.fus0_ = make_fus_net(cur + net.conv_flat_dim_, out2m, rng);
        net.hidden_tap_ = net.fus0_.tap_index;
        net.hidden_dim_ = net.fus0_.hidden[static_cast<size_t>(net.fus0_.tap_index)].n_out;
        return net;
    }

    // plain dense stacks: L, U, P, S
    net.kind_ = Kind::Dense;
    if (name == "L") {
        net.input_dim_ = 3;
        net.output_dim_ = out2m;
    } else if (name == "U") {
        net.input_dim_ = out2m;
        net.output_dim_ = out2m;
    } else if (name == "S") {
        net.input_dim_ = out2m;
        net.output_dim_ = out2m;
    } else if (name == "P") {
        if (dims.m_fb < 1 || dims.m_fb >= dims.m)
            throw ConfigError("branch P: needs 1 <= m_fb < M, got m_fb=" +
                              std::to_string(dims.m_fb));
        net.input_dim_ = 2 * dims.m_fb;
        net.output_dim_ = 2 * (dims.m - dims.m_fb);
    } else {
        throw ConfigError("unknown branch '" + name + "'");
    }
    int cur = net.input_dim_;
    for (int width : hyper.dense) {
        net.dense_.push_back(nn::make_dense(cur, width, rng));
        cur = width;
    }
    net.hidden_tap_ = middle_index(hyper.dense.size());
    net.hidden_dim_ = hyper.dense[static_cast<size_t>(net.hidden_tap_)];
    net.out_ = nn::make_dense(cur, net.output_dim_, rng);
    return net;
}

BranchNet::Out BranchNet::forward(const BranchBatch& in) const {
    if (kind_ == Kind::Lstm) {
        if (in.steps.size() != static_cast<size_t>(dims_.t_unit))
            throw ShapeError("branch H: expected " + std::to_string(dims_.t_unit) + " step inputs");
        std::vector<nn::Tensor> seq = in.steps;
        nn::Tensor tap;
        for (size_t l = 0; l < lstm_.size(); ++l) {
            seq = lstm_[l].forward(seq);
            if (static_cast<int>(l) == hidden_tap_) tap = seq.back();
        }
        return {out_.forward(seq.back()), tap};
    }
    if (kind_ == Kind::Rx) {
        nn::Tensor d = in.flat;
        for (const auto& layer : dense_) d = nn::leaky_relu(layer.forward(d));
        nn::Tensor c = in.conv;
        for (const auto& layer : conv_) c = nn::avg_pool2(nn::leaky_relu(layer.forward(c)));
        c = nn::reshape(c, {c.shape()[0], conv_flat_dim_});
        FusNet::Out merged = fus0_.forward(nn::concat_cols({d, c}));
        return {merged.output, merged.hidden};
    }
    nn::Tensor h = in.flat;
    nn::Tensor tap;
    for (size_t i = 0; i < dense_.size(); ++i) {
        h = nn::leaky_relu(dense_[i].forward(h));
        if (static_cast<int>(i) == hidden_tap_) tap = h;
    }
    return {out_.forward(h), tap};
}

std::vector<nn::NamedParam> BranchNet::params(const std::string& prefix) const {
    std::vector<nn::NamedParam> out;
    for (size_t i = 0; i < dense_.size(); ++i)
        dense_[i].collect(prefix + "/dense" + std::to_string(i), out);
    for (size_t i = 0; i < lstm_.size(); ++i)
        lstm_[i].collect(prefix + "/lstm" + std::to_string(i), out);
    for (size_t i = 0; i < conv_.size(); ++i)
        conv_[i].collect(prefix + "/conv" + std::to_string(i), out);
    if (kind_ == Kind::Rx)
        fus0_.collect(prefix + "/fus0", out);
    else
        out_.collect(prefix + "/out", out);
    return out;
}

std::vector<nn::LayerSpec> BranchNet::layer_specs() const {
    std::vector<nn::LayerSpec> specs;
    for (const auto& l : dense_) specs.push_back(nn::LayerSpec::dense(l.n_in, l.n_out));
    for (const auto& l : lstm_)
        specs.push_back(nn::LayerSpec::lstm(dims_.t_unit, l.n_in, l.n_out));
    int sh = dims_.m, sw = dims_.t_p;
    for (const auto& l : conv_) {
        specs.push_back(nn::LayerSpec::conv(static_cast<int64_t>(sh) * sw,
                                            static_cast<int64_t>(l.k) * l.k, l.c_in, l.c_out));
        sh /= 2;
        sw /= 2;
    }
    if (kind_ == Kind::Rx) {
        for (const auto& l : fus0_.hidden) specs.push_back(nn::LayerSpec::dense(l.n_in, l.n_out));
        specs.push_back(nn::LayerSpec::dense(fus0_.out.n_in, fus0_.out.n_out));
    } else {
        specs.push_back(nn::LayerSpec::dense(out_.n_in, out_.n_out));
    }
    return specs;
}

// ---- fusion graph -----------------------------------------------------------

FusionGraph::FusionGraph(WiringSpec spec, GraphDims dims, uint64_t seed)
    : spec_(std::move(spec)), dims_(dims), seed_(seed) {
    spec_.validate();
    for (size_t i = 0; i < spec_.branches.size(); ++i) {
        std::mt19937_64 rng(derive_seed(seed_, 100 + i, 0));
        branches_.push_back(BranchNet::build(spec_.branches[i].name, dims_, rng));
    }
    for (size_t k = 0; k < spec_.stages.size(); ++k) {
        int in_dim = 0;
        for (const StageInput& in : spec_.stages[k].inputs) in_dim += tap_dim(in);
        std::mt19937_64 rng(derive_seed(seed_, 200 + k, 0));
        stages_.push_back(make_fus_net(in_dim, 2 * dims_.m, rng));
    }
}

const BranchNet& FusionGraph::branch(const std::string& name) const {
    for (const BranchNet& b : branches_)
        if (b.name() == name) return b;
    throw ConfigError("graph has no branch '" + name + "'");
}

int FusionGraph::output_dim() const {
    if (!stages_.empty()) return 2 * dims_.m;
    return branches_.front().output_dim();
}

int FusionGraph::tap_dim(const StageInput& input) const {
    if (spec_.find_branch(input.producer)) {
        const BranchNet& b = branch(input.producer);
        switch (input.tap) {
            case Tap::Output: return b.output_dim();
            case Tap::Hidden: return b.hidden_dim();
            case Tap::Input: return b.input_dim();
        }
    }
    for (size_t k = 0; k < spec_.stages.size(); ++k) {
        if (spec_.stages[k].name != input.producer) continue;
        if (input.tap == Tap::Output) return 2 * dims_.m;
        if (input.tap == Tap::Hidden)
            return stages_[k].hidden[static_cast<size_t>(stages_[k].tap_index)].n_out;
        throw ConfigError("stages expose no input tap");
    }
    throw ConfigError("unknown producer '" + input.producer + "'");
}

FusionGraph::Forward FusionGraph::forward(const GraphBatch& batch) const {
    Forward fwd;
    for (const BranchNet& b : branches_) {
        auto it = batch.branches.find(b.name());
        if (it == batch.branches.end())
            throw MissingModalityError("batch missing inputs for branch " + b.name());
        fwd.branches[b.name()] = b.forward(it->second);
    }
    for (size_t k = 0; k < stages_.size(); ++k) {
        std::vector<nn::Tensor> ins;
        for (const StageInput& in : spec_.stages[k].inputs) {
            if (spec_.find_branch(in.producer)) {
                const auto& bout = fwd.branches.at(in.producer);
                if (in.tap == Tap::Output) {
                    ins.push_back(bout.output);
                } else if (in.tap == Tap::Hidden) {
                    ins.push_back(bout.hidden);
                } else {
                    ins.push_back(batch.branches.at(in.producer).flat);
                }
            } else {
                for (size_t j = 0; j < k; ++j) {
                    if (spec_.stages[j].name != in.producer) continue;
                    ins.push_back(in.tap == Tap::Output ? fwd.stages[j].output
                                                        : fwd.stages[j].hidden);
                }
            }
        }
        fwd.stages.push_back(stages_[k].forward(nn::concat_cols(ins)));
    }
    fwd.terminal = stages_.empty() ? fwd.branches.at(branches_.front().name()).output
                                   : fwd.stages.back().output;
    return fwd;
}

namespace {

void append_xi(std::vector<double>& row, const std::vector<cxd>& z) {
    for (const cxd& v : z) row.push_back(v.real());
    for (const cxd& v : z) row.push_back(v.imag());
}

// raw (unstandardized) main input of one branch
std::vector<double> raw_flat(const std::string& branch, const Sample& s, const GraphDims& dims) {
    std::vector<double> row;
    if (branch == "H") {
        row.reserve(static_cast<size_t>(dims.t_unit) * 2 * dims.m);
        if (static_cast<int>(s.prev_channels.size()) != dims.t_unit)
            throw ShapeError("sample history length does not match graph t_unit");
        for (const ChannelVector& h : s.prev_channels) append_xi(row, h.entries);
    } else if (branch == "L") {
        row = {s.location.x, s.location.y, s.location.z};
    } else if (branch == "U") {
        append_xi(row, s.uplink.entries);
    } else if (branch == "P") {
        if (static_cast<int>(s.partial_known.size()) != dims.m_fb)
            throw ShapeError("sample partial known length does not match graph m_fb");
        append_xi(row, s.partial_known);
    } else if (branch == "R") {
        std::vector<cxd> r(s.rx.r.data(), s.rx.r.data() + s.rx.r.cols());
        append_xi(row, r);
    } else if (branch == "S") {
        if (!s.ls_est)
            throw MissingModalityError(
                "branch S needs the LS-estimate modality (requires T_p >= M)");
        append_xi(row, s.ls_est->entries);
    } else {
        throw ConfigError("unknown branch '" + branch + "'");
    }
    return row;
}

// pilot image: channel 0 = real part, channel 1 = imaginary part, M x T_p
std::vector<double> raw_conv(const Sample& s) {
    const int m = s.pilots.m(), t_p = s.pilots.t_p();
    std::vector<double> img;
    img.reserve(static_cast<size_t>(2 * m * t_p));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < t_p; ++j) img.push_back(s.pilots.s(i, j).real());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < t_p; ++j) img.push_back(s.pilots.s(i, j).imag());
    return img;
}

std::vector<int> all_rows(size_t n) {
    std::vector<int> rows(n);
    for (size_t i = 0; i < n; ++i) rows[i] = static_cast<int>(i);
    return rows;
}

}  // namespace

BranchBatch FusionGraph::make_branch_batch(const std::string& branch,
                                           const std::vector<Sample>& set,
                                           const std::vector<int>& rows) const {
    const BranchNet& net = this->branch(branch);
    const int n = static_cast<int>(rows.size());
    const int d = net.input_dim();
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(n) * d);
    for (int r : rows) {
        std::vector<double> row = raw_flat(branch, set[static_cast<size_t>(r)], dims_);
        if (static_cast<int>(row.size()) != d)
            throw ShapeError("branch " + branch + ": sample input width " +
                             std::to_string(row.size()) + " does not match the graph (" +
                             std::to_string(d) + ")");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    auto norm_it = norms_.find(branch);
    if (norm_it != norms_.end()) norm_it->second.apply(flat, d);

    BranchBatch batch;
    if (net.kind() == BranchNet::Kind::Lstm) {
        const int step = 2 * dims_.m;
        for (int t = 0; t < dims_.t_unit; ++t) {
            std::vector<double> s(static_cast<size_t>(n) * step);
            for (int r = 0; r < n; ++r)
                std::copy(flat.begin() + static_cast<size_t>(r) * d + t * step,
                          flat.begin() + static_cast<size_t>(r) * d + (t + 1) * step,
                          s.begin() + static_cast<size_t>(r) * step);
            batch.steps.push_back(nn::Tensor::from_values({n, step}, std::move(s)));
        }
    }
    batch.flat = nn::Tensor::from_values({n, d}, std::move(flat));
    if (net.kind() == BranchNet::Kind::Rx) {
        std::vector<double> img;
        img.reserve(static_cast<size_t>(n) * 2 * dims_.m * dims_.t_p);
        for (int r : rows) {
            std::vector<double> one = raw_conv(set[static_cast<size_t>(r)]);
            img.insert(img.end(), one.begin(), one.end());
        }
        auto conv_norm = norms_.find("R.conv");
        if (conv_norm != norms_.end()) conv_norm->second.apply(img, 2 * dims_.m * dims_.t_p);
        batch.conv = nn::Tensor::from_values({n, 2, dims_.m, dims_.t_p}, std::move(img));
    }
    return batch;
}

GraphBatch FusionGraph::make_batch(const std::vector<Sample>& set,
                                   const std::vector<int>& rows) const {
    GraphBatch batch;
    batch.rows = static_cast<int>(rows.size());
    for (const BranchNet& b : branches_)
        batch.branches[b.name()] = make_branch_batch(b.name(), set, rows);
    return batch;
}

nn::Tensor FusionGraph::make_labels(const std::vector<Sample>& set, const std::vector<int>& rows,
                                    bool p_label) const {
    const int d = p_label ? 2 * (dims_.m - dims_.m_fb) : 2 * dims_.m;
    std::vector<double> data;
    data.reserve(rows.size() * static_cast<size_t>(d));
    for (int r : rows) {
        const Sample& s = set[static_cast<size_t>(r)];
        std::vector<double> row;
        if (p_label)
            append_xi(row, s.partial_unknown);
        else
            append_xi(row, s.label.entries);
        if (static_cast<int>(row.size()) != d) throw ShapeError("label width mismatch");
        data.insert(data.end(), row.begin(), row.end());
    }
    auto it = norms_.find(p_label ? "label_p" : "label");
    if (it != norms_.end()) it->second.apply(data, d);
    return nn::Tensor::from_values({static_cast<int>(rows.size()), d}, std::move(data));
}

void FusionGraph::fit_normalizers(const std::vector<Sample>& train_set) {
    if (train_set.empty()) throw ConfigError("fit_normalizers: empty training set");
    std::vector<int> rows = all_rows(train_set.size());
    bool has_p = false;
    for (const BranchNet& b : branches_) {
        const int d = b.input_dim();
        std::vector<double> flat;
        flat.reserve(rows.size() * static_cast<size_t>(d));
        for (int r : rows) {
            std::vector<double> row = raw_flat(b.name(), train_set[static_cast<size_t>(r)], dims_);
            flat.insert(flat.end(), row.begin(), row.end());
        }
        norms_[b.name()].fit(flat, d);
        if (b.kind() == BranchNet::Kind::Rx) {
            const int cd = 2 * dims_.m * dims_.t_p;
            std::vector<double> img;
            img.reserve(rows.size() * static_cast<size_t>(cd));
            for (int r : rows) {
                std::vector<double> one = raw_conv(train_set[static_cast<size_t>(r)]);
                img.insert(img.end(), one.begin(), one.end());
            }
            norms_["R.conv"].fit(img, cd);
        }
        if (b.name() == "P") has_p = true;
    }
    {
        const int d = 2 * dims_.m;
        std::vector<double> labels;
        labels.reserve(rows.size() * static_cast<size_t>(d));
        for (int r : rows) {
            std::vector<double> row;
            append_xi(row, train_set[static_cast<size_t>(r)].label.entries);
            labels.insert(labels.end(), row.begin(), row.end());
        }
        norms_["label"].fit(labels, d);
    }
    if (has_p) {
        const int d = 2 * (dims_.m - dims_.m_fb);
        std::vector<double> labels;
        labels.reserve(rows.size() * static_cast<size_t>(d));
        for (int r : rows) {
            std::vector<double> row;
            append_xi(row, train_set[static_cast<size_t>(r)].partial_unknown);
            labels.insert(labels.end(), row.begin(), row.end());
        }
        norms_["label_p"].fit(labels, d);
    }
}

std::vector<nn::NamedParam> FusionGraph::branch_params(const std::string& name) const {
    return branch(name).params("branch/" + name);
}

std::vector<nn::NamedParam> FusionGraph::stage_params(size_t i) const {
    std::vector<nn::NamedParam> out;
    stages_[i].collect("stage/" + spec_.stages[i].name, out);
    return out;
}

std::vector<nn::NamedParam> FusionGraph::all_params() const {
    std::vector<nn::NamedParam> out;
    for (const BranchNet& b : branches_) {
        auto p = b.params("branch/" + b.name());
        out.insert(out.end(), p.begin(), p.end());
    }
    for (size_t i = 0; i < stages_.size(); ++i) {
        auto p = stage_params(i);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<nn::LayerSpec> FusionGraph::layer_specs() const {
    std::vector<nn::LayerSpec> specs;
    for (const BranchNet& b : branches_) {
        auto s = b.layer_specs();
        specs.insert(specs.end(), s.begin(), s.end());
    }
    for (const FusNet& f : stages_) {
        for (const auto& l : f.hidden) specs.push_back(nn::LayerSpec::dense(l.n_in, l.n_out));
        specs.push_back(nn::LayerSpec::dense(f.out.n_in, f.out.n_out));
    }
    return specs;
}

int64_t graph_flops(const FusionGraph& graph) {
    int64_t total = 0;
    for (const nn::LayerSpec& s : graph.layer_specs()) total += nn::flop_count(s);
    return total;
}

void FusionGraph::save(const std::string& path, const std::string& dtype) const {
    nn::Checkpoint ckpt;
    for (const nn::NamedParam& p : all_params()) ckpt.put(p.name, p.tensor);
    for (const auto& [key, norm] : norms_) {
        if (!norm.fitted()) continue;
        ckpt.tensors["norm/" + key + "/mean"] = {{static_cast<int>(norm.mean.size())}, norm.mean};
        ckpt.tensors["norm/" + key + "/inv_std"] = {{static_cast<int>(norm.inv_std.size())},
                                                    norm.inv_std};
    }
    nlohmann::json meta;
    meta["wiring"] = {{"name", spec_.name}, {"level", level_name(spec_.level)}};
    nlohmann::json branches = nlohmann::json::array();
    for (const BranchSpec& b : spec_.branches)
        branches.push_back(
            {{"name", b.name}, {"tap", tap_name(b.tap)}, {"trainable", b.trainable}});
    meta["wiring"]["branches"] = branches;
    nlohmann::json stages = nlohmann::json::array();
    for (const StageSpec& st : spec_.stages) {
        nlohmann::json inputs = nlohmann::json::array();
        for (const StageInput& in : st.inputs) inputs.push_back(in.producer + "." + tap_name(in.tap));
        stages.push_back({{"name", st.name}, {"inputs", inputs}});
    }
    meta["wiring"]["stages"] = stages;
    meta["dims"] = {{"m", dims_.m}, {"m_fb", dims_.m_fb}, {"t_unit", dims_.t_unit},
                    {"t_p", dims_.t_p}};
    meta["seed"] = seed_;
    nn::Checkpoint final = std::move(ckpt);
    final.meta_json = meta.dump();
    nn::save_checkpoint(final, path, dtype);
}

FusionGraph FusionGraph::from_checkpoint(const std::string& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    nlohmann::json meta = nlohmann::json::parse(ckpt.meta_json);
    WiringSpec spec;
    spec.name = meta.at("wiring").at("name");
    spec.level = level_from_name(meta.at("wiring").at("level"));
    for (const auto& b : meta.at("wiring").at("branches"))
        spec.branches.push_back(
            {b.at("name"), tap_from_name(b.at("tap")), b.at("trainable").get<bool>()});
    for (const auto& st : meta.at("wiring").at("stages")) {
        StageSpec stage;
        stage.name = st.at("name");
        for (const auto& in : st.at("inputs")) {
            std::string f = in;
            size_t dot = f.rfind('.');
            stage.inputs.push_back({f.substr(0, dot), tap_from_name(f.substr(dot + 1))});
        }
        spec.stages.push_back(stage);
    }
    GraphDims dims{meta.at("dims").at("m"), meta.at("dims").at("m_fb"),
                   meta.at("dims").at("t_unit"), meta.at("dims").at("t_p")};
    FusionGraph graph(std::move(spec), dims, meta.at("seed"));
    for (nn::NamedParam& p : graph.all_params()) {
        auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end()) throw IoError("checkpoint: missing tensor " + p.name);
        if (it->second.shape != p.tensor.shape())
            throw IoError("checkpoint: shape mismatch for " + p.name);
        p.tensor.mutable_values() = it->second.data;
    }
    for (auto& [key, entry] : ckpt.tensors) {
        if (key.rfind("norm/", 0) != 0) continue;
        const size_t slash = key.rfind('/');
        const std::string norm_key = key.substr(5, slash - 5);
        const std::string field = key.substr(slash + 1);
        Standardizer& norm = graph.norms_[norm_key];
        if (field == "mean")
            norm.mean = entry.data;
        else if (field == "inv_std")
            norm.inv_std = entry.data;
    }
    return graph;
}

}  // namespace chanfuse
