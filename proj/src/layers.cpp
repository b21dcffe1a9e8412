#include "chanfuse/layers.hpp"

#include <cmath>

namespace chanfuse::nn {

namespace {

Tensor uniform_param(Shape shape, double limit, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> vals(static_cast<size_t>(numel(shape)));
    for (double& v : vals) v = dist(rng);
    return Tensor::from_values(std::move(shape), std::move(vals), true);
}

double glorot_limit(int64_t fan_in, int64_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

void DenseLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + "/w", w});
    out.push_back({prefix + "/b", b});
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + "/w", w});
    out.push_back({prefix + "/b", b});
}

void LstmLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + "/wi", wi});
    out.push_back({prefix + "/wf", wf});
    out.push_back({prefix + "/wo", wo});
    out.push_back({prefix + "/wg", wg});
    out.push_back({prefix + "/bi", bi});
    out.push_back({prefix + "/bf", bf});
    out.push_back({prefix + "/bo", bo});
    out.push_back({prefix + "/bg", bg});
}

std::vector<Tensor> LstmLayer::forward(const std::vector<Tensor>& xs) const {
    if (xs.empty()) throw ShapeError("lstm: empty input sequence");
    const int batch = xs.front().shape()[0];
    for (const Tensor& x : xs)
        if (x.shape().size() != 2 || x.shape()[0] != batch || x.shape()[1] != n_in)
            throw ShapeError("lstm: every step input must be (batch, n_in)");

    Tensor y_prev = Tensor::zeros({batch, n_out});
    Tensor g_prev = Tensor::zeros({batch, n_out});
    std::vector<Tensor> outputs;
    outputs.reserve(xs.size());
    for (const Tensor& x : xs) {
        Tensor z = concat_cols({y_prev, x});
        Tensor gate_i = sigmoid(linear(z, wi, bi));
        Tensor gate_f = sigmoid(linear(z, wf, bf));
        Tensor gate_o = sigmoid(linear(z, wo, bo));
        Tensor cand = tanh_op(linear(z, wg, bg));
        Tensor g = add(mul(gate_f, g_prev), mul(gate_i, cand));
        Tensor y = mul(gate_o, tanh_op(g));
        outputs.push_back(y);
        y_prev = y;
        g_prev = g;
    }
    return outputs;
}

DenseLayer make_dense(int n_in, int n_out, std::mt19937_64& rng) {
    DenseLayer l;
    l.n_in = n_in;
    l.n_out = n_out;
    l.w = uniform_param({n_out, n_in}, glorot_limit(n_in, n_out), rng);
    l.b = Tensor::zeros({n_out}, true);
    return l;
}

Conv2dLayer make_conv2d(int c_in, int c_out, int k, std::mt19937_64& rng) {
    Conv2dLayer l;
    l.c_in = c_in;
    l.c_out = c_out;
    l.k = k;
    l.w = uniform_param({c_out, c_in, k, k},
                        glorot_limit(static_cast<int64_t>(c_in) * k * k,
                                     static_cast<int64_t>(c_out) * k * k),
                        rng);
    l.b = Tensor::zeros({c_out}, true);
    return l;
}

LstmLayer make_lstm(int n_in, int n_out, std::mt19937_64& rng) {
    LstmLayer l;
    l.n_in = n_in;
    l.n_out = n_out;
    const int z = n_out + n_in;
    const double lim = glorot_limit(z, n_out);
    l.wi = uniform_param({n_out, z}, lim, rng);
    l.wf = uniform_param({n_out, z}, lim, rng);
    l.wo = uniform_param({n_out, z}, lim, rng);
    l.wg = uniform_param({n_out, z}, lim, rng);
    l.bi = Tensor::zeros({n_out}, true);
    l.bf = Tensor::full({n_out}, 1.0, true);
    l.bo = Tensor::zeros({n_out}, true);
    l.bg = Tensor::zeros({n_out}, true);
    return l;
}

void set_trainable(std::vector<NamedParam>& params, bool trainable) {
    for (NamedParam& p : params) p.tensor.set_requires_grad(trainable);
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    if (learning_rate <= 0.0) throw ConfigError("adam: learning rate must be > 0");
}

void Adam::register_params(const std::vector<NamedParam>& params) {
    for (const NamedParam& p : params) {
        if (!p.tensor.requires_grad()) continue;  // frozen
        Slot slot;
        slot.param = p.tensor;
        slot.m.assign(p.tensor.values().size(), 0.0);
        slot.v.assign(p.tensor.values().size(), 0.0);
        slots_.push_back(std::move(slot));
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (Slot& slot : slots_) {
        if (!slot.param.requires_grad()) continue;  // frozen after registration
        if (!slot.param.has_grad())
            throw MissingGradientError("adam: step() before backward() populated a gradient");
        const std::vector<double>& g = slot.param.grad();
        std::vector<double>& p = slot.param.mutable_values();
        for (size_t i = 0; i < p.size(); ++i) {
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        slot.param.clear_grad();
    }
}

LayerSpec LayerSpec::dense(int64_t n_in, int64_t n_out) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.n_in = n_in;
    s.n_out = n_out;
    return s;
}

LayerSpec LayerSpec::lstm(int64_t t_unit, int64_t n_in, int64_t n_out) {
    LayerSpec s;
    s.kind = Kind::Lstm;
    s.t_unit = t_unit;
    s.n_in = n_in;
    s.n_out = n_out;
    return s;
}

LayerSpec LayerSpec::conv(int64_t spatial_in, int64_t kernel_elems, int64_t filters_in,
                          int64_t filters_out) {
    LayerSpec s;
    s.kind = Kind::Conv;
    s.spatial_in = spatial_in;
    s.kernel_elems = kernel_elems;
    s.filters_in = filters_in;
    s.filters_out = filters_out;
    return s;
}

int64_t flop_count(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerSpec::Kind::Dense:
            if (spec.n_in <= 0 || spec.n_out <= 0)
                throw ConfigError("flop_count: unresolved dense dims");
            return spec.n_in * spec.n_out;
        case LayerSpec::Kind::Lstm:
            if (spec.n_in <= 0 || spec.n_out <= 0 || spec.t_unit <= 0)
                throw ConfigError("flop_count: unresolved lstm dims");
            return 4 * spec.t_unit * spec.n_in * spec.n_out;
        case LayerSpec::Kind::Conv:
            if (spec.spatial_in <= 0 || spec.kernel_elems <= 0 || spec.filters_in <= 0 ||
                spec.filters_out <= 0)
                throw ConfigError("flop_count: unresolved conv dims");
            return spec.spatial_in * spec.kernel_elems * spec.filters_in * spec.filters_out;
    }
    throw ConfigError("flop_count: unknown layer kind");
}

}  // namespace chanfuse::nn
