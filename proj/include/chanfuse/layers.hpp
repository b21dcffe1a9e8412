#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "chanfuse/tensor.hpp"

namespace chanfuse::nn {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct DenseLayer {
    Tensor w;  // (n_out, n_in)
    Tensor b;  // (n_out)
    int n_in = 0, n_out = 0;

    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Conv2dLayer {
    Tensor w;  // (filters_out, filters_in, k, k)
    Tensor b;  // (filters_out)
    int c_in = 0, c_out = 0, k = 0;

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Gated recurrent layer; processes a sequence of (batch, n_in) inputs and
/// returns all per-step outputs. State starts at zero.
struct LstmLayer {
    Tensor wi, wf, wo, wg;  // (n_out, n_out + n_in); gate input is [y_prev, x]
    Tensor bi, bf, bo, bg;  // (n_out)
    int n_in = 0, n_out = 0;

    std::vector<Tensor> forward(const std::vector<Tensor>& xs) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Seeded uniform Glorot-style initialization; LSTM forget gate bias starts at +1.
DenseLayer make_dense(int n_in, int n_out, std::mt19937_64& rng);
Conv2dLayer make_conv2d(int c_in, int c_out, int k, std::mt19937_64& rng);
LstmLayer make_lstm(int n_in, int n_out, std::mt19937_64& rng);

void set_trainable(std::vector<NamedParam>& params, bool trainable);

/// Bias-corrected adaptive-moment optimizer. step() consumes the gradients it
/// applies; calling it again without a fresh backward() raises
/// MissingGradientError. Frozen (requires_grad == false) tensors are never
/// touched.
class Adam {
  public:
    Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    void register_params(const std::vector<NamedParam>& params);
    void step();
    int64_t steps_taken() const { return step_count_; }
    double learning_rate() const { return lr_; }

  private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<Slot> slots_;
};

// ---- complexity accounting -------------------------------------------------

struct LayerSpec {
    enum class Kind { Dense, Conv, Lstm };
    Kind kind = Kind::Dense;
    int64_t n_in = 0, n_out = 0;  // dense / lstm
    int64_t t_unit = 0;           // lstm
    int64_t spatial_in = 0;       // conv: input positions per channel
    int64_t kernel_elems = 0;     // conv: k*k
    int64_t filters_in = 0, filters_out = 0;

    static LayerSpec dense(int64_t n_in, int64_t n_out);
    static LayerSpec lstm(int64_t t_unit, int64_t n_in, int64_t n_out);
    static LayerSpec conv(int64_t spatial_in, int64_t kernel_elems, int64_t filters_in,
                          int64_t filters_out);
};

/// Leading-term operation count of one layer:
/// dense n_in*n_out, conv spatial*k^2*f_in*f_out, lstm 4*T*n_in*n_out.
int64_t flop_count(const LayerSpec& spec);

}  // namespace chanfuse::nn
