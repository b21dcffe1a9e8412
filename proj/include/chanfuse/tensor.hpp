#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "chanfuse/common.hpp"

namespace chanfuse::nn {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One node of the recorded computation. Tensors are shared handles to nodes;
// a forward pass builds a DAG, backward() walks it in reverse topological
// order. Gradients accumulate until an optimizer step consumes them.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // scatter this->grad into parents
    const char* op = "leaf";

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad();
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    std::shared_ptr<Node> node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

// ---- differentiable operations ------------------------------------------

/// x (N,K) * w(O,K)^T + b(O), the affine layer primitive.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);       // same shape
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor concat_cols(const std::vector<Tensor>& ts);  // all (N, d_i) -> (N, sum d_i)
Tensor reshape(const Tensor& x, Shape new_shape);

Tensor leaky_relu(const Tensor& x);  // slope 0.2 on the negative side
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);

/// Cross-correlation with zero "same" padding, stride 1, odd square kernels.
/// x (N,C,H,W), w (F,C,K,K), b (F) -> (N,F,H,W).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

/// 2x2 window, stride 2; trailing odd row/column is dropped.
Tensor avg_pool2(const Tensor& x);

/// Mean over the batch of squared L2 prediction errors; throws
/// NonFiniteLossError if the result is not finite.
Tensor mse_loss(const Tensor& pred, const Tensor& label);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node with requires_grad set.
void backward(const Tensor& loss);

}  // namespace chanfuse::nn
