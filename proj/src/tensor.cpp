#include "chanfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace chanfuse::nn {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

void Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("tensor: value count does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(numel(shape)), fill);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

namespace {

// --- dense kernels; fixed accumulation order keeps results bit-reproducible ---

// c (m x n) = a (m x k) * b (n x k)^T
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
    constexpr int kLanes = 8;
    for (int i = 0; i < m; ++i) {
        const double* pa = a + static_cast<size_t>(i) * k;
        double* pc = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* pb = b + static_cast<size_t>(j) * k;
            double acc[kLanes] = {0.0};
            int kk = 0;
            for (; kk + kLanes <= k; kk += kLanes)
                for (int u = 0; u < kLanes; ++u) acc[u] += pa[kk + u] * pb[kk + u];
            double tail = 0.0;
            for (; kk < k; ++kk) tail += pa[kk] * pb[kk];
            pc[j] = (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                     ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
                    tail;
        }
    }
}

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* pa = a + static_cast<size_t>(i) * k;
        double* pc = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double s = pa[p];
            const double* pb = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) pc[j] += s * pb[j];
        }
    }
}

// c (k x n) += a (m x k)^T * b (m x n)
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* pa = a + static_cast<size_t>(i) * k;
        const double* pb = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double s = pa[p];
            double* pc = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) pc[j] += s * pb[j];
        }
    }
}

std::shared_ptr<Node> make_op(Shape shape, std::vector<std::shared_ptr<Node>> parents,
                              const char* op) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(numel(n->shape)));
    n->op = op;
    n->requires_grad = false;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    return n;
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

Tensor unary_elementwise(const Tensor& x, const char* name, double (*f)(double),
                         double (*df)(double, double) /* (x, y) -> dy/dx */) {
    check_defined(x, name);
    auto n = make_op(x.shape(), {x.node()}, name);
    const auto& xv = x.node()->value;
    for (size_t i = 0; i < xv.size(); ++i) n->value[i] = f(xv[i]);
    n->backward_fn = [df](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            xn.grad[i] += self.grad[i] * df(xn.value[i], self.value[i]);
    };
    return Tensor(n);
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "linear");
    check_defined(w, "linear");
    check_defined(b, "linear");
    if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
        throw ShapeError("linear: expected x(N,K), w(O,K), b(O)");
    const int n = x.shape()[0], k = x.shape()[1];
    const int o = w.shape()[0];
    if (w.shape()[1] != k)
        throw ShapeError("linear: inner dimensions differ, x" + shape_str(x.shape()) + " vs w" +
                         shape_str(w.shape()));
    if (b.shape()[0] != o) throw ShapeError("linear: bias length does not match output width");

    auto out = make_op({n, o}, {x.node(), w.node(), b.node()}, "linear");
    gemm_nt(x.values().data(), w.values().data(), out->value.data(), n, o, k);
    const double* bv = b.values().data();
    for (int i = 0; i < n; ++i) {
        double* row = out->value.data() + static_cast<size_t>(i) * o;
        for (int j = 0; j < o; ++j) row[j] += bv[j];
    }
    out->backward_fn = [n, k, o](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* g = self.grad.data();
        if (xn.requires_grad) {
            xn.ensure_grad();
            gemm_nn_acc(g, wn.value.data(), xn.grad.data(), n, o, k);
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
            gemm_tn_acc(g, xn.value.data(), wn.grad.data(), n, o, k);
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* row = g + static_cast<size_t>(i) * o;
                for (int j = 0; j < o; ++j) bn.grad[static_cast<size_t>(j)] += row[j];
            }
        }
    };
    return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = make_op(a.shape(), {a.node(), b.node()}, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
    out->backward_fn = [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    };
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = make_op(a.shape(), {a.node(), b.node()}, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
    out->backward_fn = [](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bn.value[i];
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * an.value[i];
        }
    };
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw ShapeError("concat_cols: no inputs");
    const int n = ts.front().shape().size() == 2 ? ts.front().shape()[0] : -1;
    if (n < 0) throw ShapeError("concat_cols: inputs must be rank 2");
    int total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Tensor& t : ts) {
        check_defined(t, "concat_cols");
        if (t.shape().size() != 2 || t.shape()[0] != n)
            throw ShapeError("concat_cols: row counts differ");
        total += t.shape()[1];
        parents.push_back(t.node());
    }
    auto out = make_op({n, total}, std::move(parents), "concat_cols");
    int col = 0;
    for (const Tensor& t : ts) {
        const int d = t.shape()[1];
        const double* src = t.values().data();
        for (int i = 0; i < n; ++i)
            std::copy(src + static_cast<size_t>(i) * d, src + static_cast<size_t>(i + 1) * d,
                      out->value.data() + static_cast<size_t>(i) * total + col);
        col += d;
    }
    out->backward_fn = [n, total](Node& self) {
        int col = 0;
        for (auto& p : self.parents) {
            const int d = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double* g = self.grad.data() + static_cast<size_t>(i) * total + col;
                    double* dst = p->grad.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) dst[j] += g[j];
                }
            }
            col += d;
        }
    };
    return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    check_defined(x, "reshape");
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(new_shape));
    auto out = make_op(std::move(new_shape), {x.node()}, "reshape");
    out->value = x.values();
    out->backward_fn = [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
    };
    return Tensor(out);
}

Tensor leaky_relu(const Tensor& x) {
    return unary_elementwise(
        x, "leaky_relu", [](double v) { return v > 0.0 ? v : 0.2 * v; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.2; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_elementwise(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "conv2d");
    check_defined(w, "conv2d");
    check_defined(b, "conv2d");
    if (x.shape().size() != 4 || w.shape().size() != 4 || b.shape().size() != 1)
        throw ShapeError("conv2d: expected x(N,C,H,W), w(F,C,K,K), b(F)");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const int f = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != c) throw ShapeError("conv2d: channel mismatch");
    if (b.shape()[0] != f) throw ShapeError("conv2d: bias length does not match filters");
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd");
    const int ph = kh / 2, pw = kw / 2;

    auto out = make_op({n, f, h, wd}, {x.node(), w.node(), b.node()}, "conv2d");
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const double* bv = b.values().data();
    auto xat = [&](int ni, int ci, int i, int j) {
        return xv[((static_cast<size_t>(ni) * c + ci) * h + i) * wd + j];
    };
    size_t oi = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int fi = 0; fi < f; ++fi) {
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < wd; ++j, ++oi) {
                    double acc = bv[fi];
                    for (int ci = 0; ci < c; ++ci) {
                        const double* wf = wv + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                        for (int u = 0; u < kh; ++u) {
                            const int ii = i + u - ph;
                            if (ii < 0 || ii >= h) continue;
                            for (int v = 0; v < kw; ++v) {
                                const int jj = j + v - pw;
                                if (jj < 0 || jj >= wd) continue;
                                acc += xat(ni, ci, ii, jj) * wf[u * kw + v];
                            }
                        }
                    }
                    out->value[oi] = acc;
                }
            }
        }
    }
    out->backward_fn = [n, c, h, wd, f, kh, kw, ph, pw](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        const bool need_x = xn.requires_grad, need_w = wn.requires_grad, need_b = bn.requires_grad;
        if (need_x) xn.ensure_grad();
        if (need_w) wn.ensure_grad();
        if (need_b) bn.ensure_grad();
        size_t oi = 0;
        for (int ni = 0; ni < n; ++ni) {
            for (int fi = 0; fi < f; ++fi) {
                for (int i = 0; i < h; ++i) {
                    for (int j = 0; j < wd; ++j, ++oi) {
                        const double g = self.grad[oi];
                        if (g == 0.0) continue;
                        if (need_b) bn.grad[static_cast<size_t>(fi)] += g;
                        for (int ci = 0; ci < c; ++ci) {
                            const size_t xoff = (static_cast<size_t>(ni) * c + ci) * h;
                            const size_t woff = (static_cast<size_t>(fi) * c + ci) * kh;
                            for (int u = 0; u < kh; ++u) {
                                const int ii = i + u - ph;
                                if (ii < 0 || ii >= h) continue;
                                for (int v = 0; v < kw; ++v) {
                                    const int jj = j + v - pw;
                                    if (jj < 0 || jj >= wd) continue;
                                    const size_t xi = (xoff + ii) * wd + jj;
                                    const size_t wi = (woff + u) * kw + v;
                                    if (need_w) wn.grad[wi] += g * xn.value[xi];
                                    if (need_x) xn.grad[xi] += g * wn.value[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return Tensor(out);
}

Tensor avg_pool2(const Tensor& x) {
    check_defined(x, "avg_pool2");
    if (x.shape().size() != 4) throw ShapeError("avg_pool2: expected x(N,C,H,W)");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h < 2 || w < 2)
        throw ShapeError("avg_pool2: spatial dims " + shape_str(x.shape()) +
                         " smaller than the 2x2 window");
    const int oh = h / 2, ow = w / 2;
    auto out = make_op({n, c, oh, ow}, {x.node()}, "avg_pool2");
    const double* xv = x.values().data();
    size_t oi = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const size_t base = (static_cast<size_t>(ni) * c + ci) * h;
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j, ++oi) {
                    const size_t r0 = (base + 2 * i) * w + 2 * j;
                    const size_t r1 = (base + 2 * i + 1) * w + 2 * j;
                    out->value[oi] = 0.25 * ((xv[r0] + xv[r0 + 1]) + (xv[r1] + xv[r1 + 1]));
                }
            }
        }
    }
    out->backward_fn = [n, c, h, w, oh, ow](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        size_t oi = 0;
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
                const size_t base = (static_cast<size_t>(ni) * c + ci) * h;
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j, ++oi) {
                        const double g = 0.25 * self.grad[oi];
                        const size_t r0 = (base + 2 * i) * w + 2 * j;
                        const size_t r1 = (base + 2 * i + 1) * w + 2 * j;
                        xn.grad[r0] += g;
                        xn.grad[r0 + 1] += g;
                        xn.grad[r1] += g;
                        xn.grad[r1 + 1] += g;
                    }
                }
            }
        }
    };
    return Tensor(out);
}

Tensor mse_loss(const Tensor& pred, const Tensor& label) {
    check_defined(pred, "mse_loss");
    check_defined(label, "mse_loss");
    if (pred.shape() != label.shape())
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(label.shape()));
    if (pred.shape().empty() || pred.shape()[0] < 1)
        throw ShapeError("mse_loss: batch size must be >= 1");
    const int v = pred.shape()[0];
    const int64_t per = pred.size() / v;
    auto out = make_op({}, {pred.node(), label.node()}, "mse_loss");
    double acc = 0.0;
    const auto& pv = pred.values();
    const auto& lv = label.values();
    for (size_t i = 0; i < pv.size(); ++i) {
        const double d = pv[i] - lv[i];
        acc += d * d;
    }
    (void)per;
    const double loss = acc / static_cast<double>(v);
    if (!std::isfinite(loss))
        throw NonFiniteLossError("mse_loss: loss is not finite (diverged or bad inputs)");
    out->value[0] = loss;
    out->backward_fn = [v](Node& self) {
        Node& pn = *self.parents[0];
        Node& ln = *self.parents[1];
        const double g = self.grad[0] * 2.0 / static_cast<double>(v);
        if (pn.requires_grad) {
            pn.ensure_grad();
            for (size_t i = 0; i < pn.value.size(); ++i)
                pn.grad[i] += g * (pn.value[i] - ln.value[i]);
        }
        if (ln.requires_grad) {
            ln.ensure_grad();
            for (size_t i = 0; i < ln.value.size(); ++i)
                ln.grad[i] -= g * (pn.value[i] - ln.value[i]);
        }
    };
    return Tensor(out);
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ShapeError("backward: undefined tensor");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
    if (!loss.requires_grad()) return;  // nothing trainable in the graph

    // iterative post-order DFS; visits each node once
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace chanfuse::nn
