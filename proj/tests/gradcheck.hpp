#pragma once

// Central-difference gradient checking shared by the unit tests and the
// acceptance suite. The graph builder is re-invoked for every perturbed
// input, so the check stays independent of the recorded tape.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "chanfuse/tensor.hpp"

namespace gradcheck {

using chanfuse::nn::Shape;
using chanfuse::nn::Tensor;

using GraphFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Result {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

inline std::vector<double> random_values(size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0, double avoid_below = 0.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) {
        do {
            x = dist(rng);
        } while (avoid_below > 0.0 && std::abs(x) < avoid_below);
    }
    return v;
}

inline Result check(const GraphFn& fn, const std::vector<Shape>& shapes,
                    std::vector<std::vector<double>> values, double h = 1e-5) {
    auto build = [&](const std::vector<std::vector<double>>& vals, bool grad) {
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < shapes.size(); ++i)
            leaves.push_back(Tensor::from_values(shapes[i], vals[i], grad));
        return leaves;
    };

    std::vector<Tensor> leaves = build(values, true);
    Tensor loss = fn(leaves);
    chanfuse::nn::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const Tensor& t : leaves)
        analytic.push_back(t.has_grad() ? t.grad()
                                        : std::vector<double>(t.values().size(), 0.0));

    Result res;
    for (size_t i = 0; i < values.size(); ++i) {
        for (size_t j = 0; j < values[i].size(); ++j) {
            auto perturbed = values;
            perturbed[i][j] += h;
            const double up = fn(build(perturbed, false)).values()[0];
            perturbed[i][j] -= 2.0 * h;
            const double down = fn(build(perturbed, false)).values()[0];
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-2});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(a - numeric) / denom);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace gradcheck
