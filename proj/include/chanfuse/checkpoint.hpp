#pragma once

#include <map>
#include <string>
#include <vector>

#include "chanfuse/tensor.hpp"

namespace chanfuse::nn {

/// Self-describing parameter container: a length-prefixed JSON header (names,
/// shapes, dtype, free-form metadata) followed by the raw arrays. Layout is
/// documented in docs/formats.md.
struct Checkpoint {
    struct Entry {
        Shape shape;
        std::vector<double> data;
    };
    std::map<std::string, Entry> tensors;
    std::string meta_json = "{}";  // caller-owned metadata blob

    void put(const std::string& name, const Tensor& t);
    Tensor take(const std::string& name, bool requires_grad) const;  // throws if absent
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

/// dtype "f64" is lossless; "f32" stores parameters in single precision.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path,
                     const std::string& dtype = "f64");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace chanfuse::nn
