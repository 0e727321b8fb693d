#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace simta {

// Dense row-major tensor of 64-bit reals. Rank is 1 or 2 everywhere in this
// project; a scalar is a rank-1 tensor of length 1. Gradients live beside the
// data so parameters can accumulate across several tapes within a batch.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data when requires_grad

    Tensor() = default;
    Tensor(std::vector<size_t> s, std::vector<double> d, bool rg = false);

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor vec(std::vector<double> v, bool requires_grad = false);
    static Tensor matrix(size_t rows, size_t cols, std::vector<double> v,
                         bool requires_grad = false);

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    double& at(size_t r, size_t c) { return data[r * cols() + c]; }
    double at(size_t r, size_t c) const { return data[r * cols() + c]; }

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
};

size_t shape_numel(const std::vector<size_t>& shape);
std::string shape_str(const std::vector<size_t>& shape);

}  // namespace simta
