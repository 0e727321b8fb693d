#include "simta/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace simta {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                    " does not match data length " +
                                    std::to_string(data.size()));
    }
    if (requires_grad) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

Tensor Tensor::vec(std::vector<double> v, bool requires_grad) {
    size_t n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
}

Tensor Tensor::matrix(size_t rows, size_t cols, std::vector<double> v,
                      bool requires_grad) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace simta
