#pragma once

#include <cstdint>
#include <vector>

#include "simta/tensor.hpp"

namespace simta {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers, one pair per parameter tensor.
struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void init(const std::vector<Tensor*>& params);
};

// Standard bias-corrected Adam update over the parameters' .grad buffers.
// Throws if any parameter is missing its gradient.
void adam_step(const std::vector<Tensor*>& params, AdamState& state,
               const AdamConfig& cfg);

void zero_grad(const std::vector<Tensor*>& params);

}  // namespace simta
