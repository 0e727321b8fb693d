#include "simta/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace simta {

void AdamState::init(const std::vector<Tensor*>& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
        m.emplace_back(p->numel(), 0.0);
        v.emplace_back(p->numel(), 0.0);
    }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state,
               const AdamConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->grad.size() != params[i]->data.size())
            throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                        " has no gradient");
        if (state.m[i].size() != params[i]->numel())
            throw std::invalid_argument("adam_step: state dimension mismatch at parameter " +
                                        std::to_string(i));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            const double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void zero_grad(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
}

}  // namespace simta
