#pragma once

#include <functional>
#include <string>
#include <vector>

#include "simta/tape.hpp"
#include "simta/tensor.hpp"

namespace simta {

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
    size_t worst_param = 0;
    size_t worst_coord = 0;
    size_t coords_checked = 0;
    std::string note;
};

// Compares reverse-mode gradients against central finite differences
// (f(th+h) - f(th-h)) / 2h, coordinate by coordinate, for every tensor in
// `params`. The program builds the forward pass on a fresh tape each call and
// must be deterministic: it is evaluated twice up front and the losses must
// agree bit-for-bit. Relative error uses max(1, |analytic|, |numeric|) as the
// denominator.
GradCheckResult grad_check(const std::function<Value(Tape&)>& program,
                           const std::vector<Tensor*>& params, double h,
                           double tol);

}  // namespace simta
