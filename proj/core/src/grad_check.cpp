#include "simta/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace simta {

namespace {

double eval(const std::function<Value(Tape&)>& program) {
    Tape tape;
    Value loss = program(tape);
    return tape.scalar(loss);
}

}  // namespace

GradCheckResult grad_check(const std::function<Value(Tape&)>& program,
                           const std::vector<Tensor*>& params, double h,
                           double tol) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    for (Tensor* p : params) {
        p->requires_grad = true;
        p->ensure_grad();
        p->zero_grad();
    }

    const double l0 = eval(program);
    const double l1 = eval(program);
    if (std::memcmp(&l0, &l1, sizeof(double)) != 0)
        throw std::runtime_error("grad_check: program is not deterministic (" +
                                 std::to_string(l0) + " vs " + std::to_string(l1) + ")");

    // Analytic pass.
    {
        Tape tape;
        Value loss = program(tape);
        tape.backward(loss);
    }

    GradCheckResult res;
    res.pass = true;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (size_t ci = 0; ci < p.numel(); ++ci) {
            const double saved = p.data[ci];
            p.data[ci] = saved + h;
            const double fp = eval(program);
            p.data[ci] = saved - h;
            const double fm = eval(program);
            p.data[ci] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = p.grad[ci];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            ++res.coords_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = pi;
                res.worst_coord = ci;
            }
            if (rel >= tol) res.pass = false;
        }
    }
    if (!res.pass) {
        res.note = "max rel err " + std::to_string(res.max_rel_err) + " at param " +
                   std::to_string(res.worst_param) + " coord " +
                   std::to_string(res.worst_coord);
    }
    return res;
}

}  // namespace simta
