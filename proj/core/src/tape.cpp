#include "simta/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace simta {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

double stable_softplus(double x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// C(m x n) = op(A, ta) * op(B, tb); accumulate adds into C.
void mm(const double* a, size_t ar, size_t ac, bool ta,
        const double* b, size_t br, size_t bc, bool tb,
        double* c, bool accumulate) {
    const size_t m = ta ? ac : ar;
    const size_t k = ta ? ar : ac;
    const size_t n = tb ? br : bc;
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    if (!ta && !tb) {
        for (size_t i = 0; i < m; ++i) {
            const double* arow = a + i * ac;
            double* crow = c + i * n;
            for (size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                if (av == 0.0) continue;
                const double* brow = b + p * bc;
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
        return;
    }
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = ta ? a[p * ac + i] : a[i * ac + p];
            if (av == 0.0) continue;
            for (size_t j = 0; j < n; ++j) {
                const double bv = tb ? b[j * bc + p] : b[p * bc + j];
                crow[j] += av * bv;
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kConstant: return "constant";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kElementwiseMul: return "elementwise_mul";
        case Op::kConcatLastAxis: return "concat_last_axis";
        case Op::kRelu: return "relu";
        case Op::kSoftplus: return "softplus";
        case Op::kSigmoid: return "sigmoid";
        case Op::kSoftmaxLastAxisMasked: return "softmax_last_axis_masked";
        case Op::kLayerNormLastAxis: return "layer_norm_last_axis";
        case Op::kEmbeddingLookup: return "embedding_lookup";
        case Op::kMeanOverAxis: return "mean_over_axis";
        case Op::kScalarAffine: return "scalar_affine";
        case Op::kBceLossMasked: return "bce_loss_masked";
    }
    return "?";
}

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int32_t>(nodes_.size() - 1), this};
}

const Tape::Node& Tape::node(Value v) const {
    check_owned(v, "value");
    return nodes_[static_cast<size_t>(v.id)];
}

void Tape::check_owned(Value v, const char* what) const {
    if (!v.valid() || v.owner != this ||
        static_cast<size_t>(v.id) >= nodes_.size()) {
        fail(std::string(what) + ": tensor used but absent from this tape");
    }
}

Value Tape::leaf(Tensor& t) {
    if (!t.all_finite()) fail("leaf: non-finite input");
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.val = t.data;
    n.bound = &t;
    return push(std::move(n));
}

Value Tape::constant(std::vector<size_t> shape, std::vector<double> data) {
    require(shape_numel(shape) == data.size(),
            "constant: shape " + shape_str(shape) + " does not match data length");
    Node n;
    n.op = Op::kConstant;
    n.shape = std::move(shape);
    n.val = std::move(data);
    for (double v : n.val)
        if (!std::isfinite(v)) fail("constant: non-finite input");
    return push(std::move(n));
}

Value Tape::constant_scalar(double v) { return constant({1}, {v}); }

Value Tape::constant_vec(std::vector<double> v) {
    size_t n = v.size();
    return constant({n}, std::move(v));
}

Value Tape::constant_matrix(size_t rows, size_t cols, std::vector<double> v) {
    return constant({rows, cols}, std::move(v));
}

Value Tape::matmul(Value a, Value b, bool trans_a, bool trans_b) {
    OpAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return apply(Op::kMatmul, {a, b}, std::move(at));
}

Value Tape::add(Value a, Value b) { return apply(Op::kAdd, {a, b}); }

Value Tape::mul(Value a, Value b) { return apply(Op::kElementwiseMul, {a, b}); }

Value Tape::concat_last(const std::vector<Value>& parts) {
    return apply(Op::kConcatLastAxis, parts);
}

Value Tape::relu(Value x) { return apply(Op::kRelu, {x}); }

Value Tape::softplus(Value x) { return apply(Op::kSoftplus, {x}); }

Value Tape::sigmoid(Value x) { return apply(Op::kSigmoid, {x}); }

Value Tape::softmax_masked(Value scores, std::vector<uint8_t> valid) {
    OpAttrs at;
    at.mask = std::move(valid);
    return apply(Op::kSoftmaxLastAxisMasked, {scores}, std::move(at));
}

Value Tape::layer_norm(Value x, Value gamma, Value beta) {
    return apply(Op::kLayerNormLastAxis, {x, gamma, beta});
}

Value Tape::embedding(Value table, std::vector<int32_t> token_ids) {
    OpAttrs at;
    at.indices = std::move(token_ids);
    return apply(Op::kEmbeddingLookup, {table}, std::move(at));
}

Value Tape::mean_axis(Value x, int axis) {
    OpAttrs at;
    at.axis = axis;
    return apply(Op::kMeanOverAxis, {x}, std::move(at));
}

Value Tape::affine(Value x, double scale, double shift) {
    OpAttrs at;
    at.scale = scale;
    at.shift = shift;
    return apply(Op::kScalarAffine, {x}, std::move(at));
}

Value Tape::bce_masked(Value probs, Value targets, std::vector<uint8_t> valid) {
    OpAttrs at;
    at.mask = std::move(valid);
    return apply(Op::kBceLossMasked, {probs, targets}, std::move(at));
}

Value Tape::apply(Op kind, const std::vector<Value>& inputs, OpAttrs attrs) {
    for (const Value& v : inputs) check_owned(v, op_name(kind));
    Node n;
    n.op = kind;
    n.attrs = std::move(attrs);
    n.inputs.reserve(inputs.size());
    for (const Value& v : inputs) {
        const Node& in = nodes_[static_cast<size_t>(v.id)];
        for (double x : in.val)
            if (!std::isfinite(x))
                fail(std::string(op_name(kind)) + ": non-finite input");
        n.inputs.push_back(v.id);
    }
    forward_node(n);
    for (double x : n.val)
        if (!std::isfinite(x))
            fail(std::string(op_name(kind)) + ": non-finite result");
    return push(std::move(n));
}

void Tape::forward_node(Node& n) {
    auto in = [&](size_t i) -> const Node& {
        return nodes_[static_cast<size_t>(n.inputs[i])];
    };
    const char* name = op_name(n.op);
    auto shape_err = [&](const Node& a, const Node& b) {
        fail(std::string(name) + ": shape mismatch " + shape_str(a.shape) +
             " vs " + shape_str(b.shape));
    };

    switch (n.op) {
        case Op::kLeaf:
        case Op::kConstant:
            fail("apply: leaf/constant are not primitives");
        case Op::kMatmul: {
            require(n.inputs.size() == 2, "matmul: expects 2 inputs");
            const Node& a = in(0);
            const Node& b = in(1);
            require(a.shape.size() == 2 && b.shape.size() == 2,
                    "matmul: rank-2 operands required, got " + shape_str(a.shape) +
                        " and " + shape_str(b.shape));
            const size_t ar = a.shape[0], ac = a.shape[1];
            const size_t br = b.shape[0], bc = b.shape[1];
            const size_t m = n.attrs.trans_a ? ac : ar;
            const size_t k = n.attrs.trans_a ? ar : ac;
            const size_t kb = n.attrs.trans_b ? bc : br;
            const size_t cols = n.attrs.trans_b ? br : bc;
            if (k != kb) shape_err(a, b);
            n.shape = {m, cols};
            n.val.assign(m * cols, 0.0);
            mm(a.val.data(), ar, ac, n.attrs.trans_a, b.val.data(), br, bc,
               n.attrs.trans_b, n.val.data(), false);
            break;
        }
        case Op::kAdd: {
            require(n.inputs.size() == 2, "add: expects 2 inputs");
            const Node& a = in(0);
            const Node& b = in(1);
            n.shape = a.shape;
            n.val = a.val;
            if (b.shape == a.shape) {
                for (size_t i = 0; i < n.val.size(); ++i) n.val[i] += b.val[i];
            } else if (b.val.size() == 1) {
                // scalar rule
                for (double& v : n.val) v += b.val[0];
            } else if (a.shape.size() == 2 && b.shape.size() == 1 &&
                       b.shape[0] == a.shape[1]) {
                // row-bias rule: add b to every row of a
                const size_t rows = a.shape[0], cols = a.shape[1];
                for (size_t r = 0; r < rows; ++r)
                    for (size_t c = 0; c < cols; ++c) n.val[r * cols + c] += b.val[c];
            } else {
                shape_err(a, b);
            }
            break;
        }
        case Op::kElementwiseMul: {
            require(n.inputs.size() == 2, "elementwise_mul: expects 2 inputs");
            const Node& a = in(0);
            const Node& b = in(1);
            if (a.shape == b.shape) {
                n.shape = a.shape;
                n.val = a.val;
                for (size_t i = 0; i < n.val.size(); ++i) n.val[i] *= b.val[i];
            } else if (a.val.size() == 1) {
                n.shape = b.shape;
                n.val = b.val;
                for (double& v : n.val) v *= a.val[0];
            } else if (b.val.size() == 1) {
                n.shape = a.shape;
                n.val = a.val;
                for (double& v : n.val) v *= b.val[0];
            } else {
                shape_err(a, b);
            }
            break;
        }
        case Op::kConcatLastAxis: {
            require(!n.inputs.empty(), "concat_last_axis: expects >=1 input");
            const Node& first = in(0);
            const size_t rank = first.shape.size();
            size_t total_last = 0;
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                const Node& p = in(i);
                require(p.shape.size() == rank,
                        "concat_last_axis: rank mismatch " + shape_str(first.shape) +
                            " vs " + shape_str(p.shape));
                for (size_t d = 0; d + 1 < rank; ++d)
                    if (p.shape[d] != first.shape[d]) shape_err(first, p);
                total_last += p.shape.back();
            }
            n.shape = first.shape;
            n.shape.back() = total_last;
            const size_t rows = rank == 2 ? first.shape[0] : 1;
            n.val.assign(rows * total_last, 0.0);
            size_t offset = 0;
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                const Node& p = in(i);
                const size_t pc = p.shape.back();
                for (size_t r = 0; r < rows; ++r)
                    for (size_t c = 0; c < pc; ++c)
                        n.val[r * total_last + offset + c] = p.val[r * pc + c];
                offset += pc;
            }
            break;
        }
        case Op::kRelu: {
            const Node& a = in(0);
            n.shape = a.shape;
            n.val = a.val;
            for (double& v : n.val) v = v > 0.0 ? v : 0.0;
            break;
        }
        case Op::kSoftplus: {
            const Node& a = in(0);
            n.shape = a.shape;
            n.val.resize(a.val.size());
            for (size_t i = 0; i < a.val.size(); ++i) n.val[i] = stable_softplus(a.val[i]);
            break;
        }
        case Op::kSigmoid: {
            const Node& a = in(0);
            n.shape = a.shape;
            n.val.resize(a.val.size());
            for (size_t i = 0; i < a.val.size(); ++i) n.val[i] = stable_sigmoid(a.val[i]);
            break;
        }
        case Op::kSoftmaxLastAxisMasked: {
            const Node& a = in(0);
            require(n.attrs.mask.size() == a.val.size(),
                    "softmax_last_axis_masked: mask length " +
                        std::to_string(n.attrs.mask.size()) + " does not match input " +
                        shape_str(a.shape));
            n.shape = a.shape;
            n.val.assign(a.val.size(), 0.0);
            const size_t cols = a.shape.back();
            const size_t rows = a.val.size() / cols;
            for (size_t r = 0; r < rows; ++r) {
                const double* x = a.val.data() + r * cols;
                const uint8_t* mk = n.attrs.mask.data() + r * cols;
                double mx = -std::numeric_limits<double>::infinity();
                size_t valid = 0;
                for (size_t c = 0; c < cols; ++c)
                    if (mk[c]) {
                        mx = std::max(mx, x[c]);
                        ++valid;
                    }
                if (valid == 0)
                    fail("softmax_last_axis_masked: degenerate mask (row " +
                         std::to_string(r) + " has no valid position)");
                double denom = 0.0;
                double* y = n.val.data() + r * cols;
                for (size_t c = 0; c < cols; ++c)
                    if (mk[c]) {
                        y[c] = std::exp(x[c] - mx);
                        denom += y[c];
                    }
                for (size_t c = 0; c < cols; ++c)
                    if (mk[c]) y[c] /= denom;
            }
            break;
        }
        case Op::kLayerNormLastAxis: {
            require(n.inputs.size() == 3, "layer_norm_last_axis: expects (x, gamma, beta)");
            const Node& a = in(0);
            const Node& g = in(1);
            const Node& b = in(2);
            const size_t cols = a.shape.back();
            require(g.shape.size() == 1 && g.shape[0] == cols, "layer_norm_last_axis: gamma shape " +
                        shape_str(g.shape) + " does not match input " + shape_str(a.shape));
            require(b.shape.size() == 1 && b.shape[0] == cols, "layer_norm_last_axis: beta shape " +
                        shape_str(b.shape) + " does not match input " + shape_str(a.shape));
            n.shape = a.shape;
            n.val.resize(a.val.size());
            const size_t rows = a.val.size() / cols;
            n.aux.resize(rows * 2);  // per-row mean and inv_std
            for (size_t r = 0; r < rows; ++r) {
                const double* x = a.val.data() + r * cols;
                double mean = 0.0;
                for (size_t c = 0; c < cols; ++c) mean += x[c];
                mean /= static_cast<double>(cols);
                double var = 0.0;
                for (size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
                var /= static_cast<double>(cols);
                const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
                n.aux[r * 2] = mean;
                n.aux[r * 2 + 1] = inv_std;
                double* y = n.val.data() + r * cols;
                for (size_t c = 0; c < cols; ++c)
                    y[c] = (x[c] - mean) * inv_std * g.val[c] + b.val[c];
            }
            break;
        }
        case Op::kEmbeddingLookup: {
            const Node& t = in(0);
            require(t.shape.size() == 2, "embedding_lookup: table must be rank 2, got " +
                        shape_str(t.shape));
            const size_t vocab = t.shape[0], width = t.shape[1];
            const size_t count = n.attrs.indices.size();
            require(count > 0, "embedding_lookup: empty index list");
            n.shape = {count, width};
            n.val.resize(count * width);
            for (size_t i = 0; i < count; ++i) {
                const int32_t id = n.attrs.indices[i];
                require(id >= 0 && static_cast<size_t>(id) < vocab,
                        "embedding_lookup: token id " + std::to_string(id) +
                            " outside vocabulary of size " + std::to_string(vocab));
                std::copy_n(t.val.data() + static_cast<size_t>(id) * width, width,
                            n.val.data() + i * width);
            }
            break;
        }
        case Op::kMeanOverAxis: {
            const Node& a = in(0);
            if (a.shape.size() == 1) {
                require(n.attrs.axis == 0, "mean_over_axis: vector input takes axis 0");
                n.shape = {1};
                double s = 0.0;
                for (double v : a.val) s += v;
                n.val = {s / static_cast<double>(a.val.size())};
            } else {
                require(a.shape.size() == 2 && (n.attrs.axis == 0 || n.attrs.axis == 1),
                        "mean_over_axis: matrix input takes axis 0 or 1");
                const size_t rows = a.shape[0], cols = a.shape[1];
                if (n.attrs.axis == 0) {
                    n.shape = {cols};
                    n.val.assign(cols, 0.0);
                    for (size_t r = 0; r < rows; ++r)
                        for (size_t c = 0; c < cols; ++c) n.val[c] += a.val[r * cols + c];
                    for (double& v : n.val) v /= static_cast<double>(rows);
                } else {
                    n.shape = {rows};
                    n.val.assign(rows, 0.0);
                    for (size_t r = 0; r < rows; ++r) {
                        for (size_t c = 0; c < cols; ++c) n.val[r] += a.val[r * cols + c];
                        n.val[r] /= static_cast<double>(cols);
                    }
                }
            }
            break;
        }
        case Op::kScalarAffine: {
            const Node& a = in(0);
            n.shape = a.shape;
            n.val.resize(a.val.size());
            for (size_t i = 0; i < a.val.size(); ++i)
                n.val[i] = n.attrs.scale * a.val[i] + n.attrs.shift;
            break;
        }
        case Op::kBceLossMasked: {
            require(n.inputs.size() == 2, "bce_loss_masked: expects (probs, targets)");
            const Node& p = in(0);
            const Node& y = in(1);
            if (p.shape != y.shape) shape_err(p, y);
            require(n.attrs.mask.size() == p.val.size(),
                    "bce_loss_masked: mask length does not match input " + shape_str(p.shape));
            size_t valid = 0;
            for (uint8_t m : n.attrs.mask) valid += m ? 1 : 0;
            if (valid == 0) fail("bce_loss_masked: degenerate mask (no valid entry)");
            n.shape = {1};
            n.aux.resize(p.val.size());  // clamped probabilities
            double sum = 0.0;
            for (size_t i = 0; i < p.val.size(); ++i) {
                const double ph = std::clamp(p.val[i], kProbClampLo, kProbClampHi);
                n.aux[i] = ph;
                if (!n.attrs.mask[i]) continue;
                sum += -(y.val[i] * std::log(ph) + (1.0 - y.val[i]) * std::log(1.0 - ph));
            }
            n.val = {sum / static_cast<double>(valid)};
            break;
        }
    }
}

void Tape::backward(Value loss, double seed) {
    check_owned(loss, "backward");
    Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.val.size() != 1)
        fail("backward: loss must be scalar, got " + shape_str(ln.shape));
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    ln.grad[0] = seed;
    for (int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.op == Op::kLeaf || n.op == Op::kConstant) continue;
        bool any = false;
        for (double g : n.grad)
            if (g != 0.0) {
                any = true;
                break;
            }
        if (any) backward_node(n);
    }
    for (auto& n : nodes_) {
        if (n.bound && n.bound->requires_grad) {
            n.bound->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
}

void Tape::backward_node(Node& n) {
    auto in = [&](size_t i) -> Node& { return nodes_[static_cast<size_t>(n.inputs[i])]; };
    switch (n.op) {
        case Op::kLeaf:
        case Op::kConstant:
            break;
        case Op::kMatmul: {
            Node& a = in(0);
            Node& b = in(1);
            const size_t ar = a.shape[0], ac = a.shape[1];
            const size_t br = b.shape[0], bc = b.shape[1];
            const bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
            const size_t m = n.shape[0], cols = n.shape[1];
            // d op(A) = dC * op(B)^T ; d op(B) = op(A)^T * dC
            if (!ta) {
                mm(n.grad.data(), m, cols, false, b.val.data(), br, bc, !tb,
                   a.grad.data(), true);
            } else {
                mm(b.val.data(), br, bc, tb, n.grad.data(), m, cols, true,
                   a.grad.data(), true);
            }
            if (!tb) {
                mm(a.val.data(), ar, ac, !ta, n.grad.data(), m, cols, false,
                   b.grad.data(), true);
            } else {
                mm(n.grad.data(), m, cols, true, a.val.data(), ar, ac, ta,
                   b.grad.data(), true);
            }
            break;
        }
        case Op::kAdd: {
            Node& a = in(0);
            Node& b = in(1);
            for (size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i];
            if (b.shape == a.shape) {
                for (size_t i = 0; i < n.grad.size(); ++i) b.grad[i] += n.grad[i];
            } else if (b.val.size() == 1) {
                double s = 0.0;
                for (double g : n.grad) s += g;
                b.grad[0] += s;
            } else {
                const size_t rows = a.shape[0], cols = a.shape[1];
                for (size_t r = 0; r < rows; ++r)
                    for (size_t c = 0; c < cols; ++c) b.grad[c] += n.grad[r * cols + c];
            }
            break;
        }
        case Op::kElementwiseMul: {
            Node& a = in(0);
            Node& b = in(1);
            if (a.shape == b.shape) {
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    a.grad[i] += n.grad[i] * b.val[i];
                    b.grad[i] += n.grad[i] * a.val[i];
                }
            } else if (a.val.size() == 1) {
                double s = 0.0;
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    s += n.grad[i] * b.val[i];
                    b.grad[i] += n.grad[i] * a.val[0];
                }
                a.grad[0] += s;
            } else {
                double s = 0.0;
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    s += n.grad[i] * a.val[i];
                    a.grad[i] += n.grad[i] * b.val[0];
                }
                b.grad[0] += s;
            }
            break;
        }
        case Op::kConcatLastAxis: {
            const size_t total_last = n.shape.back();
            const size_t rows = n.shape.size() == 2 ? n.shape[0] : 1;
            size_t offset = 0;
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                Node& p = in(i);
                const size_t pc = p.shape.back();
                for (size_t r = 0; r < rows; ++r)
                    for (size_t c = 0; c < pc; ++c)
                        p.grad[r * pc + c] += n.grad[r * total_last + offset + c];
                offset += pc;
            }
            break;
        }
        case Op::kRelu: {
            Node& a = in(0);
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (a.val[i] > 0.0) a.grad[i] += n.grad[i];
            break;
        }
        case Op::kSoftplus: {
            Node& a = in(0);
            for (size_t i = 0; i < n.grad.size(); ++i)
                a.grad[i] += n.grad[i] * stable_sigmoid(a.val[i]);
            break;
        }
        case Op::kSigmoid: {
            Node& a = in(0);
            for (size_t i = 0; i < n.grad.size(); ++i)
                a.grad[i] += n.grad[i] * n.val[i] * (1.0 - n.val[i]);
            break;
        }
        case Op::kSoftmaxLastAxisMasked: {
            Node& a = in(0);
            const size_t cols = n.shape.back();
            const size_t rows = n.val.size() / cols;
            for (size_t r = 0; r < rows; ++r) {
                const double* y = n.val.data() + r * cols;
                const double* dy = n.grad.data() + r * cols;
                const uint8_t* mk = n.attrs.mask.data() + r * cols;
                double dot = 0.0;
                for (size_t c = 0; c < cols; ++c)
                    if (mk[c]) dot += dy[c] * y[c];
                double* dx = a.grad.data() + r * cols;
                for (size_t c = 0; c < cols; ++c)
                    if (mk[c]) dx[c] += y[c] * (dy[c] - dot);
            }
            break;
        }
        case Op::kLayerNormLastAxis: {
            Node& a = in(0);
            Node& g = in(1);
            Node& b = in(2);
            const size_t cols = n.shape.back();
            const size_t rows = n.val.size() / cols;
            const double inv_cols = 1.0 / static_cast<double>(cols);
            for (size_t r = 0; r < rows; ++r) {
                const double mean = n.aux[r * 2];
                const double inv_std = n.aux[r * 2 + 1];
                const double* x = a.val.data() + r * cols;
                const double* dy = n.grad.data() + r * cols;
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (size_t c = 0; c < cols; ++c) {
                    const double xh = (x[c] - mean) * inv_std;
                    const double dxh = dy[c] * g.val[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                    g.grad[c] += dy[c] * xh;
                    b.grad[c] += dy[c];
                }
                double* dx = a.grad.data() + r * cols;
                for (size_t c = 0; c < cols; ++c) {
                    const double xh = (x[c] - mean) * inv_std;
                    const double dxh = dy[c] * g.val[c];
                    dx[c] += inv_std * (dxh - inv_cols * sum_dxh - inv_cols * xh * sum_dxh_xh);
                }
            }
            break;
        }
        case Op::kEmbeddingLookup: {
            Node& t = in(0);
            const size_t width = n.shape[1];
            for (size_t i = 0; i < n.attrs.indices.size(); ++i) {
                const size_t row = static_cast<size_t>(n.attrs.indices[i]);
                for (size_t c = 0; c < width; ++c)
                    t.grad[row * width + c] += n.grad[i * width + c];
            }
            break;
        }
        case Op::kMeanOverAxis: {
            Node& a = in(0);
            if (a.shape.size() == 1) {
                const double w = n.grad[0] / static_cast<double>(a.val.size());
                for (double& g : a.grad) g += w;
            } else {
                const size_t rows = a.shape[0], cols = a.shape[1];
                if (n.attrs.axis == 0) {
                    const double inv = 1.0 / static_cast<double>(rows);
                    for (size_t r = 0; r < rows; ++r)
                        for (size_t c = 0; c < cols; ++c)
                            a.grad[r * cols + c] += n.grad[c] * inv;
                } else {
                    const double inv = 1.0 / static_cast<double>(cols);
                    for (size_t r = 0; r < rows; ++r)
                        for (size_t c = 0; c < cols; ++c)
                            a.grad[r * cols + c] += n.grad[r] * inv;
                }
            }
            break;
        }
        case Op::kScalarAffine: {
            Node& a = in(0);
            for (size_t i = 0; i < n.grad.size(); ++i)
                a.grad[i] += n.grad[i] * n.attrs.scale;
            break;
        }
        case Op::kBceLossMasked: {
            Node& p = in(0);
            const Node& y = in(1);
            size_t valid = 0;
            for (uint8_t m : n.attrs.mask) valid += m ? 1 : 0;
            const double w = n.grad[0] / static_cast<double>(valid);
            for (size_t i = 0; i < p.val.size(); ++i) {
                if (!n.attrs.mask[i]) continue;
                // clamp acts as a hard gate: no gradient outside [lo, hi]
                if (p.val[i] < kProbClampLo || p.val[i] > kProbClampHi) continue;
                const double ph = n.aux[i];
                p.grad[i] += w * (ph - y.val[i]) / (ph * (1.0 - ph));
            }
            break;
        }
    }
}

const std::vector<double>& Tape::data(Value v) const { return node(v).val; }

const std::vector<size_t>& Tape::shape(Value v) const { return node(v).shape; }

double Tape::scalar(Value v) const {
    const Node& n = node(v);
    if (n.val.size() != 1)
        fail("scalar: value has shape " + shape_str(n.shape));
    return n.val[0];
}

const std::vector<double>& Tape::node_grad(Value v) const { return node(v).grad; }

void Tape::clear() { nodes_.clear(); }

}  // namespace simta
