#include "simta/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace simta {

namespace {

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor xavier(size_t rows, size_t cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> d(rows * cols);
    for (double& v : d) v = rng.uniform(-a, a);
    return Tensor::matrix(rows, cols, std::move(d), true);
}

}  // namespace

void AsyncSequence::sort_by_time() {
    std::vector<size_t> order(t_days.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return t_days[a] < t_days[b]; });
    std::vector<double> t2(t_days.size());
    std::vector<std::vector<double>> x2(x.size());
    for (size_t i = 0; i < order.size(); ++i) {
        t2[i] = t_days[order[i]];
        x2[i] = std::move(x[order[i]]);
    }
    t_days = std::move(t2);
    x = std::move(x2);
}

SimTALayerParams SimTALayerParams::init(size_t d, Rng& rng, double tau_days) {
    SimTALayerParams p;
    // softplus(lambda_raw) = 1 at init: unit decay per time scale.
    p.lambda_raw = Tensor::scalar(std::log(std::exp(1.0) - 1.0), true);
    p.bias = Tensor::scalar(0.0, true);
    p.w_v = xavier(d, d, rng);
    p.b_v = Tensor::zeros({d}, true);
    p.w_f1 = xavier(d, 4 * d, rng);
    p.b_f1 = Tensor::zeros({4 * d}, true);
    p.w_f2 = xavier(4 * d, d, rng);
    p.b_f2 = Tensor::zeros({d}, true);
    p.tau_days = tau_days;
    return p;
}

void SimTALayerParams::collect(std::vector<Tensor*>& out) {
    out.push_back(&lambda_raw);
    out.push_back(&bias);
    out.push_back(&w_v);
    out.push_back(&b_v);
    out.push_back(&w_f1);
    out.push_back(&b_f1);
    out.push_back(&w_f2);
    out.push_back(&b_f2);
}

LayerNormParams LayerNormParams::init(size_t d) {
    LayerNormParams p;
    p.gamma = Tensor({d}, std::vector<double>(d, 1.0), true);
    p.beta = Tensor::zeros({d}, true);
    return p;
}

void LayerNormParams::collect(std::vector<Tensor*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

TSimTABlockParams TSimTABlockParams::init(size_t d, size_t n_inner, Rng& rng,
                                          double tau_days) {
    if (n_inner < 1)
        throw std::invalid_argument("tsimta block: n_inner must be >= 1");
    TSimTABlockParams p;
    p.simta_layers.reserve(n_inner);
    for (size_t i = 0; i < n_inner; ++i)
        p.simta_layers.push_back(SimTALayerParams::init(d, rng, tau_days));
    p.ln1 = LayerNormParams::init(d);
    p.ln2 = LayerNormParams::init(d);
    p.ffn_w1 = xavier(d, 4 * d, rng);
    p.ffn_b1 = Tensor::zeros({4 * d}, true);
    p.ffn_w2 = xavier(4 * d, d, rng);
    p.ffn_b2 = Tensor::zeros({d}, true);
    return p;
}

void TSimTABlockParams::collect(std::vector<Tensor*>& out) {
    for (auto& l : simta_layers) l.collect(out);
    ln1.collect(out);
    ln2.collect(out);
    out.push_back(&ffn_w1);
    out.push_back(&ffn_b1);
    out.push_back(&ffn_w2);
    out.push_back(&ffn_b2);
}

std::vector<double> simta_score_weights(const std::vector<double>& deltas,
                                        const SimTALayerParams& params) {
    if (deltas.empty())
        throw std::invalid_argument("simta_scores: empty candidate set");
    const double decay = softplus(params.lambda_raw.data[0]);
    const double bias = params.bias.data[0];
    std::vector<double> s(deltas.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < deltas.size(); ++j) {
        if (deltas[j] < 0.0)
            throw std::invalid_argument("simta_scores: negative elapsed time (non-causal pair)");
        s[j] = -decay * (deltas[j] / params.tau_days) + bias;
        mx = std::max(mx, s[j]);
    }
    double denom = 0.0;
    for (double& v : s) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (double& v : s) v /= denom;
    return s;
}

namespace {

// Causal elapsed-time grid and its validity mask for a sorted timestamp list.
void causal_grid(const std::vector<double>& t, double tau,
                 std::vector<double>& grid, std::vector<uint8_t>& mask) {
    const size_t L = t.size();
    grid.assign(L * L, 0.0);
    mask.assign(L * L, 0);
    for (size_t i = 0; i < L; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            const double dt = t[i] - t[j];
            if (dt < 0.0)
                throw std::invalid_argument(
                    "simta: timestamps not sorted (negative elapsed time)");
            grid[i * L + j] = dt / tau;
            mask[i * L + j] = 1;
        }
    }
}

}  // namespace

Value simta_layer_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                          SimTALayerParams& params, AttnRecorder* rec) {
    const auto& sh = tape.shape(seq);
    if (sh.size() != 2 || sh[0] != t_days.size())
        throw std::invalid_argument("simta_layer: sequence shape " + shape_str(sh) +
                                    " does not match " + std::to_string(t_days.size()) +
                                    " timestamps");
    if (t_days.empty()) throw std::invalid_argument("simta_layer: empty sequence");
    const size_t d = sh[1];
    if (params.w_v.shape[0] != d)
        throw std::invalid_argument("simta_layer: width mismatch, sequence " +
                                    shape_str(sh) + " vs w_v " + shape_str(params.w_v.shape));
    const size_t L = t_days.size();

    std::vector<double> grid;
    std::vector<uint8_t> mask;
    causal_grid(t_days, params.tau_days, grid, mask);

    Value decay = tape.softplus(tape.leaf(params.lambda_raw));
    Value scaled = tape.mul(decay, tape.constant_matrix(L, L, std::move(grid)));
    Value scores = tape.add(tape.affine(scaled, -1.0, 0.0), tape.leaf(params.bias));
    Value weights = tape.softmax_masked(scores, mask);

    if (rec) {
        const auto& w = tape.data(weights);
        for (size_t i = 0; i < L; ++i)
            for (size_t j = 0; j <= i; ++j)
                rec->rows.push_back({rec->next_layer, t_days[i], t_days[j], w[i * L + j]});
        rec->next_layer += 1;
    }

    Value values = tape.add(tape.matmul(seq, tape.leaf(params.w_v)), tape.leaf(params.b_v));
    Value agg = tape.matmul(weights, values);
    Value hidden =
        tape.relu(tape.add(tape.matmul(agg, tape.leaf(params.w_f1)), tape.leaf(params.b_f1)));
    return tape.add(tape.matmul(hidden, tape.leaf(params.w_f2)), tape.leaf(params.b_f2));
}

Value simta_stack_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                          std::vector<SimTALayerParams>& layers, AttnRecorder* rec) {
    if (layers.empty())
        throw std::invalid_argument("simta_stack: layer list must be non-empty");
    Value h = seq;
    for (auto& layer : layers) h = simta_layer_forward(tape, h, t_days, layer, rec);
    return h;
}

Value tsimta_block_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                           TSimTABlockParams& params, AttnRecorder* rec) {
    Value attn = simta_stack_forward(tape, seq, t_days, params.simta_layers, rec);
    Value y = tape.layer_norm(tape.add(seq, attn), tape.leaf(params.ln1.gamma),
                              tape.leaf(params.ln1.beta));
    Value hidden =
        tape.relu(tape.add(tape.matmul(y, tape.leaf(params.ffn_w1)), tape.leaf(params.ffn_b1)));
    Value ffn = tape.add(tape.matmul(hidden, tape.leaf(params.ffn_w2)), tape.leaf(params.ffn_b2));
    return tape.layer_norm(tape.add(y, ffn), tape.leaf(params.ln2.gamma),
                           tape.leaf(params.ln2.beta));
}

Value row_selector(Tape& tape, size_t rows, size_t index) {
    std::vector<double> sel(rows, 0.0);
    sel[index] = 1.0;
    return tape.constant({rows, 1}, std::move(sel));
}

Value summarize_sequence(Tape& tape, Value seq, const std::vector<double>& t_days,
                         double cutoff_days, Tensor& query_embedding,
                         std::vector<SimTALayerParams>* simta_stack,
                         std::vector<TSimTABlockParams>* blocks, AttnRecorder* rec) {
    const auto& sh = tape.shape(seq);
    if (sh.size() != 2 || sh[0] != t_days.size() || t_days.empty())
        throw std::invalid_argument("summarize_sequence: bad sequence shape " + shape_str(sh));
    for (double t : t_days)
        if (t > cutoff_days)
            throw std::invalid_argument("summarize_sequence: event after cutoff");
    const size_t L = t_days.size();
    const size_t d = sh[1];

    // Extend to L+1 rows with the virtual query event at the cutoff.
    std::vector<double> keep((L + 1) * L, 0.0);
    for (size_t i = 0; i < L; ++i) keep[i * L + i] = 1.0;
    Value lifted = tape.matmul(tape.constant({L + 1, L}, std::move(keep)), seq);
    Value query_row =
        tape.matmul(row_selector(tape, L + 1, L), tape.leaf(query_embedding));
    Value extended = tape.add(lifted, query_row);

    std::vector<double> t_ext = t_days;
    t_ext.push_back(cutoff_days);

    Value out;
    if (simta_stack) {
        out = simta_stack_forward(tape, extended, t_ext, *simta_stack, rec);
    } else if (blocks) {
        if (blocks->empty())
            throw std::invalid_argument("summarize_sequence: empty block list");
        out = extended;
        for (auto& b : *blocks) out = tsimta_block_forward(tape, out, t_ext, b, rec);
    } else {
        throw std::invalid_argument("summarize_sequence: no encoder given");
    }
    if (tape.shape(out).back() != d)
        throw std::invalid_argument("summarize_sequence: encoder changed width");
    return tape.matmul(row_selector(tape, L + 1, L), out, /*trans_a=*/true);
}

}  // namespace simta
