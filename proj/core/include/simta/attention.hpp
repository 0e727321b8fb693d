#pragma once

#include <vector>

#include "simta/rng.hpp"
#include "simta/tape.hpp"
#include "simta/tensor.hpp"

namespace simta {

// One modality event stream relative to a prediction cutoff. Feature vectors
// are the already-embedded model inputs (width d_in before projection,
// d_model inside the encoder). Events are kept sorted ascending by t_days,
// ties in original record order.
struct AsyncSequence {
    std::vector<double> t_days;
    std::vector<std::vector<double>> x;
    double cutoff_days = 0.0;

    size_t size() const { return t_days.size(); }
    bool empty() const { return t_days.empty(); }
    void sort_by_time();
};

// Content-independent temporal attention: scores are a learned decreasing
// function of elapsed time only. Effective decay is softplus(lambda_raw),
// strictly positive, so weight always falls with distance in time.
struct SimTALayerParams {
    Tensor lambda_raw;  // (1)
    Tensor bias;        // (1)
    Tensor w_v, b_v;    // (d,d), (d)
    Tensor w_f1, b_f1;  // (d,4d), (4d)
    Tensor w_f2, b_f2;  // (4d,d), (d)
    double tau_days = 30.0;

    static SimTALayerParams init(size_t d_model, Rng& rng, double tau_days = 30.0);
    void collect(std::vector<Tensor*>& out);
};

struct LayerNormParams {
    Tensor gamma, beta;  // (d), (d)
    static LayerNormParams init(size_t d);
    void collect(std::vector<Tensor*>& out);
};

// Transformer encoder block whose attention sub-layer is a SimTA stack:
//   y   = ln1(x + SimTAStack(x))
//   out = ln2(y + FFN(y))
struct TSimTABlockParams {
    std::vector<SimTALayerParams> simta_layers;
    LayerNormParams ln1, ln2;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // (d,4d),(4d),(4d,d),(d)

    static TSimTABlockParams init(size_t d_model, size_t n_inner, Rng& rng,
                                  double tau_days = 30.0);
    void collect(std::vector<Tensor*>& out);
};

// Row-level dump of attention weights: (layer, target_t, source_t, weight).
struct AttnRecord {
    int layer = 0;
    double target_t = 0.0;
    double source_t = 0.0;
    double weight = 0.0;
};

struct AttnRecorder {
    std::vector<AttnRecord> rows;
    int next_layer = 0;
};

// Attention weights of one target position given causal elapsed times
// deltas[j] = t_target - t_j >= 0. Plain math path, used as the reference
// route the tape-built weights are checked against.
std::vector<double> simta_score_weights(const std::vector<double>& deltas,
                                        const SimTALayerParams& params);

// Forward passes. `seq` is the (L x d) hidden sequence on the tape; `t_days`
// are the per-position timestamps (sorted ascending) used to form the causal
// elapsed-time grid.
Value simta_layer_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                          SimTALayerParams& params, AttnRecorder* rec = nullptr);

Value simta_stack_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                          std::vector<SimTALayerParams>& layers,
                          AttnRecorder* rec = nullptr);

Value tsimta_block_forward(Tape& tape, Value seq, const std::vector<double>& t_days,
                           TSimTABlockParams& params, AttnRecorder* rec = nullptr);

// Appends a learnable virtual query event at the cutoff timestamp, runs the
// given encoder (SimTA stack or TSimTA block list, per family), and returns
// the (1 x d) output at the query position. seq must be non-empty; an empty
// modality is represented upstream by its learned missing vector.
Value summarize_sequence(Tape& tape, Value seq, const std::vector<double>& t_days,
                         double cutoff_days, Tensor& query_embedding,
                         std::vector<SimTALayerParams>* simta_stack,
                         std::vector<TSimTABlockParams>* blocks,
                         AttnRecorder* rec = nullptr);

// (rows x 1) selector picking row `index`; used to extract and stack rows
// with matmul, keeping the primitive set closed.
Value row_selector(Tape& tape, size_t rows, size_t index);

}  // namespace simta
