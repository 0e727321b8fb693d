#pragma once

#include <optional>
#include <string>
#include <vector>

#include "simta/attention.hpp"
#include "simta/cohort.hpp"
#include "simta/tape.hpp"
#include "simta/tensor.hpp"

namespace simta {

enum class ModelFamily { kSimTA, kTSimTA };

const char* family_name(ModelFamily f);
std::optional<ModelFamily> family_from_name(const std::string& name);

enum class FusionKind { kUnimodal, kConcat, kConcatSA, kLateMean };

struct FusionVariant {
    FusionKind kind = FusionKind::kConcatSA;
    Modality unimodal_modality = Modality::kBlood;  // kUnimodal only

    std::string name() const;
    static std::optional<FusionVariant> parse(const std::string& s);
};

struct FusionConfig {
    FusionVariant variant;
    int sa_heads = 2;                     // ConcatSA only, must divide d_model
    bool use_positional_encoding = false; // ConcatSA only
    int mlp_hidden = 64;
    double p_modality_drop = 0.25;
};

struct ModelDims {
    int d_model = 32;
    int n_blocks = 1;  // N of the block family
    int n_inner = 3;   // SimTA layers per block (and per baseline stack)
    int n_tasks = 4;
    double tau_days = 30.0;
};

// Per-modality input sizes the model was built against.
struct FeatureDims {
    int n_blood = 0;
    int n_imaging = 0;
    int med_vocab = 1;  // includes UNK
};

struct ModalityEncoderParams {
    Modality modality = Modality::kBlood;
    Tensor proj_w, proj_b;  // (F_in, d), (d)
    // exactly one of these is populated, by family
    std::vector<SimTALayerParams> simta_stack;
    std::vector<TSimTABlockParams> blocks;
    Tensor query;        // (1, d) virtual query event embedding
    Tensor missing_rep;  // (1, d) learned stand-in for an absent modality

    void collect(std::vector<Tensor*>& out);
};

// One standard transformer encoder block over the M modality tokens.
struct SaFusionParams {
    std::vector<Tensor> w_q, w_k, w_v;  // per head: (d, d/heads)
    Tensor w_o, b_o;                    // (d, d), (d)
    LayerNormParams ln1, ln2;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    std::vector<Tensor> pos;  // per modality (1, d); empty unless enabled

    void collect(std::vector<Tensor*>& out);
};

struct ModelParams {
    ModelFamily family = ModelFamily::kTSimTA;
    FusionConfig fusion;
    ModelDims dims;
    FeatureDims feature_dims;
    uint64_t init_seed = 0;

    std::vector<ModalityEncoderParams> encoders;  // fixed modality order
    Tensor med_embeddings;                        // (V, d); medication active only
    std::optional<SaFusionParams> sa;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // fusion MLP (Concat / ConcatSA)
    Tensor heads_w, heads_b;                // (fused_dim, T), (T)

    bool has_modality(Modality m) const;
    ModalityEncoderParams& encoder(Modality m);
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<Tensor*> param_list();
};

// Builds and initializes a model. Unimodal variants carry one encoder; fusion
// variants carry all three. kLateMean is a training-protocol variant composed
// of unimodal models and is rejected here.
ModelParams init_model(ModelFamily family, const FusionConfig& fusion,
                       const ModelDims& dims, const FeatureDims& feature_dims,
                       uint64_t seed);

void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

struct EncodedModality {
    Modality modality = Modality::kBlood;
    Value rep;            // (1, d)
    bool present = false; // had at least one event before the cutoff
};

struct ForwardOptions {
    bool training = false;
    Rng* dropout_rng = nullptr;     // required when training
    AttnRecorder* recorder = nullptr;
};

// Per-modality representations at a cutoff: events are embedded (medication
// codes mean-pooled over their token embeddings), projected to d_model and
// summarized by the family encoder; absent modalities yield the learned
// missing representation.
std::vector<EncodedModality> encode_modalities(Tape& tape,
                                               const PreprocessedPatient& truncated,
                                               double cutoff_days, ModelParams& params,
                                               const ForwardOptions& opt = {});

// Single-modality encoding; used by the attention dump.
EncodedModality encode_modality(Tape& tape, const PreprocessedPatient& truncated,
                                double cutoff_days, ModelParams& params, Modality m,
                                AttnRecorder* rec = nullptr);

// Training-time multimodal dropout: each present modality is independently
// replaced by its missing representation with probability p; if every present
// modality would drop, one uniformly chosen present modality is retained.
// Identity in evaluation.
void modality_dropout(Tape& tape, std::vector<EncodedModality>& reps,
                      ModelParams& params, Rng& rng, double p, bool training);

Value fuse_concat(Tape& tape, const std::vector<EncodedModality>& reps,
                  ModelParams& params);
Value fuse_concat_sa(Tape& tape, const std::vector<EncodedModality>& reps,
                     ModelParams& params);

// T per-task probabilities from the fused representation, shape (1, T).
Value multitask_heads(Tape& tape, Value fused, ModelParams& params);

// Full forward pass to task probabilities for one patient.
Value model_forward(Tape& tape, const PreprocessedPatient& truncated,
                    double cutoff_days, ModelParams& params,
                    const ForwardOptions& opt = {});

// Unweighted mean of unimodal task probabilities over present modalities.
std::vector<double> late_fusion_mean(
    const std::vector<std::vector<double>>& unimodal_probs,
    const std::vector<bool>& present);

}  // namespace simta
