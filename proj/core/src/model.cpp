#include "simta/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace simta {

using ordered_json = nlohmann::ordered_json;

const char* family_name(ModelFamily f) {
    return f == ModelFamily::kSimTA ? "SimTA" : "TSimTA";
}

std::optional<ModelFamily> family_from_name(const std::string& name) {
    if (name == "SimTA") return ModelFamily::kSimTA;
    if (name == "TSimTA") return ModelFamily::kTSimTA;
    return std::nullopt;
}

std::string FusionVariant::name() const {
    switch (kind) {
        case FusionKind::kUnimodal:
            return std::string("Unimodal:") + modality_name(unimodal_modality);
        case FusionKind::kConcat: return "Concat";
        case FusionKind::kConcatSA: return "ConcatSA";
        case FusionKind::kLateMean: return "LateMean";
    }
    return "?";
}

std::optional<FusionVariant> FusionVariant::parse(const std::string& s) {
    FusionVariant v;
    if (s == "Concat") {
        v.kind = FusionKind::kConcat;
        return v;
    }
    if (s == "ConcatSA") {
        v.kind = FusionKind::kConcatSA;
        return v;
    }
    if (s == "LateMean") {
        v.kind = FusionKind::kLateMean;
        return v;
    }
    if (s.rfind("Unimodal:", 0) == 0) {
        auto m = modality_from_name(s.substr(9));
        if (!m) return std::nullopt;
        v.kind = FusionKind::kUnimodal;
        v.unimodal_modality = *m;
        return v;
    }
    return std::nullopt;
}

void ModalityEncoderParams::collect(std::vector<Tensor*>& out) {
    out.push_back(&proj_w);
    out.push_back(&proj_b);
    for (auto& l : simta_stack) l.collect(out);
    for (auto& b : blocks) b.collect(out);
    out.push_back(&query);
    out.push_back(&missing_rep);
}

void SaFusionParams::collect(std::vector<Tensor*>& out) {
    for (size_t h = 0; h < w_q.size(); ++h) {
        out.push_back(&w_q[h]);
        out.push_back(&w_k[h]);
        out.push_back(&w_v[h]);
    }
    out.push_back(&w_o);
    out.push_back(&b_o);
    ln1.collect(out);
    ln2.collect(out);
    out.push_back(&ffn_w1);
    out.push_back(&ffn_b1);
    out.push_back(&ffn_w2);
    out.push_back(&ffn_b2);
    for (auto& p : pos) out.push_back(&p);
}

bool ModelParams::has_modality(Modality m) const {
    for (const auto& e : encoders)
        if (e.modality == m) return true;
    return false;
}

ModalityEncoderParams& ModelParams::encoder(Modality m) {
    for (auto& e : encoders)
        if (e.modality == m) return e;
    throw std::invalid_argument(std::string("model: unknown modality ") +
                                modality_name(m));
}

namespace {

Tensor xavier(size_t rows, size_t cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> d(rows * cols);
    for (double& v : d) v = rng.uniform(-a, a);
    return Tensor::matrix(rows, cols, std::move(d), true);
}

void collect_named(ModelParams& p,
                   std::vector<std::pair<std::string, Tensor*>>& out) {
    auto add_layer = [&](const std::string& prefix, SimTALayerParams& l) {
        out.push_back({prefix + ".lambda_raw", &l.lambda_raw});
        out.push_back({prefix + ".bias", &l.bias});
        out.push_back({prefix + ".w_v", &l.w_v});
        out.push_back({prefix + ".b_v", &l.b_v});
        out.push_back({prefix + ".w_f1", &l.w_f1});
        out.push_back({prefix + ".b_f1", &l.b_f1});
        out.push_back({prefix + ".w_f2", &l.w_f2});
        out.push_back({prefix + ".b_f2", &l.b_f2});
    };
    for (auto& enc : p.encoders) {
        const std::string base = modality_name(enc.modality);
        out.push_back({base + ".proj_w", &enc.proj_w});
        out.push_back({base + ".proj_b", &enc.proj_b});
        for (size_t i = 0; i < enc.simta_stack.size(); ++i)
            add_layer(base + ".stack" + std::to_string(i), enc.simta_stack[i]);
        for (size_t bi = 0; bi < enc.blocks.size(); ++bi) {
            auto& blk = enc.blocks[bi];
            const std::string bb = base + ".block" + std::to_string(bi);
            for (size_t i = 0; i < blk.simta_layers.size(); ++i)
                add_layer(bb + ".simta" + std::to_string(i), blk.simta_layers[i]);
            out.push_back({bb + ".ln1.gamma", &blk.ln1.gamma});
            out.push_back({bb + ".ln1.beta", &blk.ln1.beta});
            out.push_back({bb + ".ln2.gamma", &blk.ln2.gamma});
            out.push_back({bb + ".ln2.beta", &blk.ln2.beta});
            out.push_back({bb + ".ffn_w1", &blk.ffn_w1});
            out.push_back({bb + ".ffn_b1", &blk.ffn_b1});
            out.push_back({bb + ".ffn_w2", &blk.ffn_w2});
            out.push_back({bb + ".ffn_b2", &blk.ffn_b2});
        }
        out.push_back({base + ".query", &enc.query});
        out.push_back({base + ".missing_rep", &enc.missing_rep});
    }
    if (p.has_modality(Modality::kMedication))
        out.push_back({"med_embeddings", &p.med_embeddings});
    if (p.sa) {
        auto& sa = *p.sa;
        for (size_t h = 0; h < sa.w_q.size(); ++h) {
            const std::string hh = "sa.head" + std::to_string(h);
            out.push_back({hh + ".w_q", &sa.w_q[h]});
            out.push_back({hh + ".w_k", &sa.w_k[h]});
            out.push_back({hh + ".w_v", &sa.w_v[h]});
        }
        out.push_back({"sa.w_o", &sa.w_o});
        out.push_back({"sa.b_o", &sa.b_o});
        out.push_back({"sa.ln1.gamma", &sa.ln1.gamma});
        out.push_back({"sa.ln1.beta", &sa.ln1.beta});
        out.push_back({"sa.ln2.gamma", &sa.ln2.gamma});
        out.push_back({"sa.ln2.beta", &sa.ln2.beta});
        out.push_back({"sa.ffn_w1", &sa.ffn_w1});
        out.push_back({"sa.ffn_b1", &sa.ffn_b1});
        out.push_back({"sa.ffn_w2", &sa.ffn_w2});
        out.push_back({"sa.ffn_b2", &sa.ffn_b2});
        for (size_t m = 0; m < sa.pos.size(); ++m)
            out.push_back({"sa.pos" + std::to_string(m), &sa.pos[m]});
    }
    const bool fusion_mlp = p.fusion.variant.kind == FusionKind::kConcat ||
                            p.fusion.variant.kind == FusionKind::kConcatSA;
    if (fusion_mlp) {
        out.push_back({"mlp_w1", &p.mlp_w1});
        out.push_back({"mlp_b1", &p.mlp_b1});
        out.push_back({"mlp_w2", &p.mlp_w2});
        out.push_back({"mlp_b2", &p.mlp_b2});
    }
    out.push_back({"heads_w", &p.heads_w});
    out.push_back({"heads_b", &p.heads_b});
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect_named(*this, out);
    return out;
}

std::vector<Tensor*> ModelParams::param_list() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

ModelParams init_model(ModelFamily family, const FusionConfig& fusion,
                       const ModelDims& dims, const FeatureDims& feature_dims,
                       uint64_t seed) {
    if (fusion.variant.kind == FusionKind::kLateMean)
        throw std::invalid_argument(
            "init_model: LateMean composes unimodal models, train those instead");
    const size_t d = static_cast<size_t>(dims.d_model);
    if (d < 1) throw std::invalid_argument("init_model: d_model must be >= 1");
    if (fusion.variant.kind == FusionKind::kConcatSA &&
        (fusion.sa_heads < 1 || dims.d_model % fusion.sa_heads != 0))
        throw std::invalid_argument("init_model: sa_heads must divide d_model");

    ModelParams p;
    p.family = family;
    p.fusion = fusion;
    p.dims = dims;
    p.feature_dims = feature_dims;
    p.init_seed = seed;
    Rng rng(seed);

    std::vector<Modality> active;
    if (fusion.variant.kind == FusionKind::kUnimodal)
        active.push_back(fusion.variant.unimodal_modality);
    else
        active.assign(kModalityOrder.begin(), kModalityOrder.end());

    for (Modality m : active) {
        ModalityEncoderParams enc;
        enc.modality = m;
        size_t f_in = 0;
        switch (m) {
            case Modality::kBlood: f_in = feature_dims.n_blood; break;
            case Modality::kImaging: f_in = feature_dims.n_imaging; break;
            case Modality::kMedication: f_in = d; break;  // pooled embeddings
        }
        if (f_in == 0)
            throw std::invalid_argument(std::string("init_model: modality ") +
                                        modality_name(m) + " has no input features");
        enc.proj_w = xavier(f_in, d, rng);
        enc.proj_b = Tensor::zeros({d}, true);
        if (family == ModelFamily::kSimTA) {
            for (int i = 0; i < dims.n_inner; ++i)
                enc.simta_stack.push_back(SimTALayerParams::init(d, rng, dims.tau_days));
        } else {
            for (int b = 0; b < dims.n_blocks; ++b)
                enc.blocks.push_back(
                    TSimTABlockParams::init(d, dims.n_inner, rng, dims.tau_days));
        }
        enc.query = xavier(1, d, rng);
        enc.missing_rep = Tensor::zeros({1, d}, true);
        p.encoders.push_back(std::move(enc));
    }

    if (p.has_modality(Modality::kMedication)) {
        if (feature_dims.med_vocab < 1)
            throw std::invalid_argument("init_model: medication vocabulary is empty");
        p.med_embeddings = xavier(feature_dims.med_vocab, d, rng);
    }

    const size_t n_mod = p.encoders.size();
    if (fusion.variant.kind == FusionKind::kConcatSA) {
        SaFusionParams sa;
        const size_t dh = d / fusion.sa_heads;
        for (int h = 0; h < fusion.sa_heads; ++h) {
            sa.w_q.push_back(xavier(d, dh, rng));
            sa.w_k.push_back(xavier(d, dh, rng));
            sa.w_v.push_back(xavier(d, dh, rng));
        }
        // residual branches start at zero: the block opens as a pure
        // normalization of the modality tokens and learns mixing from there
        sa.w_o = Tensor::zeros({d, d}, true);
        sa.b_o = Tensor::zeros({d}, true);
        sa.ln1 = LayerNormParams::init(d);
        sa.ln2 = LayerNormParams::init(d);
        sa.ffn_w1 = xavier(d, 4 * d, rng);
        sa.ffn_b1 = Tensor::zeros({4 * d}, true);
        sa.ffn_w2 = Tensor::zeros({4 * d, d}, true);
        sa.ffn_b2 = Tensor::zeros({d}, true);
        if (fusion.use_positional_encoding)
            for (size_t m = 0; m < n_mod; ++m) sa.pos.push_back(xavier(1, d, rng));
        p.sa = std::move(sa);
    }

    size_t fused_dim = d;
    if (fusion.variant.kind == FusionKind::kConcat ||
        fusion.variant.kind == FusionKind::kConcatSA) {
        const size_t cat = n_mod * d;
        const size_t hidden = static_cast<size_t>(fusion.mlp_hidden);
        p.mlp_w1 = xavier(cat, hidden, rng);
        p.mlp_b1 = Tensor::zeros({hidden}, true);
        p.mlp_w2 = xavier(hidden, hidden, rng);
        p.mlp_b2 = Tensor::zeros({hidden}, true);
        fused_dim = hidden;
    }

    // zero-initialized heads start every task at probability one half
    p.heads_w = Tensor::zeros({fused_dim, static_cast<size_t>(dims.n_tasks)}, true);
    p.heads_b = Tensor::zeros({static_cast<size_t>(dims.n_tasks)}, true);
    return p;
}

// --- forward --------------------------------------------------------------

namespace {

Value encode_one(Tape& tape, const PreprocessedPatient& truncated, double cutoff_days,
                 ModelParams& params, ModalityEncoderParams& enc, bool& present,
                 AttnRecorder* rec) {
    std::vector<double> t;
    std::vector<const PreprocessedEvent*> events;
    for (const auto& e : truncated.events) {
        if (e.modality != enc.modality) continue;
        if (e.t_days > cutoff_days)
            throw std::invalid_argument("encode_modalities: event after cutoff");
        events.push_back(&e);
        t.push_back(e.t_days);
    }
    if (events.empty()) {
        present = false;
        return tape.leaf(enc.missing_rep);
    }
    present = true;
    const size_t L = events.size();

    Value inputs;
    if (enc.modality == Modality::kMedication) {
        std::vector<int32_t> tokens;
        std::vector<double> pool;  // (L, K) mean-pooling matrix
        std::vector<std::pair<size_t, size_t>> spans;
        for (const auto* e : events) {
            spans.push_back({tokens.size(), e->tokens.size()});
            tokens.insert(tokens.end(), e->tokens.begin(), e->tokens.end());
        }
        pool.assign(L * tokens.size(), 0.0);
        for (size_t i = 0; i < L; ++i) {
            const auto [off, len] = spans[i];
            for (size_t k = 0; k < len; ++k)
                pool[i * tokens.size() + off + k] = 1.0 / static_cast<double>(len);
        }
        Value emb = tape.embedding(tape.leaf(params.med_embeddings), tokens);
        inputs = tape.matmul(tape.constant({L, tokens.size()}, std::move(pool)), emb);
    } else {
        const size_t f_in = enc.proj_w.shape[0];
        std::vector<double> flat;
        flat.reserve(L * f_in);
        for (const auto* e : events) {
            if (e->features.size() != f_in)
                throw std::invalid_argument(
                    std::string("encode_modalities: ") + modality_name(enc.modality) +
                    " event width " + std::to_string(e->features.size()) +
                    " does not match model input width " + std::to_string(f_in));
            flat.insert(flat.end(), e->features.begin(), e->features.end());
        }
        inputs = tape.constant({L, f_in}, std::move(flat));
    }

    Value proj = tape.add(tape.matmul(inputs, tape.leaf(enc.proj_w)),
                          tape.leaf(enc.proj_b));
    if (params.family == ModelFamily::kSimTA)
        return summarize_sequence(tape, proj, t, cutoff_days, enc.query,
                                  &enc.simta_stack, nullptr, rec);
    return summarize_sequence(tape, proj, t, cutoff_days, enc.query, nullptr,
                              &enc.blocks, rec);
}

}  // namespace

std::vector<EncodedModality> encode_modalities(Tape& tape,
                                               const PreprocessedPatient& truncated,
                                               double cutoff_days, ModelParams& params,
                                               const ForwardOptions& opt) {
    std::vector<EncodedModality> out;
    for (auto& enc : params.encoders) {
        EncodedModality em;
        em.modality = enc.modality;
        em.rep = encode_one(tape, truncated, cutoff_days, params, enc, em.present,
                            opt.recorder);
        out.push_back(em);
    }
    return out;
}

EncodedModality encode_modality(Tape& tape, const PreprocessedPatient& truncated,
                                double cutoff_days, ModelParams& params, Modality m,
                                AttnRecorder* rec) {
    EncodedModality em;
    em.modality = m;
    em.rep = encode_one(tape, truncated, cutoff_days, params, params.encoder(m),
                        em.present, rec);
    return em;
}

void modality_dropout(Tape& tape, std::vector<EncodedModality>& reps,
                      ModelParams& params, Rng& rng, double p, bool training) {
    if (!training) return;
    std::vector<size_t> present_idx;
    for (size_t i = 0; i < reps.size(); ++i)
        if (reps[i].present) present_idx.push_back(i);
    if (present_idx.empty())
        throw std::invalid_argument("modality_dropout: no present modality");

    std::vector<uint8_t> drop(reps.size(), 0);
    size_t dropped = 0;
    for (size_t i : present_idx) {
        if (rng.uniform() < p) {
            drop[i] = 1;
            ++dropped;
        }
    }
    if (dropped == present_idx.size()) {
        // keep-one rule: retain a uniformly chosen present modality
        drop[present_idx[rng.uniform_int(present_idx.size())]] = 0;
    }
    for (size_t i = 0; i < reps.size(); ++i) {
        if (!drop[i]) continue;
        reps[i].rep = tape.leaf(params.encoder(reps[i].modality).missing_rep);
        reps[i].present = false;
    }
}

namespace {

Value fusion_mlp(Tape& tape, Value cat, ModelParams& p) {
    Value h = tape.relu(tape.add(tape.matmul(cat, tape.leaf(p.mlp_w1)),
                                 tape.leaf(p.mlp_b1)));
    return tape.add(tape.matmul(h, tape.leaf(p.mlp_w2)), tape.leaf(p.mlp_b2));
}

void check_slots(const std::vector<EncodedModality>& reps, const ModelParams& p,
                 const char* op) {
    if (reps.size() != p.encoders.size())
        throw std::invalid_argument(std::string(op) + ": expected " +
                                    std::to_string(p.encoders.size()) +
                                    " modality slots, got " + std::to_string(reps.size()));
}

}  // namespace

Value fuse_concat(Tape& tape, const std::vector<EncodedModality>& reps,
                  ModelParams& params) {
    check_slots(reps, params, "fuse_concat");
    std::vector<Value> parts;
    for (const auto& r : reps) parts.push_back(r.rep);
    return fusion_mlp(tape, tape.concat_last(parts), params);
}

Value fuse_concat_sa(Tape& tape, const std::vector<EncodedModality>& reps,
                     ModelParams& params) {
    check_slots(reps, params, "fuse_concat_sa");
    if (!params.sa) throw std::invalid_argument("fuse_concat_sa: missing SA parameters");
    auto& sa = *params.sa;
    const size_t m_count = reps.size();
    const size_t d = static_cast<size_t>(params.dims.d_model);

    // stack the modality representations into an (M, d) token matrix
    Value tokens;
    for (size_t m = 0; m < m_count; ++m) {
        Value lifted = tape.matmul(row_selector(tape, m_count, m), reps[m].rep);
        tokens = m == 0 ? lifted : tape.add(tokens, lifted);
    }
    if (!sa.pos.empty()) {
        for (size_t m = 0; m < m_count; ++m)
            tokens = tape.add(tokens, tape.matmul(row_selector(tape, m_count, m),
                                                  tape.leaf(sa.pos[m])));
    }

    const size_t heads = sa.w_q.size();
    const size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Value> head_outs;
    std::vector<uint8_t> full(m_count * m_count, 1);
    for (size_t h = 0; h < heads; ++h) {
        Value q = tape.matmul(tokens, tape.leaf(sa.w_q[h]));
        Value k = tape.matmul(tokens, tape.leaf(sa.w_k[h]));
        Value v = tape.matmul(tokens, tape.leaf(sa.w_v[h]));
        Value scores = tape.affine(tape.matmul(q, k, false, true), scale, 0.0);
        Value w = tape.softmax_masked(scores, full);
        head_outs.push_back(tape.matmul(w, v));
    }
    Value attn = tape.add(
        tape.matmul(tape.concat_last(head_outs), tape.leaf(sa.w_o)), tape.leaf(sa.b_o));
    Value y = tape.layer_norm(tape.add(tokens, attn), tape.leaf(sa.ln1.gamma),
                              tape.leaf(sa.ln1.beta));
    Value hidden = tape.relu(
        tape.add(tape.matmul(y, tape.leaf(sa.ffn_w1)), tape.leaf(sa.ffn_b1)));
    Value ffn =
        tape.add(tape.matmul(hidden, tape.leaf(sa.ffn_w2)), tape.leaf(sa.ffn_b2));
    Value out = tape.layer_norm(tape.add(y, ffn), tape.leaf(sa.ln2.gamma),
                                tape.leaf(sa.ln2.beta));

    // back to one row: concat the transformed tokens and run the MLP
    std::vector<Value> rows;
    for (size_t m = 0; m < m_count; ++m)
        rows.push_back(tape.matmul(row_selector(tape, m_count, m), out, true));
    return fusion_mlp(tape, tape.concat_last(rows), params);
}

Value multitask_heads(Tape& tape, Value fused, ModelParams& params) {
    return tape.sigmoid(tape.add(tape.matmul(fused, tape.leaf(params.heads_w)),
                                 tape.leaf(params.heads_b)));
}

Value model_forward(Tape& tape, const PreprocessedPatient& truncated,
                    double cutoff_days, ModelParams& params,
                    const ForwardOptions& opt) {
    auto reps = encode_modalities(tape, truncated, cutoff_days, params, opt);
    if (opt.training) {
        if (!opt.dropout_rng)
            throw std::invalid_argument("model_forward: training requires a dropout rng");
        bool any_present = false;
        for (const auto& r : reps) any_present = any_present || r.present;
        // a patient with no events of any active modality already sits on the
        // learned missing vectors; there is nothing left to drop
        if (any_present)
            modality_dropout(tape, reps, params, *opt.dropout_rng,
                             params.fusion.p_modality_drop, true);
    }
    Value fused;
    switch (params.fusion.variant.kind) {
        case FusionKind::kUnimodal:
            fused = reps.at(0).rep;
            break;
        case FusionKind::kConcat:
            fused = fuse_concat(tape, reps, params);
            break;
        case FusionKind::kConcatSA:
            fused = fuse_concat_sa(tape, reps, params);
            break;
        case FusionKind::kLateMean:
            throw std::invalid_argument(
                "model_forward: LateMean averages unimodal models at the protocol level");
    }
    return multitask_heads(tape, fused, params);
}

std::vector<double> late_fusion_mean(
    const std::vector<std::vector<double>>& unimodal_probs,
    const std::vector<bool>& present) {
    if (unimodal_probs.size() != present.size())
        throw std::invalid_argument("late_fusion_mean: flag/probability size mismatch");
    size_t n_present = 0;
    size_t t_count = 0;
    for (size_t m = 0; m < unimodal_probs.size(); ++m) {
        if (!present[m]) continue;
        if (n_present == 0)
            t_count = unimodal_probs[m].size();
        else if (unimodal_probs[m].size() != t_count)
            throw std::invalid_argument("late_fusion_mean: task arity mismatch");
        ++n_present;
    }
    if (n_present == 0)
        throw std::invalid_argument("late_fusion_mean: no present modality");
    std::vector<double> out(t_count, 0.0);
    for (size_t m = 0; m < unimodal_probs.size(); ++m) {
        if (!present[m]) continue;
        for (size_t t = 0; t < t_count; ++t) out[t] += unimodal_probs[m][t];
    }
    for (double& v : out) v /= static_cast<double>(n_present);
    return out;
}

// --- serialization ----------------------------------------------------------

void save_model(const ModelParams& params, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["family"] = family_name(params.family);
    j["variant"] = params.fusion.variant.name();
    j["n_blocks"] = params.dims.n_blocks;
    j["n_inner"] = params.dims.n_inner;
    j["d_model"] = params.dims.d_model;
    j["n_tasks"] = params.dims.n_tasks;
    j["tau_days"] = params.dims.tau_days;
    j["sa_heads"] = params.fusion.sa_heads;
    j["use_positional_encoding"] = params.fusion.use_positional_encoding;
    j["mlp_hidden"] = params.fusion.mlp_hidden;
    j["p_modality_drop"] = params.fusion.p_modality_drop;
    j["seed"] = params.init_seed;
    j["n_blood_features"] = params.feature_dims.n_blood;
    j["n_imaging_features"] = params.feature_dims.n_imaging;
    j["med_vocab"] = params.feature_dims.med_vocab;
    ordered_json order = ordered_json::array();
    for (const auto& e : params.encoders) order.push_back(modality_name(e.modality));
    j["modality_order"] = std::move(order);

    ordered_json blob;
    auto& self = const_cast<ModelParams&>(params);
    for (auto& [name, t] : self.named_params()) {
        ordered_json tj;
        tj["shape"] = t->shape;
        tj["data"] = t->data;
        blob[name] = std::move(tj);
    }
    j["params"] = std::move(blob);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file: " + path);
    out << j.dump() << "\n";
}

ModelParams load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("model file " + path + ": " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw DataError("model file " + path + ": unsupported format version");

    auto family = family_from_name(j.at("family").get<std::string>());
    auto variant = FusionVariant::parse(j.at("variant").get<std::string>());
    if (!family || !variant)
        throw DataError("model file " + path + ": unknown family or variant");

    FusionConfig fusion;
    fusion.variant = *variant;
    fusion.sa_heads = j.at("sa_heads").get<int>();
    fusion.use_positional_encoding = j.at("use_positional_encoding").get<bool>();
    fusion.mlp_hidden = j.at("mlp_hidden").get<int>();
    fusion.p_modality_drop = j.at("p_modality_drop").get<double>();
    ModelDims dims;
    dims.n_blocks = j.at("n_blocks").get<int>();
    dims.n_inner = j.at("n_inner").get<int>();
    dims.d_model = j.at("d_model").get<int>();
    dims.n_tasks = j.at("n_tasks").get<int>();
    dims.tau_days = j.at("tau_days").get<double>();
    FeatureDims fd;
    fd.n_blood = j.at("n_blood_features").get<int>();
    fd.n_imaging = j.at("n_imaging_features").get<int>();
    fd.med_vocab = j.at("med_vocab").get<int>();

    ModelParams params = init_model(*family, fusion, dims, fd,
                                    j.at("seed").get<uint64_t>());
    const auto& blob = j.at("params");
    for (auto& [name, t] : params.named_params()) {
        if (!blob.contains(name))
            throw DataError("model file " + path + ": missing parameter " + name);
        const auto shape = blob[name].at("shape").get<std::vector<size_t>>();
        if (shape != t->shape)
            throw DataError("model file " + path + ": parameter " + name +
                            " has shape " + shape_str(shape) + ", expected " +
                            shape_str(t->shape));
        t->data = blob[name].at("data").get<std::vector<double>>();
    }
    return params;
}

}  // namespace simta
