#include "simta/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "simta/optim.hpp"
#include "simta/stats.hpp"

namespace simta {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw DataError(std::string("cannot open ") + what + ": " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError(std::string(what) + " " + path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const ordered_json& j, int indent) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << j.dump(indent) << "\n";
}

ordered_json config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["dataset"] = cfg.dataset_path;
    j["out_dir"] = cfg.out_dir;
    j["family"] = family_name(cfg.family);
    j["variant"] = cfg.variant.name();
    j["d_model"] = cfg.dims.d_model;
    j["n_blocks"] = cfg.dims.n_blocks;
    j["n_inner"] = cfg.dims.n_inner;
    j["n_tasks"] = cfg.dims.n_tasks;
    j["tau_days"] = cfg.dims.tau_days;
    j["sa_heads"] = cfg.sa_heads;
    j["use_positional_encoding"] = cfg.use_positional_encoding;
    j["mlp_hidden"] = cfg.mlp_hidden;
    j["p_modality_drop"] = cfg.p_modality_drop;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["k_folds"] = cfg.k_folds;
    j["train_cutoff_lo"] = cfg.train_cutoff_lo;
    j["train_cutoff_hi"] = cfg.train_cutoff_hi;
    j["seed"] = cfg.seed;
    j["resample_cutoffs"] = cfg.resample_cutoffs;
    return j;
}

RunConfig config_from_json(const ordered_json& j) {
    RunConfig cfg;
    cfg.dataset_path = j.at("dataset").get<std::string>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    auto fam = family_from_name(j.at("family").get<std::string>());
    auto var = FusionVariant::parse(j.at("variant").get<std::string>());
    if (!fam || !var) throw DataError("config: unknown family or variant");
    cfg.family = *fam;
    cfg.variant = *var;
    cfg.dims.d_model = j.at("d_model").get<int>();
    cfg.dims.n_blocks = j.at("n_blocks").get<int>();
    cfg.dims.n_inner = j.at("n_inner").get<int>();
    cfg.dims.n_tasks = j.at("n_tasks").get<int>();
    cfg.dims.tau_days = j.at("tau_days").get<double>();
    cfg.sa_heads = j.at("sa_heads").get<int>();
    cfg.use_positional_encoding = j.at("use_positional_encoding").get<bool>();
    cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
    cfg.p_modality_drop = j.at("p_modality_drop").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.k_folds = j.at("k_folds").get<int>();
    cfg.train_cutoff_lo = j.at("train_cutoff_lo").get<double>();
    cfg.train_cutoff_hi = j.at("train_cutoff_hi").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.resample_cutoffs = j.at("resample_cutoffs").get<bool>();
    return cfg;
}

uint64_t derive_seed(uint64_t base, uint64_t fold, uint64_t stream) {
    uint64_t x = base;
    x ^= 0x9e3779b97f4a7c15ull * (fold + 1);
    x ^= 0xc2b2ae3d27d4eb4full * (stream + 1);
    return x;
}

int variant_tag(const FusionVariant& v) {
    if (v.kind != FusionKind::kUnimodal) return 0;
    return 1 + static_cast<int>(v.unimodal_modality);
}

struct FoldSplit {
    std::vector<PatientRecord> train;
    std::vector<PatientRecord> test;
};

struct TrainedFold {
    PreprocessStats preproc;
    // (variant name, params); one entry, or three for LateMean
    std::vector<std::pair<std::string, ModelParams>> models;
    std::vector<std::pair<std::string, std::vector<double>>> loss_curves;
};

FusionConfig fusion_for(const RunConfig& cfg, const FusionVariant& variant) {
    FusionConfig f;
    f.variant = variant;
    f.sa_heads = cfg.sa_heads;
    f.use_positional_encoding = cfg.use_positional_encoding;
    f.mlp_hidden = cfg.mlp_hidden;
    f.p_modality_drop = cfg.p_modality_drop;
    return f;
}

double draw_cutoff(Rng& rng, const RunConfig& cfg, const PreprocessedPatient& p) {
    double hi = cfg.train_cutoff_hi;
    if (p.event_indicator) hi = std::min(hi, *p.time_to_event_days);
    if (hi <= cfg.train_cutoff_lo) return cfg.train_cutoff_lo;
    return rng.uniform(cfg.train_cutoff_lo, hi);
}

std::pair<ModelParams, std::vector<double>> train_one_model(
    const RunConfig& cfg, const FusionVariant& variant,
    const std::vector<PreprocessedPatient>& train, const FeatureDims& fdims,
    int fold) {
    const int tag = variant_tag(variant);
    ModelParams params =
        init_model(cfg.family, fusion_for(cfg, variant), cfg.dims, fdims,
                   derive_seed(cfg.seed, fold, 100 + tag));
    auto tensors = params.param_list();
    AdamState adam;
    adam.init(tensors);
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;

    Rng rng(cfg.seed, derive_seed(7, fold, 10 + tag));
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    // fixed-per-patient cutoffs when resampling is disabled
    std::vector<double> fixed_cutoffs(train.size(), 0.0);
    if (!cfg.resample_cutoffs)
        for (size_t i = 0; i < train.size(); ++i)
            fixed_cutoffs[i] = draw_cutoff(rng, cfg, train[i]);

    struct Sample {
        const PreprocessedPatient* patient;
        double cutoff;
        LabelSet labels;
    };

    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        std::vector<Sample> batch;
        double loss_acc = 0.0;
        size_t cells_acc = 0;
        int batch_index = 0;

        auto flush = [&]() {
            if (batch.empty()) return;
            size_t total_cells = 0;
            for (const auto& s : batch) total_cells += s.labels.defined_count();
            zero_grad(tensors);
            for (const auto& s : batch) {
                auto [truncated, labels] = truncate_and_label(*s.patient, s.cutoff);
                const size_t cells = labels.defined_count();
                Tape tape;
                std::vector<double> y(labels.labels.size(), 0.0);
                std::vector<uint8_t> mask(labels.labels.size(), 0);
                for (size_t t = 0; t < labels.labels.size(); ++t) {
                    if (labels.labels[t].has_value()) {
                        mask[t] = 1;
                        y[t] = *labels.labels[t] ? 1.0 : 0.0;
                    }
                }
                ForwardOptions opt;
                opt.training = true;
                opt.dropout_rng = &rng;
                double loss_val = 0.0;
                try {
                    Value probs = model_forward(tape, truncated, s.cutoff, params, opt);
                    Value loss =
                        tape.bce_masked(probs, tape.constant({1, y.size()}, y), mask);
                    loss_val = tape.scalar(loss);
                    tape.backward(loss, static_cast<double>(cells) /
                                            static_cast<double>(total_cells));
                } catch (const std::invalid_argument& e) {
                    throw NumericalError("training failure at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(batch_index) + ": " + e.what());
                }
                if (!std::isfinite(loss_val))
                    throw NumericalError("non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(batch_index));
                loss_acc += loss_val * static_cast<double>(cells);
                cells_acc += cells;
            }
            adam_step(tensors, adam, adam_cfg);
            batch.clear();
            ++batch_index;
        };

        for (size_t idx : order) {
            const auto& patient = train[idx];
            const double cutoff =
                cfg.resample_cutoffs ? draw_cutoff(rng, cfg, patient) : fixed_cutoffs[idx];
            LabelSet labels = derive_labels(patient.event_indicator,
                                            patient.time_to_event_days,
                                            patient.last_followup_days, cutoff);
            if (labels.defined_count() == 0) continue;  // nothing to learn from
            batch.push_back({&patient, cutoff, labels});
            if (batch.size() == static_cast<size_t>(cfg.batch_size)) flush();
        }
        flush();
        epoch_losses.push_back(cells_acc ? loss_acc / static_cast<double>(cells_acc)
                                         : 0.0);
    }
    return {std::move(params), std::move(epoch_losses)};
}

TrainedFold train_fold(const RunConfig& cfg, const FoldSplit& split, int fold) {
    TrainedFold out;
    const KeptFeatures kept = feature_missingness_filter(split.train);
    out.preproc = fit_preprocessor(split.train, kept);

    std::vector<PreprocessedPatient> train;
    train.reserve(split.train.size());
    for (const auto& r : split.train) train.push_back(apply_preprocessor(r, out.preproc));

    FeatureDims fdims;
    fdims.n_blood = static_cast<int>(kept.blood.size());
    fdims.n_imaging = static_cast<int>(kept.imaging.size());
    fdims.med_vocab = static_cast<int>(out.preproc.med_vocab.size()) + 1;

    if (cfg.variant.kind == FusionKind::kLateMean) {
        for (Modality m : kModalityOrder) {
            FusionVariant v{FusionKind::kUnimodal, m};
            auto [params, losses] = train_one_model(cfg, v, train, fdims, fold);
            out.models.emplace_back(std::string("model_") + modality_name(m),
                                    std::move(params));
            out.loss_curves.emplace_back(v.name(), std::move(losses));
        }
    } else {
        auto [params, losses] = train_one_model(cfg, cfg.variant, train, fdims, fold);
        out.models.emplace_back("model", std::move(params));
        out.loss_curves.emplace_back(cfg.variant.name(), std::move(losses));
    }
    return out;
}

std::vector<std::pair<std::string, int>> assignment_for(
    const std::vector<PatientRecord>& eligible, int k, uint64_t seed) {
    std::vector<std::pair<std::string, int>> keys;
    keys.reserve(eligible.size());
    for (const auto& r : eligible)
        keys.push_back({r.patient_id, r.event_indicator ? 1 : 0});
    const auto folds = stratified_kfold(keys, k, seed);
    std::vector<std::pair<std::string, int>> assignment;
    assignment.reserve(eligible.size());
    for (size_t i = 0; i < eligible.size(); ++i)
        assignment.push_back({eligible[i].patient_id, folds[i]});
    return assignment;
}

}  // namespace

std::string run_config_json(const RunConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

RunConfig run_config_from_json_file(const std::string& path) {
    return config_from_json(read_json_file(path, "config file"));
}

std::string fold_checksum(const std::vector<std::pair<std::string, int>>& assignment,
                          int k, uint64_t seed) {
    auto sorted = assignment;
    std::sort(sorted.begin(), sorted.end());
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    mix("k=" + std::to_string(k) + ";seed=" + std::to_string(seed));
    for (const auto& [id, fold] : sorted) mix(";" + id + ":" + std::to_string(fold));
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void run_training(const RunConfig& cfg, std::ostream* log) {
    if (cfg.k_folds < 2) throw DataError("train: k_folds must be >= 2");
    const auto cohort = read_cohort_file(cfg.dataset_path);
    auto elig = eligibility_filter(cohort);
    if (elig.included.size() < static_cast<size_t>(cfg.k_folds))
        throw DataError("train: fewer eligible patients than folds");

    fs::create_directories(cfg.out_dir);
    write_json_file(cfg.out_dir + "/config.json", config_to_json(cfg), 2);

    const auto assignment = assignment_for(elig.included, cfg.k_folds, cfg.seed);
    {
        ordered_json j;
        j["k_folds"] = cfg.k_folds;
        j["seed"] = cfg.seed;
        j["checksum"] = fold_checksum(assignment, cfg.k_folds, cfg.seed);
        ordered_json arr = ordered_json::array();
        auto sorted = assignment;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [id, fold] : sorted)
            arr.push_back({{"patient_id", id}, {"fold", fold}});
        j["assignment"] = std::move(arr);
        write_json_file(cfg.out_dir + "/folds.json", j, 2);
    }

    std::vector<FoldSplit> splits(cfg.k_folds);
    for (size_t i = 0; i < elig.included.size(); ++i) {
        for (int f = 0; f < cfg.k_folds; ++f) {
            if (assignment[i].second == f)
                splits[f].test.push_back(elig.included[i]);
            else
                splits[f].train.push_back(elig.included[i]);
        }
    }

    std::vector<TrainedFold> trained(cfg.k_folds);
    std::vector<std::string> errors(cfg.k_folds);
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int jobs = cfg.jobs > 0 ? cfg.jobs
                                  : static_cast<int>(std::min<unsigned>(hw, cfg.k_folds));
    std::vector<std::thread> workers;
    std::vector<int> queue(cfg.k_folds);
    std::iota(queue.begin(), queue.end(), 0);
    std::atomic<size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const size_t q = next.fetch_add(1);
            if (q >= queue.size()) return;
            const int f = queue[q];
            try {
                trained[f] = train_fold(cfg, splits[f], f);
            } catch (const std::exception& e) {
                errors[f] = e.what();
            }
        }
    };
    for (int t = 0; t < jobs; ++t) workers.emplace_back(work);
    for (auto& w : workers) w.join();
    for (int f = 0; f < cfg.k_folds; ++f)
        if (!errors[f].empty())
            throw NumericalError("fold " + std::to_string(f) + ": " + errors[f]);

    for (int f = 0; f < cfg.k_folds; ++f) {
        const std::string fold_dir = cfg.out_dir + "/fold" + std::to_string(f);
        fs::create_directories(fold_dir);
        save_preprocessor(trained[f].preproc, fold_dir + "/preproc.json");
        for (const auto& [stem, params] : trained[f].models)
            save_model(params, fold_dir + "/" + stem + ".json");
        ordered_json lj;
        for (const auto& [name, losses] : trained[f].loss_curves)
            lj["epoch_loss"][name] = losses;
        write_json_file(fold_dir + "/train_log.json", lj, 2);
        if (log)
            *log << "fold " << f << ": trained " << trained[f].models.size()
                 << " model(s) on " << splits[f].train.size() << " patients\n";
    }
    if (log) {
        std::map<std::string, int> reasons;
        for (const auto& e : elig.excluded) reasons[e.reason] += 1;
        *log << "eligible " << elig.included.size() << " / " << cohort.size();
        for (const auto& [r, n] : reasons) *log << ", excluded " << n << " (" << r << ")";
        *log << "\n";
    }
}

// --- evaluation ---------------------------------------------------------------

namespace {

struct LoadedFoldModels {
    PreprocessStats preproc;
    std::vector<std::pair<Modality, ModelParams>> unimodal;  // LateMean
    std::optional<ModelParams> single;
};

LoadedFoldModels load_fold(const std::string& run_dir, const RunConfig& cfg, int fold) {
    LoadedFoldModels out;
    const std::string fold_dir = run_dir + "/fold" + std::to_string(fold);
    out.preproc = load_preprocessor(fold_dir + "/preproc.json");
    if (cfg.variant.kind == FusionKind::kLateMean) {
        for (Modality m : kModalityOrder)
            out.unimodal.emplace_back(
                m, load_model(fold_dir + "/model_" + modality_name(m) + ".json"));
    } else {
        out.single = load_model(fold_dir + "/model.json");
    }
    return out;
}

struct PatientScores {
    std::string id;
    std::array<std::optional<bool>, 4> labels;
    std::vector<double> probs;
};

std::vector<double> eval_probs(LoadedFoldModels& models, const RunConfig& cfg,
                               const PreprocessedPatient& truncated, double cutoff,
                               bool& usable, std::string& skip_reason) {
    usable = true;
    if (cfg.variant.kind != FusionKind::kLateMean) {
        Tape tape;
        Value probs = model_forward(tape, truncated, cutoff, *models.single, {});
        return tape.data(probs);
    }
    std::vector<std::vector<double>> unimodal;
    std::vector<bool> present;
    for (auto& [m, params] : models.unimodal) {
        bool has_events = false;
        for (const auto& e : truncated.events)
            if (e.modality == m) has_events = true;
        present.push_back(has_events);
        Tape tape;
        Value probs = model_forward(tape, truncated, cutoff, params, {});
        unimodal.push_back(tape.data(probs));
    }
    bool any = false;
    for (bool p : present) any = any || p;
    if (!any) {
        usable = false;
        skip_reason = "no-present-modality";
        return {};
    }
    return late_fusion_mean(unimodal, present);
}

}  // namespace

void run_eval(const std::string& run_dir, double cutoff_days,
              const std::string& report_path, std::ostream* log) {
    const RunConfig cfg = run_config_from_json_file(run_dir + "/config.json");
    const auto folds_meta = read_json_file(run_dir + "/folds.json", "folds file");
    const std::string checksum = folds_meta.at("checksum").get<std::string>();
    std::map<std::string, int> fold_of;
    for (const auto& a : folds_meta.at("assignment"))
        fold_of[a.at("patient_id").get<std::string>()] = a.at("fold").get<int>();

    const auto cohort = read_cohort_file(cfg.dataset_path);
    auto elig = eligibility_filter(cohort);

    ordered_json scores = ordered_json::array();
    ordered_json skipped = ordered_json::array();
    std::vector<std::vector<TaskFoldStat>> per_task(kHorizonsDays.size());
    std::vector<std::vector<PatientScores>> fold_scores(cfg.k_folds);

    for (int f = 0; f < cfg.k_folds; ++f) {
        auto models = load_fold(run_dir, cfg, f);
        for (const auto& r : elig.included) {
            auto it = fold_of.find(r.patient_id);
            if (it == fold_of.end())
                throw DataError("eval: patient " + r.patient_id +
                                " missing from the stored fold assignment");
            if (it->second != f) continue;
            const auto pp = apply_preprocessor(r, models.preproc);
            PatientScores ps;
            ps.id = r.patient_id;
            try {
                auto [truncated, labels] = truncate_and_label(pp, cutoff_days);
                ps.labels = labels.labels;
                bool usable = true;
                std::string reason;
                ps.probs = eval_probs(models, cfg, truncated, cutoff_days, usable, reason);
                if (!usable) {
                    skipped.push_back(
                        {{"fold", f}, {"patient_id", ps.id}, {"reason", reason}});
                    continue;
                }
            } catch (const std::invalid_argument&) {
                skipped.push_back({{"fold", f},
                                   {"patient_id", ps.id},
                                   {"reason", "cutoff-post-mortem"}});
                continue;
            }
            fold_scores[f].push_back(std::move(ps));
        }

        for (size_t t = 0; t < kHorizonsDays.size(); ++t) {
            std::vector<ScoredSample> samples;
            for (const auto& ps : fold_scores[f]) {
                if (!ps.labels[t].has_value()) continue;
                samples.push_back({ps.id, ps.probs[t], *ps.labels[t]});
            }
            TaskFoldStat stat;
            stat.fold = f;
            stat.auc = auc(samples);
            stat.mw = mann_whitney(samples);
            for (const auto& s : samples) (s.label ? stat.n_pos : stat.n_neg) += 1;
            per_task[t].push_back(stat);
        }
        if (log) *log << "fold " << f << ": scored " << fold_scores[f].size()
                      << " held-out patients at cutoff " << cutoff_days << "\n";
    }

    ordered_json report;
    report["report_version"] = 1;
    report["kind"] = "eval";
    report["run_dir"] = run_dir;
    report["dataset"] = cfg.dataset_path;
    report["model"] = {{"family", family_name(cfg.family)},
                       {"variant", cfg.variant.name()},
                       {"d_model", cfg.dims.d_model},
                       {"n_blocks", cfg.dims.n_blocks},
                       {"n_inner", cfg.dims.n_inner},
                       {"sa_heads", cfg.sa_heads},
                       {"use_positional_encoding", cfg.use_positional_encoding},
                       {"mlp_hidden", cfg.mlp_hidden},
                       {"p_modality_drop", cfg.p_modality_drop},
                       {"seed", cfg.seed}};
    report["cutoff_days"] = cutoff_days;
    report["k_folds"] = cfg.k_folds;
    report["fold_checksum"] = checksum;
    report["horizons_days"] = kHorizonsDays;

    ordered_json tasks = ordered_json::array();
    for (size_t t = 0; t < kHorizonsDays.size(); ++t) {
        const auto agg = aggregate_folds(per_task[t]);
        ordered_json tj;
        tj["horizon_days"] = kHorizonsDays[t];
        ordered_json folds_arr = ordered_json::array();
        for (const auto& st : per_task[t]) {
            ordered_json fj;
            fj["fold"] = st.fold;
            if (st.auc.has_value())
                fj["auc"] = *st.auc;
            else
                fj["auc"] = nullptr;  // undefined: a class is empty ("no death")
            if (st.mw.defined) {
                fj["mw_p"] = st.mw.p;
                fj["mw_degenerate"] = st.mw.degenerate;
            } else {
                fj["mw_p"] = nullptr;
                fj["mw_degenerate"] = false;
            }
            fj["n_pos"] = st.n_pos;
            fj["n_neg"] = st.n_neg;
            folds_arr.push_back(std::move(fj));
        }
        tj["folds"] = std::move(folds_arr);
        if (agg.defined) {
            tj["mean_auc"] = agg.mean_auc;
            tj["sd_auc"] = agg.sd_auc;
        } else {
            tj["mean_auc"] = nullptr;
            tj["sd_auc"] = nullptr;
        }
        tj["defined_folds"] = agg.defined_folds;
        tj["undefined_folds"] = agg.undefined_folds;
        tj["significant_folds"] = agg.significant_folds;
        tasks.push_back(std::move(tj));
    }
    report["tasks"] = std::move(tasks);

    for (int f = 0; f < cfg.k_folds; ++f) {
        ordered_json fj;
        fj["fold"] = f;
        ordered_json patients = ordered_json::array();
        for (const auto& ps : fold_scores[f]) {
            ordered_json pj;
            pj["id"] = ps.id;
            ordered_json labels = ordered_json::array();
            for (const auto& l : ps.labels) {
                if (l.has_value())
                    labels.push_back(*l ? 1 : 0);
                else
                    labels.push_back(nullptr);
            }
            pj["labels"] = std::move(labels);
            pj["probs"] = ps.probs;
            patients.push_back(std::move(pj));
        }
        fj["patients"] = std::move(patients);
        scores.push_back(std::move(fj));
    }
    report["scores"] = std::move(scores);
    report["skipped"] = std::move(skipped);
    write_json_file(report_path, report, 1);
}

// --- comparison -----------------------------------------------------------------

void run_compare(const std::string& report_a_path, const std::string& report_b_path,
                 const std::string& out_path, std::ostream* log) {
    const auto ra = read_json_file(report_a_path, "metrics report");
    const auto rb = read_json_file(report_b_path, "metrics report");
    if (ra.at("fold_checksum") != rb.at("fold_checksum"))
        throw DataError("compare: non-comparable runs (fold checksums differ)");
    const int k = ra.at("k_folds").get<int>();

    ordered_json out;
    out["report_version"] = 1;
    out["kind"] = "comparison";
    out["model_a"] = ra.at("model");
    out["model_b"] = rb.at("model");
    out["cutoff_days"] = ra.at("cutoff_days");
    out["fold_checksum"] = ra.at("fold_checksum");

    ordered_json tasks = ordered_json::array();
    for (size_t t = 0; t < kHorizonsDays.size(); ++t) {
        ordered_json tj;
        tj["horizon_days"] = kHorizonsDays[t];
        ordered_json folds_arr = ordered_json::array();
        std::vector<double> fold_ps;
        bool any_nondegenerate = false;
        for (int f = 0; f < k; ++f) {
            // index-align the two score tables by patient id
            std::map<std::string, std::pair<std::optional<bool>, double>> a_rows;
            for (const auto& p : ra.at("scores")[f].at("patients")) {
                std::optional<bool> label;
                if (!p.at("labels")[t].is_null())
                    label = p.at("labels")[t].get<int>() != 0;
                a_rows[p.at("id").get<std::string>()] = {
                    label, p.at("probs")[t].get<double>()};
            }
            std::vector<ScoredSample> sa, sb;
            for (const auto& p : rb.at("scores")[f].at("patients")) {
                const std::string id = p.at("id").get<std::string>();
                auto it = a_rows.find(id);
                if (it == a_rows.end())
                    throw DataError("compare: patient " + id +
                                    " present in only one report");
                std::optional<bool> label;
                if (!p.at("labels")[t].is_null())
                    label = p.at("labels")[t].get<int>() != 0;
                if (label != it->second.first)
                    throw DataError("compare: label mismatch for patient " + id);
                if (!label.has_value()) continue;
                sa.push_back({id, it->second.second, *label});
                sb.push_back({id, p.at("probs")[t].get<double>(), *label});
            }
            ordered_json fj;
            fj["fold"] = f;
            bool has_both_classes = false;
            int n_pos = 0;
            for (const auto& s : sa) n_pos += s.label ? 1 : 0;
            has_both_classes = n_pos > 0 && n_pos < static_cast<int>(sa.size());
            if (!has_both_classes) {
                fj["auc_a"] = nullptr;
                fj["auc_b"] = nullptr;
                fj["diff"] = nullptr;
                fj["delong_p"] = nullptr;
                fj["degenerate"] = false;
            } else {
                const auto res = delong_test(sa, sb);
                fj["auc_a"] = res.auc_a;
                fj["auc_b"] = res.auc_b;
                fj["diff"] = res.diff;
                fj["delong_p"] = res.p;
                fj["degenerate"] = res.degenerate;
                fold_ps.push_back(res.p);
                if (!res.degenerate) any_nondegenerate = true;
            }
            folds_arr.push_back(std::move(fj));
        }
        tj["folds"] = std::move(folds_arr);
        if (!fold_ps.empty()) {
            const double fisher = fisher_combine(fold_ps);
            tj["fisher_p"] = fisher;
            tj["significant"] = fisher < 0.05;
            tj["degenerate"] = !any_nondegenerate;
        } else {
            tj["fisher_p"] = nullptr;
            tj["significant"] = false;
            tj["degenerate"] = true;
        }
        tasks.push_back(std::move(tj));
    }
    out["tasks"] = std::move(tasks);
    write_json_file(out_path, out, 1);

    if (log) {
        *log << "task(horizon)  fisher_p  verdict\n";
        for (const auto& tj : out["tasks"]) {
            *log << "  " << tj["horizon_days"] << "d: ";
            if (tj["fisher_p"].is_null())
                *log << "undefined\n";
            else
                *log << tj["fisher_p"].get<double>()
                     << (tj["degenerate"].get<bool>() ? " (degenerate)" : "")
                     << (tj["significant"].get<bool>() ? "  *significant*" : "") << "\n";
        }
    }
}

// --- attention dump ----------------------------------------------------------------

void run_attn_dump(const std::string& run_dir, int fold, double cutoff_days,
                   const std::string& out_path, std::ostream* log) {
    const RunConfig cfg = run_config_from_json_file(run_dir + "/config.json");
    if (fold < 0 || fold >= cfg.k_folds)
        throw DataError("attn-dump: fold index out of range");
    const auto folds_meta = read_json_file(run_dir + "/folds.json", "folds file");
    std::map<std::string, int> fold_of;
    for (const auto& a : folds_meta.at("assignment"))
        fold_of[a.at("patient_id").get<std::string>()] = a.at("fold").get<int>();

    auto models = load_fold(run_dir, cfg, fold);
    const auto cohort = read_cohort_file(cfg.dataset_path);
    auto elig = eligibility_filter(cohort);

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write attention dump: " + out_path);
    out << "patient_id\tmodality\tlayer\ttarget_t\tsource_t\tweight\n";
    size_t rows = 0;
    for (const auto& r : elig.included) {
        auto it = fold_of.find(r.patient_id);
        if (it == fold_of.end() || it->second != fold) continue;
        auto* params = models.single ? &*models.single : nullptr;
        const auto pp = apply_preprocessor(r, models.preproc);
        PreprocessedPatient truncated;
        try {
            truncated = truncate_and_label(pp, cutoff_days).first;
        } catch (const std::invalid_argument&) {
            continue;  // dead before the cutoff
        }
        auto dump_one = [&](ModelParams& mp, Modality m) {
            if (!mp.has_modality(m)) return;
            Tape tape;
            AttnRecorder rec;
            auto em = encode_modality(tape, truncated, cutoff_days, mp, m, &rec);
            if (!em.present) return;
            for (const auto& row : rec.rows) {
                out << r.patient_id << "\t" << modality_name(m) << "\t" << row.layer
                    << "\t" << row.target_t << "\t" << row.source_t << "\t"
                    << row.weight << "\n";
                ++rows;
            }
        };
        if (params) {
            for (Modality m : kModalityOrder)
                if (params->has_modality(m)) dump_one(*params, m);
        } else {
            for (auto& [m, mp] : models.unimodal) dump_one(mp, m);
        }
    }
    if (log) *log << "wrote " << rows << " attention rows to " << out_path << "\n";
}

}  // namespace simta
