// Command-line front end: synthetic cohort generation, cross-validated
// training, fixed-cutoff evaluation, paired statistical comparison of runs,
// and attention-weight dumps.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "simta/cohort.hpp"
#include "simta/synth.hpp"
#include "simta/train.hpp"

using namespace simta;

namespace {

int run_synth(const SynthConfig& cfg, const std::string& out,
              const std::string& sidecar) {
    generate_cohort(cfg, out, sidecar.empty() ? out + ".truth" : sidecar);
    if (cfg.n_patients == 0)
        std::cerr << "warning: generated an empty cohort (--n 0)\n";
    const auto records = read_cohort_file(out);
    auto elig = eligibility_filter(records);
    std::map<std::string, int> reasons;
    for (const auto& e : elig.excluded) reasons[e.reason] += 1;
    size_t n_events[3] = {0, 0, 0};
    for (const auto& r : records)
        for (const auto& e : r.events) n_events[static_cast<int>(e.modality)] += 1;
    std::cout << "patients " << records.size() << ", eligible " << elig.included.size();
    for (const auto& [r, n] : reasons) std::cout << ", excluded " << n << " (" << r << ")";
    std::cout << "\nevents: blood " << n_events[0] << ", imaging " << n_events[1]
              << ", medication " << n_events[2] << "\n";
    return 0;
}

// The config file, when given, overrides any flag: flags are parsed first,
// then every key present in the file replaces the corresponding field.
void overlay_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("config file " + path + ": " + e.what());
    }
    if (j.contains("dataset")) cfg.dataset_path = j["dataset"].get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("family")) {
        auto f = family_from_name(j["family"].get<std::string>());
        if (!f) throw DataError("config file: unknown family");
        cfg.family = *f;
    }
    if (j.contains("variant")) {
        auto v = FusionVariant::parse(j["variant"].get<std::string>());
        if (!v) throw DataError("config file: unknown variant");
        cfg.variant = *v;
    }
    if (j.contains("d_model")) cfg.dims.d_model = j["d_model"].get<int>();
    if (j.contains("n_blocks")) cfg.dims.n_blocks = j["n_blocks"].get<int>();
    if (j.contains("n_inner")) cfg.dims.n_inner = j["n_inner"].get<int>();
    if (j.contains("tau_days")) cfg.dims.tau_days = j["tau_days"].get<double>();
    if (j.contains("sa_heads")) cfg.sa_heads = j["sa_heads"].get<int>();
    if (j.contains("use_positional_encoding"))
        cfg.use_positional_encoding = j["use_positional_encoding"].get<bool>();
    if (j.contains("mlp_hidden")) cfg.mlp_hidden = j["mlp_hidden"].get<int>();
    if (j.contains("p_modality_drop"))
        cfg.p_modality_drop = j["p_modality_drop"].get<double>();
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("k_folds")) cfg.k_folds = j["k_folds"].get<int>();
    if (j.contains("train_cutoff_lo")) cfg.train_cutoff_lo = j["train_cutoff_lo"].get<double>();
    if (j.contains("train_cutoff_hi")) cfg.train_cutoff_hi = j["train_cutoff_hi"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("resample_cutoffs")) cfg.resample_cutoffs = j["resample_cutoffs"].get<bool>();
    if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"asynchronous temporal-attention survival models"};
    app.require_subcommand(1);

    // synth
    SynthConfig synth_cfg;
    std::string synth_out = "cohort.jsonl", synth_sidecar;
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    synth->add_option("--out", synth_out, "cohort output path");
    synth->add_option("--sidecar", synth_sidecar, "ground-truth sidecar path");
    synth->add_option("--n", synth_cfg.n_patients, "number of patients");
    synth->add_option("--seed", synth_cfg.seed, "generator seed");
    synth->add_option("--beta", synth_cfg.beta, "risk effect on the log hazard");
    synth->add_option("--base-hazard", synth_cfg.base_hazard_per_day,
                      "baseline hazard per day");
    synth->add_option("--signal-blood", synth_cfg.modality_signal[0],
                      "risk variance fraction in blood features");
    synth->add_option("--signal-imaging", synth_cfg.modality_signal[1],
                      "risk variance fraction in imaging features");
    synth->add_option("--signal-medication", synth_cfg.modality_signal[2],
                      "risk effect on medication categories");
    synth->add_option("--p-missing-imaging", synth_cfg.p_missing_imaging,
                      "probability a patient has no imaging at all");
    synth->add_option("--blood-features", synth_cfg.n_blood_features,
                      "number of blood features");
    synth->add_option("--imaging-features", synth_cfg.n_imaging_features,
                      "number of imaging (organ volume) features");

    // train
    RunConfig run_cfg;
    std::string family_s = "TSimTA", variant_s = "ConcatSA", config_path;
    auto* train = app.add_subcommand("train", "cross-validated training");
    train->add_option("--dataset", run_cfg.dataset_path, "cohort file")->required();
    train->add_option("--out", run_cfg.out_dir, "run output directory")->required();
    train->add_option("--family", family_s, "SimTA | TSimTA");
    train->add_option("--variant", variant_s,
                      "Unimodal:<modality> | Concat | ConcatSA | LateMean");
    train->add_option("--d-model", run_cfg.dims.d_model, "model width");
    train->add_option("--n-blocks", run_cfg.dims.n_blocks, "encoder blocks (N)");
    train->add_option("--n-inner", run_cfg.dims.n_inner, "SimTA layers per block");
    train->add_option("--tau-days", run_cfg.dims.tau_days, "attention time scale");
    train->add_option("--sa-heads", run_cfg.sa_heads, "fusion attention heads");
    train->add_flag("--pos-enc", run_cfg.use_positional_encoding,
                    "learned per-modality positional encodings in the fusion block");
    train->add_option("--mlp-hidden", run_cfg.mlp_hidden, "fusion MLP width");
    train->add_option("--p-drop", run_cfg.p_modality_drop, "multimodal dropout rate");
    train->add_option("--epochs", run_cfg.epochs, "training epochs");
    train->add_option("--batch-size", run_cfg.batch_size, "batch size");
    train->add_option("--lr", run_cfg.lr, "Adam learning rate");
    train->add_option("--k-folds", run_cfg.k_folds, "cross-validation folds");
    train->add_option("--cutoff-lo", run_cfg.train_cutoff_lo, "training cutoff low");
    train->add_option("--cutoff-hi", run_cfg.train_cutoff_hi, "training cutoff high");
    train->add_option("--seed", run_cfg.seed, "run seed");
    bool fixed_cutoffs = false;
    train->add_flag("--fixed-cutoffs", fixed_cutoffs,
                    "draw one training cutoff per patient instead of per epoch");
    train->add_option("--jobs", run_cfg.jobs, "parallel fold workers (0 = auto)");
    train->add_option("--config", config_path,
                      "JSON config file; values in it override flags");

    // eval
    std::string eval_run, eval_report = "report.json";
    double eval_cutoff = 90.0;
    auto* eval = app.add_subcommand("eval", "fixed-cutoff evaluation of a run");
    eval->add_option("--run", eval_run, "run directory from train")->required();
    eval->add_option("--cutoff", eval_cutoff, "evaluation cutoff preset (days)")
        ->check(CLI::IsMember({90.0, 180.0}));
    eval->add_option("--out", eval_report, "metrics report path");

    // compare
    std::string cmp_a, cmp_b, cmp_out = "comparison.json";
    auto* compare = app.add_subcommand("compare",
                                       "paired DeLong + Fisher comparison of two reports");
    compare->add_option("report_a", cmp_a, "first metrics report")->required();
    compare->add_option("report_b", cmp_b, "second metrics report")->required();
    compare->add_option("--out", cmp_out, "comparison output path");

    // attn-dump
    std::string dump_run, dump_out = "attention.tsv";
    int dump_fold = 0;
    double dump_cutoff = 90.0;
    auto* dump = app.add_subcommand("attn-dump",
                                    "attention weights of held-out patients");
    dump->add_option("--run", dump_run, "run directory from train")->required();
    dump->add_option("--fold", dump_fold, "fold index");
    dump->add_option("--cutoff", dump_cutoff, "cutoff preset (days)")
        ->check(CLI::IsMember({90.0, 180.0}));
    dump->add_option("--out", dump_out, "TSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return run_synth(synth_cfg, synth_out, synth_sidecar);
        if (train->parsed()) {
            auto fam = family_from_name(family_s);
            if (!fam) throw DataError("unknown family: " + family_s);
            run_cfg.family = *fam;
            auto var = FusionVariant::parse(variant_s);
            if (!var) throw DataError("unknown variant: " + variant_s);
            run_cfg.variant = *var;
            run_cfg.resample_cutoffs = !fixed_cutoffs;
            if (!config_path.empty()) overlay_config_file(run_cfg, config_path);
            run_training(run_cfg, &std::cout);
            return 0;
        }
        if (eval->parsed()) {
            run_eval(eval_run, eval_cutoff, eval_report, &std::cout);
            return 0;
        }
        if (compare->parsed()) {
            run_compare(cmp_a, cmp_b, cmp_out, &std::cout);
            return 0;
        }
        if (dump->parsed()) {
            run_attn_dump(dump_run, dump_fold, dump_cutoff, dump_out, &std::cout);
            return 0;
        }
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
