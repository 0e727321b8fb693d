#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "simta/cohort.hpp"
#include "simta/model.hpp"

namespace simta {

// Non-finite losses, impossible optimizer states. CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string dataset_path;
    std::string out_dir;
    ModelFamily family = ModelFamily::kTSimTA;
    FusionVariant variant{FusionKind::kConcatSA, Modality::kBlood};
    ModelDims dims;
    int sa_heads = 2;
    bool use_positional_encoding = false;
    int mlp_hidden = 64;
    double p_modality_drop = 0.25;
    int epochs = 30;
    int batch_size = 16;
    double lr = 1e-3;
    int k_folds = 3;
    double train_cutoff_lo = kMinCutoffDays;
    double train_cutoff_hi = kMaxCutoffDays;
    uint64_t seed = 0;
    bool resample_cutoffs = true;  // fresh cutoff per patient per epoch
    int jobs = 0;                  // fold-parallel workers; 0 = auto
};

std::string run_config_json(const RunConfig& cfg);
RunConfig run_config_from_json_file(const std::string& path);

// Checksum of a fold assignment; cmd_compare refuses reports whose checksums
// differ.
std::string fold_checksum(const std::vector<std::pair<std::string, int>>& assignment,
                          int k, uint64_t seed);

// Full cross-validated training protocol. Writes into cfg.out_dir:
//   config.json, folds.json, fold<i>/preproc.json, fold<i>/model.json
//   (model_<modality>.json per unimodal member for LateMean),
//   fold<i>/train_log.json
void run_training(const RunConfig& cfg, std::ostream* log = nullptr);

// Fixed-cutoff evaluation of a finished run on its held-out folds; writes the
// metrics report (JSON) to report_path.
void run_eval(const std::string& run_dir, double cutoff_days,
              const std::string& report_path, std::ostream* log = nullptr);

// Paired statistical comparison of two metrics reports built on identical
// fold assignments: per-fold DeLong plus Fisher combination per task.
void run_compare(const std::string& report_a_path, const std::string& report_b_path,
                 const std::string& out_path, std::ostream* log = nullptr);

// Attention-weight dump for the held-out patients of one fold:
// TSV rows (patient_id, modality, layer, target_t, source_t, weight).
void run_attn_dump(const std::string& run_dir, int fold, double cutoff_days,
                   const std::string& out_path, std::ostream* log = nullptr);

}  // namespace simta
