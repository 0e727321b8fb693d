#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace simta {

struct ScoredSample {
    std::string patient_id;
    double score = 0.0;
    bool label = false;
};

// Probability that a random positive outranks a random negative, ties 1/2.
// Rank-based, O(n log n). Empty class -> nullopt (the "no death" cell).
std::optional<double> auc(const std::vector<ScoredSample>& samples);

struct MannWhitneyResult {
    bool defined = false;     // both classes present
    double u = 0.0;           // U of the positive group
    double p = 1.0;           // two-sided, normal approximation
    bool degenerate = false;  // zero tie-corrected variance
};

// Mann-Whitney U with midrank ties, tie-corrected variance and continuity
// correction.
MannWhitneyResult mann_whitney(const std::vector<ScoredSample>& samples);

struct DeLongResult {
    double auc_a = 0.0;
    double auc_b = 0.0;
    double diff = 0.0;
    double variance = 0.0;    // var(auc_a - auc_b)
    double p = 1.0;           // two-sided
    bool degenerate = false;  // zero variance
};

// Paired comparison of correlated AUCs on identical patients and labels.
// Inputs must be index-aligned: same patient_id and label at each position.
DeLongResult delong_test(const std::vector<ScoredSample>& a,
                         const std::vector<ScoredSample>& b);

// Variance of a single AUC per DeLong's structural components; exposed for
// the bootstrap cross-check.
double delong_auc_variance(const std::vector<ScoredSample>& samples);

// Fisher's method: X = -2 sum(ln p) against chi-square with 2k df, computed
// through the closed-form even-df survival series.
double fisher_combine(const std::vector<double>& pvals);

// Seeded stratified k-fold: shuffles within each stratum and deals
// round-robin, so per-stratum fold counts differ by at most one. Returns the
// fold index per input position.
std::vector<int> stratified_kfold(
    const std::vector<std::pair<std::string, int>>& keys, int k, uint64_t seed);

struct TaskFoldStat {
    int fold = 0;
    std::optional<double> auc;
    MannWhitneyResult mw;
    int n_pos = 0;
    int n_neg = 0;
};

struct TaskAggregate {
    bool defined = false;
    double mean_auc = 0.0;
    double sd_auc = 0.0;  // sample sd over defined folds, 0 when n <= 1
    int defined_folds = 0;
    int undefined_folds = 0;
    int significant_folds = 0;  // folds with MW p < alpha
};

TaskAggregate aggregate_folds(const std::vector<TaskFoldStat>& folds,
                              double alpha = 0.05);

// Upper tail of the standard normal.
double normal_sf(double z);

}  // namespace simta
