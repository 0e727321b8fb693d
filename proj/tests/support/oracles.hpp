#pragma once

// Brute-force reference routes for the statistics tests. These deliberately
// avoid the rank-based production code paths.

#include <cmath>
#include <optional>
#include <vector>

#include "simta/rng.hpp"
#include "simta/stats.hpp"

namespace oracles {

// AUC by exhaustive pair counting, ties 1/2.
inline std::optional<double> pair_count_auc(const std::vector<simta::ScoredSample>& s) {
    double wins = 0.0;
    size_t pairs = 0;
    for (const auto& p : s) {
        if (!p.label) continue;
        for (const auto& n : s) {
            if (n.label) continue;
            ++pairs;
            if (p.score > n.score)
                wins += 1.0;
            else if (p.score == n.score)
                wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

inline double pair_count_u(const std::vector<simta::ScoredSample>& s) {
    double wins = 0.0;
    for (const auto& p : s) {
        if (!p.label) continue;
        for (const auto& n : s) {
            if (n.label) continue;
            if (p.score > n.score)
                wins += 1.0;
            else if (p.score == n.score)
                wins += 0.5;
        }
    }
    return wins;
}

// Two-sided permutation p for the Mann-Whitney statistic: shuffle labels,
// count |U* - mu| >= |U - mu|. Add-one smoothing keeps the estimate positive.
inline double permutation_mw_p(std::vector<simta::ScoredSample> s, int shuffles,
                               uint64_t seed) {
    size_t n_pos = 0, n_neg = 0;
    for (const auto& x : s) (x.label ? n_pos : n_neg) += 1;
    const double mu = static_cast<double>(n_pos) * static_cast<double>(n_neg) / 2.0;
    const double observed = std::abs(pair_count_u(s) - mu);
    simta::Rng rng(seed);
    std::vector<uint8_t> labels(s.size());
    for (size_t i = 0; i < s.size(); ++i) labels[i] = s[i].label ? 1 : 0;
    int hits = 0;
    for (int t = 0; t < shuffles; ++t) {
        rng.shuffle(labels);
        for (size_t i = 0; i < s.size(); ++i) s[i].label = labels[i] != 0;
        if (std::abs(pair_count_u(s) - mu) >= observed) ++hits;
    }
    return (hits + 1.0) / (shuffles + 1.0);
}

// Paired bootstrap over patients: resamples indices with replacement and
// recomputes both AUCs by pair counting. Returns the resampled AUC diffs
// (resamples with a single class are skipped).
inline std::vector<double> bootstrap_auc_diffs(
    const std::vector<simta::ScoredSample>& a,
    const std::vector<simta::ScoredSample>& b, int resamples, uint64_t seed) {
    simta::Rng rng(seed);
    std::vector<double> diffs;
    diffs.reserve(resamples);
    std::vector<simta::ScoredSample> ra(a.size()), rb(b.size());
    for (int t = 0; t < resamples; ++t) {
        for (size_t i = 0; i < a.size(); ++i) {
            const size_t j = rng.uniform_int(a.size());
            ra[i] = a[j];
            rb[i] = b[j];
        }
        auto aa = pair_count_auc(ra);
        auto ab = pair_count_auc(rb);
        if (!aa || !ab) continue;
        diffs.push_back(*aa - *ab);
    }
    return diffs;
}

inline std::vector<double> bootstrap_aucs(const std::vector<simta::ScoredSample>& a,
                                          int resamples, uint64_t seed) {
    simta::Rng rng(seed);
    std::vector<double> out;
    out.reserve(resamples);
    std::vector<simta::ScoredSample> ra(a.size());
    for (int t = 0; t < resamples; ++t) {
        for (size_t i = 0; i < a.size(); ++i) ra[i] = a[rng.uniform_int(a.size())];
        auto v = pair_count_auc(ra);
        if (v) out.push_back(*v);
    }
    return out;
}

inline double variance(const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / static_cast<double>(xs.size() - 1);
}

}  // namespace oracles
