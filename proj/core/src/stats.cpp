#include "simta/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "simta/rng.hpp"

namespace simta {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

namespace {

// Midranks (1-based) of the scores; ties share the average rank.
std::vector<double> midranks(const std::vector<double>& scores) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

void check_scores_finite(const std::vector<ScoredSample>& samples) {
    for (const auto& s : samples)
        if (!std::isfinite(s.score))
            throw std::invalid_argument("auc: non-finite score for patient " +
                                        s.patient_id);
}

}  // namespace

std::optional<double> auc(const std::vector<ScoredSample>& samples) {
    check_scores_finite(samples);
    size_t n_pos = 0, n_neg = 0;
    for (const auto& s : samples) (s.label ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    std::vector<double> scores(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) scores[i] = samples[i].score;
    const auto ranks = midranks(scores);
    double rank_sum_pos = 0.0;
    for (size_t i = 0; i < samples.size(); ++i)
        if (samples[i].label) rank_sum_pos += ranks[i];
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

MannWhitneyResult mann_whitney(const std::vector<ScoredSample>& samples) {
    MannWhitneyResult res;
    const auto a = auc(samples);
    if (!a.has_value()) return res;  // undefined: one class empty
    res.defined = true;

    size_t n_pos = 0, n_neg = 0;
    for (const auto& s : samples) (s.label ? n_pos : n_neg) += 1;
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    const double n = np + nn;
    res.u = a.value() * np * nn;

    // Tie correction over tied groups of the pooled scores.
    std::vector<double> scores(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) scores[i] = samples[i].score;
    std::sort(scores.begin(), scores.end());
    double tie_sum = 0.0;
    size_t i = 0;
    while (i < scores.size()) {
        size_t j = i;
        while (j + 1 < scores.size() && scores[j + 1] == scores[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    const double var = np * nn / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if (var <= 0.0) {
        res.degenerate = true;
        res.p = 1.0;
        return res;
    }
    const double mu = np * nn / 2.0;
    double d = res.u - mu;
    // continuity correction toward the mean
    if (d > 0.5)
        d -= 0.5;
    else if (d < -0.5)
        d += 0.5;
    else
        d = 0.0;
    const double z = d / std::sqrt(var);
    res.p = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    return res;
}

namespace {

// Structural components: V10 per positive (fraction of negatives it
// outranks, ties 1/2) and V01 per negative (symmetric).
void delong_components(const std::vector<ScoredSample>& s,
                       std::vector<double>& v10, std::vector<double>& v01,
                       double& auc_out) {
    std::vector<double> pos, neg;
    for (const auto& x : s) (x.label ? pos : neg).push_back(x.score);
    const size_t m = pos.size(), n = neg.size();
    v10.assign(m, 0.0);
    v01.assign(n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j)
            acc += pos[i] > neg[j] ? 1.0 : (pos[i] == neg[j] ? 0.5 : 0.0);
        v10[i] = acc / static_cast<double>(n);
    }
    for (size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < m; ++i)
            acc += pos[i] > neg[j] ? 1.0 : (pos[i] == neg[j] ? 0.5 : 0.0);
        v01[j] = acc / static_cast<double>(m);
    }
    double a = 0.0;
    for (double v : v10) a += v;
    auc_out = m ? a / static_cast<double>(m) : 0.0;
}

double sample_cov(const std::vector<double>& x, const std::vector<double>& y,
                  double mx, double my) {
    if (x.size() < 2) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += (x[i] - mx) * (y[i] - my);
    return acc / static_cast<double>(x.size() - 1);
}

}  // namespace

double delong_auc_variance(const std::vector<ScoredSample>& samples) {
    check_scores_finite(samples);
    std::vector<double> v10, v01;
    double a = 0.0;
    delong_components(samples, v10, v01, a);
    if (v10.empty() || v01.empty())
        throw std::invalid_argument("delong: both classes must be non-empty");
    const double s10 = sample_cov(v10, v10, a, a);
    const double s01 = sample_cov(v01, v01, a, a);
    return s10 / static_cast<double>(v10.size()) +
           s01 / static_cast<double>(v01.size());
}

DeLongResult delong_test(const std::vector<ScoredSample>& a,
                         const std::vector<ScoredSample>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("delong: unpaired inputs (different sizes)");
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].patient_id != b[i].patient_id || a[i].label != b[i].label)
            throw std::invalid_argument("delong: unpaired inputs at position " +
                                        std::to_string(i));
    }
    check_scores_finite(a);
    check_scores_finite(b);

    std::vector<double> v10a, v01a, v10b, v01b;
    double auc_a = 0.0, auc_b = 0.0;
    delong_components(a, v10a, v01a, auc_a);
    delong_components(b, v10b, v01b, auc_b);
    if (v10a.empty() || v01a.empty())
        throw std::invalid_argument("delong: both classes must be non-empty");

    const double m = static_cast<double>(v10a.size());
    const double n = static_cast<double>(v01a.size());
    const double s10_aa = sample_cov(v10a, v10a, auc_a, auc_a);
    const double s10_bb = sample_cov(v10b, v10b, auc_b, auc_b);
    const double s10_ab = sample_cov(v10a, v10b, auc_a, auc_b);
    const double s01_aa = sample_cov(v01a, v01a, auc_a, auc_a);
    const double s01_bb = sample_cov(v01b, v01b, auc_b, auc_b);
    const double s01_ab = sample_cov(v01a, v01b, auc_a, auc_b);

    DeLongResult res;
    res.auc_a = auc_a;
    res.auc_b = auc_b;
    res.diff = auc_a - auc_b;
    res.variance = (s10_aa + s10_bb - 2.0 * s10_ab) / m +
                   (s01_aa + s01_bb - 2.0 * s01_ab) / n;
    if (res.variance <= 0.0) {
        // Degenerate comparison. Identical classifiers report no evidence; a
        // nonzero difference with zero variance is perfect separation, so the
        // smallest positive p keeps the (0, 1] contract.
        res.degenerate = true;
        res.p = res.diff == 0.0 ? 1.0 : std::numeric_limits<double>::min();
        return res;
    }
    const double z = res.diff / std::sqrt(res.variance);
    res.p = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    if (res.p <= 0.0) res.p = std::numeric_limits<double>::min();
    return res;
}

double fisher_combine(const std::vector<double>& pvals) {
    if (pvals.empty())
        throw std::invalid_argument("fisher_combine: empty p-value list");
    double x = 0.0;
    for (double p : pvals) {
        if (!(p > 0.0) || p > 1.0)
            throw std::invalid_argument("fisher_combine: p-values must lie in (0, 1]");
        x += -2.0 * std::log(p);
    }
    // Survival of chi-square with 2k df at x: exp(-x/2) * sum_{j<k} (x/2)^j / j!
    const size_t k = pvals.size();
    const double half = x / 2.0;
    double term = 1.0;
    double sum = 1.0;
    for (size_t j = 1; j < k; ++j) {
        term *= half / static_cast<double>(j);
        sum += term;
    }
    const double p = std::exp(-half) * sum;
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

std::vector<int> stratified_kfold(
    const std::vector<std::pair<std::string, int>>& keys, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2");
    if (static_cast<size_t>(k) > keys.size())
        throw std::invalid_argument("stratified_kfold: k exceeds the number of patients");
    std::map<int, std::vector<size_t>> strata;
    for (size_t i = 0; i < keys.size(); ++i) strata[keys[i].second].push_back(i);
    std::vector<int> fold(keys.size(), -1);
    Rng rng(seed);
    for (auto& [stratum, members] : strata) {
        rng.shuffle(members);
        for (size_t i = 0; i < members.size(); ++i)
            fold[members[i]] = static_cast<int>(i % static_cast<size_t>(k));
    }
    return fold;
}

TaskAggregate aggregate_folds(const std::vector<TaskFoldStat>& folds, double alpha) {
    TaskAggregate agg;
    std::vector<double> defined;
    for (const auto& f : folds) {
        if (f.auc.has_value()) {
            defined.push_back(f.auc.value());
            if (f.mw.defined && !f.mw.degenerate && f.mw.p < alpha)
                agg.significant_folds += 1;
        } else {
            agg.undefined_folds += 1;
        }
    }
    agg.defined_folds = static_cast<int>(defined.size());
    if (defined.empty()) return agg;
    agg.defined = true;
    agg.mean_auc = std::accumulate(defined.begin(), defined.end(), 0.0) /
                   static_cast<double>(defined.size());
    if (defined.size() > 1) {
        double acc = 0.0;
        for (double v : defined) acc += (v - agg.mean_auc) * (v - agg.mean_auc);
        agg.sd_auc = std::sqrt(acc / static_cast<double>(defined.size() - 1));
    }
    return agg;
}

}  // namespace simta
