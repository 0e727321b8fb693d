#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "simta/rng.hpp"
#include "simta/stats.hpp"
#include "support/oracles.hpp"

using namespace simta;

namespace {

std::vector<ScoredSample> make_samples(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
    std::vector<ScoredSample> out;
    for (size_t i = 0; i < scores.size(); ++i)
        out.push_back({"p" + std::to_string(i), scores[i], labels[i] != 0});
    return out;
}

std::vector<ScoredSample> random_instance(Rng& rng, size_t max_n, bool allow_ties) {
    const size_t n = 2 + rng.uniform_int(max_n - 1);
    std::vector<ScoredSample> s;
    for (size_t i = 0; i < n; ++i) {
        double score = allow_ties ? std::floor(rng.uniform(0.0, 6.0)) / 6.0
                                  : rng.uniform();
        s.push_back({"p" + std::to_string(i), score, rng.bernoulli(0.4)});
    }
    return s;
}

}  // namespace

TEST_CASE("auc: worked example") {
    auto s = make_samples({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0});
    auto a = auc(s);
    REQUIRE(a.has_value());
    CHECK(*a == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("auc: perfect separation and undefined class") {
    auto s = make_samples({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(*auc(s) == doctest::Approx(1.0));
    auto all_pos = make_samples({0.9, 0.8}, {1, 1});
    CHECK(!auc(all_pos).has_value());
}

TEST_CASE("auc: NaN score is an error") {
    auto s = make_samples({0.9, std::nan("")}, {1, 0});
    CHECK_THROWS_AS(auc(s), std::invalid_argument);
}

TEST_CASE("auc equals exhaustive pair counting on 200 random instances") {
    Rng rng(101);
    for (int t = 0; t < 200; ++t) {
        auto s = random_instance(rng, 50, t % 2 == 0);
        auto fast = auc(s);
        auto slow = oracles::pair_count_auc(s);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) CHECK(*fast == doctest::Approx(*slow).epsilon(1e-12));
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(102);
    for (int t = 0; t < 25; ++t) {
        auto s = random_instance(rng, 40, false);
        auto base = auc(s);
        if (!base) continue;
        auto exp_s = s;
        for (auto& x : exp_s) x.score = std::exp(x.score);
        auto aff_s = s;
        for (auto& x : aff_s) x.score = 3.5 * x.score + 11.0;
        CHECK(*auc(exp_s) == doctest::Approx(*base).epsilon(1e-12));
        CHECK(*auc(aff_s) == doctest::Approx(*base).epsilon(1e-12));
    }
}

TEST_CASE("mann-whitney: U = AUC * n_pos * n_neg on tie-free inputs") {
    Rng rng(103);
    for (int t = 0; t < 30; ++t) {
        auto s = random_instance(rng, 40, false);
        auto a = auc(s);
        auto mw = mann_whitney(s);
        if (!a) {
            CHECK(!mw.defined);
            continue;
        }
        size_t np = 0, nn = 0;
        for (auto& x : s) (x.label ? np : nn) += 1;
        CHECK(mw.u == doctest::Approx(*a * np * nn).epsilon(1e-12));
        CHECK(mw.u == doctest::Approx(oracles::pair_count_u(s)).epsilon(1e-12));
    }
}

TEST_CASE("mann-whitney: constant scores degenerate to p = 1") {
    auto s = make_samples({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0});
    auto mw = mann_whitney(s);
    CHECK(mw.defined);
    CHECK(mw.degenerate);
    CHECK(mw.p == 1.0);
}

TEST_CASE("mann-whitney: strong separation at 20/20 is highly significant") {
    std::vector<ScoredSample> s;
    Rng rng(104);
    for (int i = 0; i < 20; ++i)
        s.push_back({"a" + std::to_string(i), 2.0 + rng.normal() * 0.3, true});
    for (int i = 0; i < 20; ++i)
        s.push_back({"b" + std::to_string(i), rng.normal() * 0.3, false});
    auto mw = mann_whitney(s);
    CHECK(mw.p < 0.001);
    // permutation oracle agrees it is tiny
    CHECK(oracles::permutation_mw_p(s, 10000, 7) < 0.001);
}

TEST_CASE("mann-whitney p within a factor of 2 of the permutation oracle") {
    // Instances engineered to land across p in roughly [0.001, 0.5].
    Rng rng(105);
    const double shifts[] = {0.20, 0.35, 0.55, 0.75, 1.0, 1.3};
    for (double shift : shifts) {
        std::vector<ScoredSample> s;
        for (int i = 0; i < 35; ++i)
            s.push_back({"a" + std::to_string(i), shift + rng.normal(), true});
        for (int i = 0; i < 35; ++i)
            s.push_back({"b" + std::to_string(i), rng.normal(), false});
        auto mw = mann_whitney(s);
        const double oracle = oracles::permutation_mw_p(s, 10000, 900 + int(shift * 100));
        if (oracle < 0.001 || oracle > 0.5) continue;  // outside the band of interest
        INFO("shift=", shift, " mw=", mw.p, " perm=", oracle);
        CHECK(mw.p <= 2.0 * oracle);
        CHECK(mw.p >= 0.5 * oracle);
    }
}

TEST_CASE("delong: a classifier against itself is maximally degenerate") {
    Rng rng(106);
    auto s = random_instance(rng, 30, false);
    bool has_both = auc(s).has_value();
    if (!has_both) s = make_samples({0.9, 0.1, 0.5}, {1, 0, 1});
    auto res = delong_test(s, s);
    CHECK(res.diff == 0.0);
    CHECK(res.variance == 0.0);
    CHECK(res.p == 1.0);
    CHECK(res.degenerate);
}

TEST_CASE("delong: perfect vs anti-perfect on 10/10 is significant") {
    std::vector<ScoredSample> a, b;
    for (int i = 0; i < 20; ++i) {
        const bool label = i < 10;
        const double s = label ? 1.0 - i * 0.01 : 0.2 - (i - 10) * 0.01;
        a.push_back({"p" + std::to_string(i), s, label});
        b.push_back({"p" + std::to_string(i), -s, label});
    }
    auto res = delong_test(a, b);
    CHECK(res.auc_a == doctest::Approx(1.0));
    CHECK(res.auc_b == doctest::Approx(0.0));
    CHECK(res.p < 0.01);
    // Bootstrap oracle: every resample keeps the same separation, so the
    // resampled diff distribution never touches zero.
    auto diffs = oracles::bootstrap_auc_diffs(a, b, 10000, 11);
    int non_positive = 0;
    for (double d : diffs)
        if (d <= 0.0) ++non_positive;
    CHECK(2.0 * (non_positive + 1.0) / (diffs.size() + 1.0) < 0.01);
}

TEST_CASE("delong: requires paired inputs") {
    auto a = make_samples({0.9, 0.1}, {1, 0});
    auto b = make_samples({0.8, 0.2}, {0, 1});
    CHECK_THROWS_WITH_AS(delong_test(a, b), doctest::Contains("unpaired"),
                         std::invalid_argument);
}

TEST_CASE("delong single-classifier variance close to the bootstrap variance") {
    Rng rng(107);
    std::vector<ScoredSample> s;
    for (int i = 0; i < 200; ++i) {
        const bool label = rng.bernoulli(0.4);
        s.push_back({"p" + std::to_string(i), rng.normal() + (label ? 0.8 : 0.0), label});
    }
    const double analytic = delong_auc_variance(s);
    auto boot = oracles::bootstrap_aucs(s, 4000, 5);
    const double bootstrap = oracles::variance(boot);
    INFO("analytic=", analytic, " bootstrap=", bootstrap);
    CHECK(std::abs(analytic - bootstrap) / bootstrap < 0.20);
}

TEST_CASE("delong null calibration on simulated comparisons") {
    Rng rng(108);
    int rejections = 0;
    const int sims = 500;
    for (int t = 0; t < sims; ++t) {
        std::vector<ScoredSample> a, b;
        for (int i = 0; i < 120; ++i) {
            const bool label = i < 48;  // fixed 40% positives
            const std::string id = "p" + std::to_string(i);
            a.push_back({id, rng.normal(), label});
            b.push_back({id, rng.normal(), label});
        }
        if (delong_test(a, b).p < 0.05) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / sims;
    INFO("rejection rate ", rate);
    CHECK(rate >= 0.02);
    CHECK(rate <= 0.09);
}

TEST_CASE("fisher: worked values") {
    CHECK(fisher_combine({1.0, 1.0, 1.0}) == doctest::Approx(1.0));
    CHECK(fisher_combine({0.5, 0.5, 0.5}) == doctest::Approx(0.65519).epsilon(2e-4));
    // df-2 identity: a single p combines to itself
    for (double p : {0.01, 0.2, 0.77, 1.0})
        CHECK(fisher_combine({p}) == doctest::Approx(p).epsilon(1e-12));
    CHECK_THROWS_AS(fisher_combine({0.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(fisher_combine({-0.1}), std::invalid_argument);
}

TEST_CASE("fisher combination is monotone in every input") {
    Rng rng(109);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> ps(3);
        for (double& p : ps) p = rng.uniform(0.001, 1.0);
        const double base = fisher_combine(ps);
        for (size_t i = 0; i < ps.size(); ++i) {
            auto lowered = ps;
            lowered[i] *= rng.uniform(0.1, 0.999);
            CHECK(fisher_combine(lowered) <= base);
        }
    }
}

TEST_CASE("stratified k-fold: exact divisibility example") {
    std::vector<std::pair<std::string, int>> keys;
    for (int i = 0; i < 6; ++i) keys.push_back({"d" + std::to_string(i), 1});
    for (int i = 0; i < 3; ++i) keys.push_back({"a" + std::to_string(i), 0});
    auto fold = stratified_kfold(keys, 3, 42);
    std::map<int, int> died_per_fold, alive_per_fold;
    for (size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].second == 1)
            died_per_fold[fold[i]] += 1;
        else
            alive_per_fold[fold[i]] += 1;
    }
    for (int f = 0; f < 3; ++f) {
        CHECK(died_per_fold[f] == 2);
        CHECK(alive_per_fold[f] == 1);
    }
}

TEST_CASE("stratified k-fold: partition, determinism, bounds") {
    Rng rng(110);
    std::vector<std::pair<std::string, int>> keys;
    for (int i = 0; i < 40; ++i)
        keys.push_back({"p" + std::to_string(i), rng.bernoulli(0.7) ? 1 : 0});
    auto f1 = stratified_kfold(keys, 3, 7);
    auto f2 = stratified_kfold(keys, 3, 7);
    CHECK(f1 == f2);
    std::map<int, int> counts;
    for (int f : f1) {
        CHECK(f >= 0);
        CHECK(f < 3);
        counts[f] += 1;
    }
    CHECK(counts.size() == 3);
    // per-stratum fold counts differ by at most one
    for (int stratum : {0, 1}) {
        std::map<int, int> per_fold;
        for (size_t i = 0; i < keys.size(); ++i)
            if (keys[i].second == stratum) per_fold[f1[i]] += 1;
        int mn = 1 << 30, mx = 0;
        for (auto& [f, c] : per_fold) {
            mn = std::min(mn, c);
            mx = std::max(mx, c);
        }
        CHECK(mx - mn <= 1);
    }
    CHECK_THROWS_AS(stratified_kfold({{"a", 0}, {"b", 0}}, 3, 1),
                    std::invalid_argument);
}

TEST_CASE("aggregate_folds: mean and sample sd") {
    auto mk = [](double a) {
        TaskFoldStat f;
        f.auc = a;
        f.mw.defined = true;
        f.mw.p = 0.01;
        return f;
    };
    auto agg = aggregate_folds({mk(0.8), mk(0.8), mk(0.8)});
    CHECK(agg.mean_auc == doctest::Approx(0.80));
    CHECK(agg.sd_auc == doctest::Approx(0.0));
    CHECK(agg.significant_folds == 3);

    auto agg2 = aggregate_folds({mk(0.7), mk(0.8), mk(0.9)});
    CHECK(agg2.mean_auc == doctest::Approx(0.80).epsilon(1e-12));
    CHECK(agg2.sd_auc == doctest::Approx(0.10).epsilon(1e-12));

    TaskFoldStat undef;
    auto agg3 = aggregate_folds({mk(0.7), mk(0.9), undef});
    CHECK(agg3.defined);
    CHECK(agg3.mean_auc == doctest::Approx(0.80).epsilon(1e-12));
    CHECK(agg3.undefined_folds == 1);
    CHECK(agg3.defined_folds == 2);

    auto agg4 = aggregate_folds({undef, undef});
    CHECK(!agg4.defined);
}
