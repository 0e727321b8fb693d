#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "simta/stats.hpp"
#include "simta/synth.hpp"

using namespace simta;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Mean of the risk-loaded (first-half) features at the patient's last visit
// of the modality; the generator-side oracle score.
std::optional<double> last_visit_risk_score(const PatientRecord& r, Modality m,
                                            const char* stem, int n_features) {
    const ObservationEvent* last = nullptr;
    for (const auto& e : r.events)
        if (e.modality == m && (!last || e.t_days >= last->t_days)) last = &e;
    if (!last) return std::nullopt;
    double acc = 0.0;
    int n = 0;
    for (int f = 0; f < n_features / 2; ++f) {
        std::ostringstream name;
        name << stem << "_" << (f < 10 ? "0" : "") << f;
        auto it = last->features.find(name.str());
        if (it == last->features.end() || !it->second.has_value()) continue;
        acc += *it->second;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return acc / n;
}

}  // namespace

TEST_CASE("determinism: identical config gives byte-identical files") {
    SynthConfig cfg;
    cfg.n_patients = 40;
    cfg.seed = 123;
    const std::string c1 = "/tmp/simta_synth_a.jsonl", s1 = "/tmp/simta_synth_a_truth.jsonl";
    const std::string c2 = "/tmp/simta_synth_b.jsonl", s2 = "/tmp/simta_synth_b_truth.jsonl";
    generate_cohort(cfg, c1, s1);
    generate_cohort(cfg, c2, s2);
    CHECK(slurp(c1) == slurp(c2));
    CHECK(slurp(s1) == slurp(s2));
    // a different seed diverges
    cfg.seed = 124;
    generate_cohort(cfg, c2, s2);
    CHECK(slurp(c1) != slurp(c2));
    for (const auto& p : {c1, s1, c2, s2}) std::remove(p.c_str());
}

TEST_CASE("cohort size and sidecar alignment") {
    SynthConfig cfg;
    cfg.n_patients = 100;
    cfg.seed = 5;
    auto cohort = generate_cohort_records(cfg);
    CHECK(cohort.records.size() == 100);
    CHECK(cohort.truth.size() == 100);
    for (size_t i = 0; i < cohort.records.size(); ++i)
        CHECK(cohort.records[i].patient_id == cohort.truth[i].patient_id);
}

TEST_CASE("p_missing_imaging = 1 removes every imaging event") {
    SynthConfig cfg;
    cfg.n_patients = 60;
    cfg.seed = 6;
    cfg.p_missing_imaging = 1.0;
    auto cohort = generate_cohort_records(cfg);
    for (const auto& r : cohort.records)
        for (const auto& e : r.events) CHECK(e.modality != Modality::kImaging);
}

TEST_CASE("record structure: outcome fields, windows and sorting") {
    SynthConfig cfg;
    cfg.n_patients = 200;
    cfg.seed = 8;
    auto cohort = generate_cohort_records(cfg);
    int deaths = 0;
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        const auto& r = cohort.records[i];
        if (r.event_indicator) {
            ++deaths;
            CHECK(*r.time_to_event_days == cohort.truth[i].t_death_days);
            CHECK(r.last_followup_days == *r.time_to_event_days);
        } else {
            CHECK(cohort.truth[i].t_death_days > r.last_followup_days);
        }
        double prev = -1e9;
        for (const auto& e : r.events) {
            CHECK(e.t_days >= kWindowLoDays);
            CHECK(e.t_days <= kWindowHiDays);
            CHECK(e.t_days <= r.last_followup_days);
            CHECK(e.t_days >= prev);
            prev = e.t_days;
        }
    }
    CHECK(deaths > 30);
    CHECK(deaths < 190);
}

TEST_CASE("beta = 0: modality scores are uninformative about death") {
    SynthConfig cfg;
    cfg.n_patients = 2000;
    cfg.seed = 7;
    cfg.beta = 0.0;
    auto cohort = generate_cohort_records(cfg);
    std::vector<ScoredSample> samples;
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        auto score = last_visit_risk_score(cohort.records[i], Modality::kBlood, "blood",
                                           cfg.n_blood_features);
        if (!score) continue;
        samples.push_back({cohort.records[i].patient_id, *score,
                           cohort.truth[i].t_death_days <= 360.0});
    }
    auto a = auc(samples);
    REQUIRE(a.has_value());
    CHECK(std::abs(*a - 0.5) <= 0.03);
}

TEST_CASE("blood-only signal: the risk-feature oracle separates 12-month mortality") {
    SynthConfig cfg;
    cfg.n_patients = 2000;
    cfg.seed = 7;
    cfg.modality_signal = {1.0, 0.0, 0.0};
    auto cohort = generate_cohort_records(cfg);
    std::vector<ScoredSample> samples;
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        auto score = last_visit_risk_score(cohort.records[i], Modality::kBlood, "blood",
                                           cfg.n_blood_features);
        if (!score) continue;
        samples.push_back({cohort.records[i].patient_id, *score,
                           cohort.truth[i].t_death_days <= 360.0});
    }
    auto a = auc(samples);
    REQUIRE(a.has_value());
    INFO("oracle auc ", *a);
    CHECK(*a > 0.75);
    // sidecar z reproduces the oracle computation: z itself scores at least
    // as well up to noise
    std::vector<ScoredSample> z_samples;
    for (size_t i = 0; i < cohort.truth.size(); ++i)
        z_samples.push_back({cohort.truth[i].patient_id, cohort.truth[i].z,
                             cohort.truth[i].t_death_days <= 360.0});
    auto az = auc(z_samples);
    CHECK(*az > 0.75);
}

TEST_CASE("hazard correctness: empirical 360-day death fraction matches the integral") {
    SynthConfig cfg;
    cfg.n_patients = 10000;
    cfg.seed = 21;
    auto cohort = generate_cohort_records(cfg);
    double empirical = 0.0;
    for (const auto& gt : cohort.truth)
        empirical += gt.t_death_days <= 360.0 ? 1.0 : 0.0;
    empirical /= static_cast<double>(cohort.truth.size());

    // Monte-Carlo integration of 1 - E[exp(-360 * rate(z))] on a fresh stream
    Rng rng(987654);
    double expected = 0.0;
    const int draws = 200000;
    for (int i = 0; i < draws; ++i) {
        const double z = rng.normal();
        expected += 1.0 - std::exp(-360.0 * cfg.base_hazard_per_day *
                                   std::exp(cfg.beta * z));
    }
    expected /= draws;
    INFO("empirical ", empirical, " expected ", expected);
    CHECK(std::abs(empirical - expected) <= 0.02);
}

TEST_CASE("complementary modalities: the combined oracle dominates each single one") {
    SynthConfig cfg;
    cfg.n_patients = 5000;
    cfg.seed = 31;
    cfg.modality_signal = {0.6, 0.6, 0.0};
    cfg.p_missing_imaging = 0.0;
    auto cohort = generate_cohort_records(cfg);
    std::vector<ScoredSample> blood_s, img_s, both_s;
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        auto b = last_visit_risk_score(cohort.records[i], Modality::kBlood, "blood",
                                       cfg.n_blood_features);
        auto g = last_visit_risk_score(cohort.records[i], Modality::kImaging, "organ",
                                       cfg.n_imaging_features);
        if (!b || !g) continue;
        const bool label = cohort.truth[i].t_death_days <= 360.0;
        const std::string& id = cohort.records[i].patient_id;
        blood_s.push_back({id, *b, label});
        img_s.push_back({id, *g, label});
        both_s.push_back({id, 0.5 * (*b + *g), label});
    }
    auto ab = auc(blood_s), ag = auc(img_s), a2 = auc(both_s);
    REQUIRE(ab.has_value());
    REQUIRE(ag.has_value());
    REQUIRE(a2.has_value());
    INFO("blood ", *ab, " imaging ", *ag, " combined ", *a2);
    CHECK(*a2 > *ab);
    CHECK(*a2 > *ag);
}

TEST_CASE("eligibility realism: some generated patients fail the filter") {
    SynthConfig cfg;
    cfg.n_patients = 500;
    cfg.seed = 9;
    auto cohort = generate_cohort_records(cfg);
    auto res = eligibility_filter(cohort.records);
    CHECK(!res.excluded.empty());
    CHECK(res.included.size() > 300);
}
