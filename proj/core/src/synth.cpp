#include "simta/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace simta {

using ordered_json = nlohmann::ordered_json;

namespace {

// Cohort-level feature geometry, fixed by the seed: per-feature baselines,
// drifts, and which features carry the risk loading (the first half).
struct FeatureBank {
    std::vector<double> baseline;
    std::vector<double> drift;
    std::vector<uint8_t> risk_loaded;
};

FeatureBank make_bank(int n_features, Rng& rng) {
    FeatureBank bank;
    bank.baseline.resize(n_features);
    bank.drift.resize(n_features);
    bank.risk_loaded.resize(n_features);
    for (int f = 0; f < n_features; ++f) {
        bank.baseline[f] = rng.normal();
        bank.drift[f] = rng.uniform(-0.3, 0.3);
        bank.risk_loaded[f] = f < n_features / 2 ? 1 : 0;
    }
    return bank;
}

std::string feature_name(const char* stem, int f) {
    std::ostringstream os;
    os << stem << "_" << (f < 10 ? "0" : "") << f;
    return os.str();
}

std::vector<double> visit_times(Rng& rng, double rate_per_month, double window_end) {
    std::vector<double> out;
    if (rate_per_month <= 0.0) return out;
    const double rate_per_day = rate_per_month / 30.0;
    double t = kWindowLoDays;
    for (;;) {
        t += rng.exponential(rate_per_day);
        if (t > window_end) break;
        out.push_back(t);
    }
    return out;
}

PatientRecord generate_patient(Rng& rng, const SynthConfig& cfg,
                               const FeatureBank& blood_bank,
                               const FeatureBank& imaging_bank, int index,
                               GroundTruth& gt) {
    PatientRecord r;
    std::ostringstream id;
    id << "s";
    for (int digits = 100000; digits > std::max(index, 1); digits /= 10) id << "0";
    id << index;
    r.patient_id = id.str();

    const double z = rng.normal();
    const double rate = cfg.base_hazard_per_day * std::exp(cfg.beta * z);
    const double t_death = rng.exponential(rate);
    const double censor = rng.uniform(cfg.censor_lo_days, cfg.censor_hi_days);
    r.event_indicator = t_death <= censor;
    if (r.event_indicator) {
        r.time_to_event_days = t_death;
        r.last_followup_days = t_death;
    } else {
        r.last_followup_days = censor;
    }
    gt = {r.patient_id, z, t_death};

    const double window_end =
        std::min({kWindowHiDays, t_death, censor});

    auto emit_features = [&](Modality m, const FeatureBank& bank, double signal,
                             const char* stem, double t) {
        ObservationEvent e;
        e.t_days = t;
        e.modality = m;
        const double z_coef = std::sqrt(std::clamp(signal, 0.0, 1.0));
        const double noise_risk = std::sqrt(1.0 - std::clamp(signal, 0.0, 1.0));
        for (size_t f = 0; f < bank.baseline.size(); ++f) {
            const std::string name = feature_name(stem, static_cast<int>(f));
            if (rng.uniform() < cfg.p_feature_missing) {
                e.features[name] = std::nullopt;
                continue;
            }
            double v = bank.baseline[f] + bank.drift[f] * (t / 365.0);
            if (bank.risk_loaded[f])
                v += z_coef * z + noise_risk * rng.normal();
            else
                v += rng.normal();
            e.features[name] = v;
        }
        return e;
    };

    // blood
    for (double t : visit_times(rng, cfg.visit_rate_per_month[0], window_end))
        r.events.push_back(emit_features(Modality::kBlood, blood_bank,
                                         cfg.modality_signal[0], "blood", t));
    // imaging: the whole modality may be absent for this patient
    const bool has_imaging = rng.uniform() >= cfg.p_missing_imaging;
    if (has_imaging) {
        for (double t : visit_times(rng, cfg.visit_rate_per_month[1], window_end))
            r.events.push_back(emit_features(Modality::kImaging, imaging_bank,
                                             cfg.modality_signal[1], "organ", t));
    }
    // medications: risk-linked categories are drawn more often for high z
    const size_t n_cat = cfg.med_categories.size();
    const size_t n_neutral = n_cat / 2;
    const double s_med = cfg.modality_signal[2];
    for (double t : visit_times(rng, cfg.visit_rate_per_month[2], window_end)) {
        ObservationEvent e;
        e.t_days = t;
        e.modality = Modality::kMedication;
        const size_t n_codes = 1 + rng.uniform_int(3);
        const double logit = -0.5 + 2.5 * s_med * z;
        const double p_risk = 1.0 / (1.0 + std::exp(-logit));
        for (size_t c = 0; c < n_codes; ++c) {
            if (n_neutral < n_cat && rng.uniform() < p_risk)
                e.codes.push_back(
                    cfg.med_categories[n_neutral + rng.uniform_int(n_cat - n_neutral)]);
            else
                e.codes.push_back(cfg.med_categories[rng.uniform_int(std::max<size_t>(
                    n_neutral, 1))]);
        }
        r.events.push_back(std::move(e));
    }

    std::stable_sort(r.events.begin(), r.events.end(),
                     [](const ObservationEvent& a, const ObservationEvent& b) {
                         return a.t_days < b.t_days;
                     });
    return r;
}

}  // namespace

SynthCohort generate_cohort_records(const SynthConfig& cfg) {
    if (cfg.n_patients < 0)
        throw std::invalid_argument("synth: n_patients must be >= 0");
    if (cfg.med_categories.empty())
        throw std::invalid_argument("synth: med_categories must not be empty");
    SynthCohort out;
    Rng bank_rng(cfg.seed, 999);
    const FeatureBank blood_bank = make_bank(cfg.n_blood_features, bank_rng);
    const FeatureBank imaging_bank = make_bank(cfg.n_imaging_features, bank_rng);
    Rng rng(cfg.seed);
    out.records.reserve(cfg.n_patients);
    out.truth.reserve(cfg.n_patients);
    for (int i = 0; i < cfg.n_patients; ++i) {
        GroundTruth gt;
        out.records.push_back(
            generate_patient(rng, cfg, blood_bank, imaging_bank, i, gt));
        out.truth.push_back(std::move(gt));
    }
    return out;
}

void generate_cohort(const SynthConfig& cfg, const std::string& cohort_path,
                     const std::string& sidecar_path) {
    const SynthCohort cohort = generate_cohort_records(cfg);
    write_cohort_file(cohort_path, cohort.records);
    std::ofstream side(sidecar_path);
    if (!side) throw DataError("cannot write sidecar file: " + sidecar_path);
    for (const auto& gt : cohort.truth) {
        ordered_json j;
        j["patient_id"] = gt.patient_id;
        j["z"] = gt.z;
        j["t_death_days"] = gt.t_death_days;
        side << j.dump() << "\n";
    }
}

}  // namespace simta
