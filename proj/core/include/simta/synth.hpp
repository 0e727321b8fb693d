#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "simta/cohort.hpp"
#include "simta/rng.hpp"

namespace simta {

// Seeded synthetic longitudinal multimodal cohort with a known latent risk.
// Survival is exponential with rate base_hazard_per_day * exp(beta * z),
// z ~ N(0,1); administrative censoring is uniform in [censor_lo, censor_hi].
struct SynthConfig {
    int n_patients = 1000;
    uint64_t seed = 7;
    double beta = 1.0;
    double base_hazard_per_day = 0.002;
    // fraction of each modality's feature variance carried by z
    std::array<double, 3> modality_signal = {0.6, 0.3, 0.3};
    double p_missing_imaging = 0.3;  // whole-modality absence per patient
    std::array<double, 3> visit_rate_per_month = {1.0, 1.0, 1.5};
    int n_blood_features = 8;
    int n_imaging_features = 8;
    // first half of the list behaves neutrally, second half is risk-linked
    // (opioid/corticosteroid-like): drawn more often as z grows
    std::vector<std::string> med_categories = {
        "L01AA01", "L01XC17", "L04AA10", "L04AX03",
        "N02AA01", "N02AB03", "H02AB04", "H02AB06"};
    double p_feature_missing = 0.10;
    double censor_lo_days = 450.0;
    double censor_hi_days = 1400.0;
};

struct GroundTruth {
    std::string patient_id;
    double z = 0.0;
    double t_death_days = 0.0;  // latent death time, censored or not
};

struct SynthCohort {
    std::vector<PatientRecord> records;
    std::vector<GroundTruth> truth;
};

// One patient from the shared cohort stream. `loadings_rng` state is owned by
// generate_cohort_records; use that entry point for whole cohorts.
SynthCohort generate_cohort_records(const SynthConfig& config);

// Writes the cohort in the dataset line format plus a ground-truth sidecar of
// (patient_id, z, t_death_days) lines.
void generate_cohort(const SynthConfig& config, const std::string& cohort_path,
                     const std::string& sidecar_path);

}  // namespace simta
