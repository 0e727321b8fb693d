#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "simta/rng.hpp"

namespace simta {

// Malformed datasets, reports or manifests. The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Modality { kBlood = 0, kImaging = 1, kMedication = 2 };

inline constexpr std::array<Modality, 3> kModalityOrder = {
    Modality::kBlood, Modality::kImaging, Modality::kMedication};

const char* modality_name(Modality m);
std::optional<Modality> modality_from_name(const std::string& name);

// Observation window relative to start of treatment, and the four prediction
// horizons (months are fixed at 30 days).
inline constexpr double kWindowLoDays = -90.0;
inline constexpr double kWindowHiDays = 365.0;
inline constexpr double kMinCutoffDays = 90.0;
inline constexpr double kMaxCutoffDays = 365.0;
inline constexpr std::array<double, 4> kHorizonsDays = {90.0, 180.0, 270.0, 360.0};

struct ObservationEvent {
    double t_days = 0.0;
    Modality modality = Modality::kBlood;
    // blood/imaging carry features (null = missing measurement)
    std::map<std::string, std::optional<double>> features;
    // medication carries classification codes
    std::vector<std::string> codes;
};

struct PatientRecord {
    std::string patient_id;
    std::vector<ObservationEvent> events;
    bool event_indicator = false;
    std::optional<double> time_to_event_days;
    double last_followup_days = 0.0;
};

// --- dataset file format (one JSON object per line) ---------------------

std::vector<PatientRecord> read_cohort_file(const std::string& path);
void write_cohort_file(const std::string& path,
                       const std::vector<PatientRecord>& records);

// --- eligibility ---------------------------------------------------------

struct ExcludedPatient {
    std::string patient_id;
    std::string reason;  // "followup<90d" | "no-12-month-window"
};

struct EligibilityResult {
    std::vector<PatientRecord> included;
    std::vector<ExcludedPatient> excluded;
};

// Keeps patients with >= 90 days of follow-up for whom some cutoff in
// [90, 365] defines all four labels: any death at day >= 90, or survival
// observed beyond 450 days.
EligibilityResult eligibility_filter(const std::vector<PatientRecord>& cohort);

// --- preprocessing -------------------------------------------------------

struct KeptFeatures {
    std::vector<std::string> blood;    // sorted
    std::vector<std::string> imaging;  // sorted
};

// Drops imaging features missing in >= 50% of imaging events and blood
// features missing in > 60% of blood events, both over training events only.
KeptFeatures feature_missingness_filter(const std::vector<PatientRecord>& train);

struct FeatureScaling {
    double median = 0.0;
    double iqr = 1.0;  // 0 is replaced by 1 at apply time
};

struct PreprocessStats {
    KeptFeatures kept;
    std::vector<FeatureScaling> blood_scaling;    // aligned with kept.blood
    std::vector<FeatureScaling> imaging_scaling;  // aligned with kept.imaging
    // Per blood feature: ridge coefficients over all blood features (self
    // coefficient is zero) plus an intercept in the last slot, all in scaled
    // space. Empty when median_only_imputer is set.
    std::vector<std::vector<double>> imputer_coef;
    bool median_only_imputer = false;
    std::map<std::string, int> med_vocab;  // code -> token id; UNK is 0
};

inline constexpr int kUnkTokenId = 0;

// Fits robust scaling, the chained-equations blood imputer and the
// medication vocabulary on training-fold patients only.
PreprocessStats fit_preprocessor(const std::vector<PatientRecord>& train,
                                 const KeptFeatures& kept);

void save_preprocessor(const PreprocessStats& stats, const std::string& path);
PreprocessStats load_preprocessor(const std::string& path);

struct PreprocessedEvent {
    double t_days = 0.0;
    Modality modality = Modality::kBlood;
    std::vector<double> features;   // scaled, fully imputed (blood/imaging)
    std::vector<int32_t> tokens;    // medication code tokens
};

struct PreprocessedPatient {
    std::string patient_id;
    bool event_indicator = false;
    std::optional<double> time_to_event_days;
    double last_followup_days = 0.0;
    std::vector<PreprocessedEvent> events;  // sorted ascending by t_days
};

PreprocessedPatient apply_preprocessor(const PatientRecord& record,
                                       const PreprocessStats& stats);

// --- cutoffs and labels ----------------------------------------------------

double sample_cutoff(Rng& rng, double lo = kMinCutoffDays, double hi = kMaxCutoffDays);

struct LabelSet {
    double cutoff_days = 0.0;
    std::array<std::optional<bool>, 4> labels;  // per horizon; nullopt = masked

    int defined_count() const {
        int n = 0;
        for (const auto& l : labels) n += l.has_value() ? 1 : 0;
        return n;
    }
};

// Labels for death within cutoff + horizon. Throws "cutoff-post-mortem" when
// the patient died strictly before the cutoff.
LabelSet derive_labels(bool event_indicator, std::optional<double> time_to_event_days,
                       double last_followup_days, double cutoff_days);

// Drops events after the cutoff and derives the label set.
std::pair<PreprocessedPatient, LabelSet> truncate_and_label(
    const PreprocessedPatient& patient, double cutoff_days);
std::pair<PatientRecord, LabelSet> truncate_and_label(const PatientRecord& record,
                                                      double cutoff_days);

}  // namespace simta
