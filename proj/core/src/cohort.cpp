#include "simta/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace simta {

using ordered_json = nlohmann::ordered_json;

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::kBlood: return "blood";
        case Modality::kImaging: return "imaging";
        case Modality::kMedication: return "medication";
    }
    return "?";
}

std::optional<Modality> modality_from_name(const std::string& name) {
    if (name == "blood") return Modality::kBlood;
    if (name == "imaging") return Modality::kImaging;
    if (name == "medication") return Modality::kMedication;
    return std::nullopt;
}

// --- dataset io ------------------------------------------------------------

namespace {

[[noreturn]] void line_error(size_t line_no, const std::string& what) {
    throw DataError("dataset line " + std::to_string(line_no) + ": " + what);
}

PatientRecord parse_record(const ordered_json& j, size_t line_no) {
    PatientRecord r;
    if (!j.is_object()) line_error(line_no, "not a JSON object");
    if (!j.contains("patient_id") || !j["patient_id"].is_string())
        line_error(line_no, "missing string field 'patient_id'");
    r.patient_id = j["patient_id"].get<std::string>();
    if (!j.contains("event_indicator") || !j["event_indicator"].is_boolean())
        line_error(line_no, "missing boolean field 'event_indicator'");
    r.event_indicator = j["event_indicator"].get<bool>();
    if (!j.contains("time_to_event_days"))
        line_error(line_no, "missing field 'time_to_event_days' (number or null)");
    if (j["time_to_event_days"].is_number())
        r.time_to_event_days = j["time_to_event_days"].get<double>();
    else if (!j["time_to_event_days"].is_null())
        line_error(line_no, "'time_to_event_days' must be a number or null");
    if (r.event_indicator && !r.time_to_event_days.has_value())
        line_error(line_no, "event_indicator set but time_to_event_days is null");
    if (!r.event_indicator && r.time_to_event_days.has_value())
        line_error(line_no, "time_to_event_days given without event_indicator");
    if (!j.contains("last_followup_days") || !j["last_followup_days"].is_number())
        line_error(line_no, "missing numeric field 'last_followup_days'");
    r.last_followup_days = j["last_followup_days"].get<double>();
    if (!(r.last_followup_days > 0.0))
        line_error(line_no, "'last_followup_days' must be positive");
    if (!j.contains("events") || !j["events"].is_array())
        line_error(line_no, "missing array field 'events'");

    for (const auto& je : j["events"]) {
        ObservationEvent e;
        if (!je.contains("t_days") || !je["t_days"].is_number())
            line_error(line_no, "event missing numeric 't_days'");
        e.t_days = je["t_days"].get<double>();
        if (!je.contains("modality") || !je["modality"].is_string())
            line_error(line_no, "event missing string 'modality'");
        auto m = modality_from_name(je["modality"].get<std::string>());
        if (!m)
            line_error(line_no, "unknown modality '" +
                                    je["modality"].get<std::string>() + "'");
        e.modality = *m;
        if (e.modality == Modality::kMedication) {
            if (!je.contains("codes") || !je["codes"].is_array())
                line_error(line_no, "medication event missing array 'codes'");
            for (const auto& c : je["codes"]) {
                if (!c.is_string()) line_error(line_no, "medication code must be a string");
                e.codes.push_back(c.get<std::string>());
            }
            if (je.contains("features"))
                line_error(line_no, "medication event must not carry features");
        } else {
            if (!je.contains("features") || !je["features"].is_object())
                line_error(line_no, "blood/imaging event missing object 'features'");
            for (auto it = je["features"].begin(); it != je["features"].end(); ++it) {
                if (it.value().is_null())
                    e.features[it.key()] = std::nullopt;
                else if (it.value().is_number())
                    e.features[it.key()] = it.value().get<double>();
                else
                    line_error(line_no, "feature '" + it.key() + "' must be number or null");
            }
            if (je.contains("codes"))
                line_error(line_no, "blood/imaging event must not carry codes");
        }
        // observation window: keep [-90, 365] relative to start of treatment
        if (e.t_days < kWindowLoDays || e.t_days > kWindowHiDays) continue;
        r.events.push_back(std::move(e));
    }
    return r;
}

}  // namespace

std::vector<PatientRecord> read_cohort_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<PatientRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            line_error(line_no, std::string("JSON parse failure: ") + e.what());
        }
        out.push_back(parse_record(j, line_no));
    }
    return out;
}

void write_cohort_file(const std::string& path,
                       const std::vector<PatientRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const auto& r : records) {
        ordered_json j;
        j["patient_id"] = r.patient_id;
        j["event_indicator"] = r.event_indicator;
        if (r.time_to_event_days)
            j["time_to_event_days"] = *r.time_to_event_days;
        else
            j["time_to_event_days"] = nullptr;
        j["last_followup_days"] = r.last_followup_days;
        j["events"] = ordered_json::array();
        for (const auto& e : r.events) {
            ordered_json je;
            je["t_days"] = e.t_days;
            je["modality"] = modality_name(e.modality);
            if (e.modality == Modality::kMedication) {
                je["codes"] = e.codes;
            } else {
                ordered_json f;
                for (const auto& [name, v] : e.features) {
                    if (v)
                        f[name] = *v;
                    else
                        f[name] = nullptr;
                }
                je["features"] = std::move(f);
            }
            j["events"].push_back(std::move(je));
        }
        out << j.dump() << "\n";
    }
}

// --- eligibility -------------------------------------------------------------

EligibilityResult eligibility_filter(const std::vector<PatientRecord>& cohort) {
    EligibilityResult res;
    for (const auto& r : cohort) {
        const double fu = r.event_indicator ? *r.time_to_event_days : r.last_followup_days;
        if (fu < kMinCutoffDays) {
            res.excluded.push_back({r.patient_id, "followup<90d"});
            continue;
        }
        if (!r.event_indicator &&
            r.last_followup_days < kMinCutoffDays + kHorizonsDays.back()) {
            res.excluded.push_back({r.patient_id, "no-12-month-window"});
            continue;
        }
        res.included.push_back(r);
    }
    return res;
}

// --- feature filter ----------------------------------------------------------

namespace {

struct MissingCount {
    size_t missing = 0;
    size_t total = 0;
};

std::map<std::string, MissingCount> missingness(
    const std::vector<PatientRecord>& train, Modality modality) {
    // union of feature names over all events of the modality
    std::set<std::string> names;
    size_t n_events = 0;
    for (const auto& r : train)
        for (const auto& e : r.events)
            if (e.modality == modality) {
                ++n_events;
                for (const auto& [k, v] : e.features) names.insert(k);
            }
    std::map<std::string, MissingCount> out;
    for (const auto& n : names) out[n] = {0, n_events};
    for (const auto& r : train)
        for (const auto& e : r.events) {
            if (e.modality != modality) continue;
            for (const auto& n : names) {
                auto it = e.features.find(n);
                if (it == e.features.end() || !it->second.has_value())
                    out[n].missing += 1;
            }
        }
    return out;
}

}  // namespace

KeptFeatures feature_missingness_filter(const std::vector<PatientRecord>& train) {
    KeptFeatures kept;
    const auto blood = missingness(train, Modality::kBlood);
    const auto imaging = missingness(train, Modality::kImaging);
    for (const auto& [name, c] : blood) {
        // blood: dropped when missing fraction is strictly above 60%
        if (c.total == 0) continue;
        const double frac = static_cast<double>(c.missing) / static_cast<double>(c.total);
        if (frac <= 0.60) kept.blood.push_back(name);
    }
    for (const auto& [name, c] : imaging) {
        // imaging: dropped when missing fraction reaches 50%
        if (c.total == 0) continue;
        const double frac = static_cast<double>(c.missing) / static_cast<double>(c.total);
        if (frac < 0.50) kept.imaging.push_back(name);
    }
    if (!blood.empty() && kept.blood.empty())
        throw DataError("feature filter: modality degenerate (all blood features dropped)");
    if (!imaging.empty() && kept.imaging.empty())
        throw DataError("feature filter: modality degenerate (all imaging features dropped)");
    return kept;
}

// --- preprocessor fit ---------------------------------------------------------

namespace {

// type-7 quantile (linear interpolation) on sorted data
double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    if (sorted.size() == 1) return sorted[0];
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

FeatureScaling fit_scaling(std::vector<double> observed) {
    std::sort(observed.begin(), observed.end());
    FeatureScaling s;
    s.median = quantile_sorted(observed, 0.5);
    s.iqr = quantile_sorted(observed, 0.75) - quantile_sorted(observed, 0.25);
    return s;
}

double scale_value(double x, const FeatureScaling& s) {
    const double div = s.iqr == 0.0 ? 1.0 : s.iqr;
    return (x - s.median) / div;
}

// Gaussian elimination with partial pivoting; solves in place.
std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                 std::vector<double> b) {
    const size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        const double d = a[col][col];
        if (d == 0.0) continue;  // leaves a zero solution for this coordinate
        for (size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / d;
            if (f == 0.0) continue;
            for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
        x[i] = a[i][i] == 0.0 ? 0.0 : acc / a[i][i];
    }
    return x;
}

constexpr double kRidgeLambda = 1e-3;
constexpr int kImputerMaxRounds = 10;
constexpr double kImputerTol = 1e-3;

// Ridge regression of column `target` on all other columns plus an intercept,
// fitted on the rows where the target was observed. Returns F coefficients
// (self = 0) followed by the intercept.
std::vector<double> fit_ridge_column(const std::vector<std::vector<double>>& x,
                                     const std::vector<std::vector<uint8_t>>& observed,
                                     size_t target) {
    const size_t f_count = x.empty() ? 0 : x[0].size();
    const size_t dim = f_count;  // predictors: all features except target, plus 1
    std::vector<size_t> pred;
    for (size_t f = 0; f < f_count; ++f)
        if (f != target) pred.push_back(f);
    const size_t p = pred.size() + 1;  // + intercept
    std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
    std::vector<double> xty(p, 0.0);
    size_t rows_used = 0;
    for (size_t r = 0; r < x.size(); ++r) {
        if (!observed[r][target]) continue;
        ++rows_used;
        std::vector<double> row(p, 1.0);  // intercept in the last slot
        for (size_t i = 0; i < pred.size(); ++i) row[i] = x[r][pred[i]];
        const double y = x[r][target];
        for (size_t i = 0; i < p; ++i) {
            xty[i] += row[i] * y;
            for (size_t j = 0; j < p; ++j) xtx[i][j] += row[i] * row[j];
        }
    }
    std::vector<double> coef(dim + 1, 0.0);
    if (rows_used == 0) return coef;  // fall back to the median (all zeros)
    for (size_t i = 0; i + 1 < p; ++i) xtx[i][i] += kRidgeLambda;  // intercept unregularized
    const auto beta = solve_linear(std::move(xtx), std::move(xty));
    for (size_t i = 0; i < pred.size(); ++i) coef[pred[i]] = beta[i];
    coef[dim] = beta[pred.size()];
    return coef;
}

}  // namespace

PreprocessStats fit_preprocessor(const std::vector<PatientRecord>& train,
                                 const KeptFeatures& kept) {
    PreprocessStats stats;
    stats.kept = kept;

    // scaling statistics per kept feature over raw observed training values
    auto collect = [&](Modality m, const std::vector<std::string>& names,
                       std::vector<FeatureScaling>& out) {
        out.clear();
        for (const auto& name : names) {
            std::vector<double> observed;
            for (const auto& r : train)
                for (const auto& e : r.events) {
                    if (e.modality != m) continue;
                    auto it = e.features.find(name);
                    if (it != e.features.end() && it->second.has_value())
                        observed.push_back(*it->second);
                }
            out.push_back(fit_scaling(std::move(observed)));
        }
    };
    collect(Modality::kBlood, kept.blood, stats.blood_scaling);
    collect(Modality::kImaging, kept.imaging, stats.imaging_scaling);

    // medication vocabulary: UNK = 0, then training codes in sorted order
    std::set<std::string> codes;
    for (const auto& r : train)
        for (const auto& e : r.events)
            if (e.modality == Modality::kMedication)
                for (const auto& c : e.codes) codes.insert(c);
    int next_id = kUnkTokenId + 1;
    for (const auto& c : codes) stats.med_vocab[c] = next_id++;

    // blood imputer: chained ridge regressions on scaled training rows
    const size_t f_count = kept.blood.size();
    std::vector<std::vector<double>> x;       // scaled, working copy
    std::vector<std::vector<uint8_t>> seen;   // observed mask
    for (const auto& r : train)
        for (const auto& e : r.events) {
            if (e.modality != Modality::kBlood) continue;
            std::vector<double> row(f_count, 0.0);
            std::vector<uint8_t> obs(f_count, 0);
            for (size_t f = 0; f < f_count; ++f) {
                auto it = e.features.find(kept.blood[f]);
                if (it != e.features.end() && it->second.has_value()) {
                    row[f] = scale_value(*it->second, stats.blood_scaling[f]);
                    obs[f] = 1;
                }
                // missing entries start at the scaled median, i.e. zero
            }
            x.push_back(std::move(row));
            seen.push_back(std::move(obs));
        }

    size_t complete_rows = 0;
    for (const auto& obs : seen) {
        bool complete = true;
        for (uint8_t o : obs) complete = complete && o;
        complete_rows += complete ? 1 : 0;
    }
    if (complete_rows < 2 || f_count < 2) {
        stats.median_only_imputer = true;
        return stats;
    }

    std::vector<size_t> incomplete;
    for (size_t f = 0; f < f_count; ++f) {
        bool any_missing = false;
        for (const auto& obs : seen) any_missing = any_missing || !obs[f];
        if (any_missing) incomplete.push_back(f);
    }

    for (int round = 0; round < kImputerMaxRounds && !incomplete.empty(); ++round) {
        double max_update = 0.0;
        for (size_t f : incomplete) {
            const auto coef = fit_ridge_column(x, seen, f);
            for (size_t r = 0; r < x.size(); ++r) {
                if (seen[r][f]) continue;
                double pred = coef[f_count];
                for (size_t c = 0; c < f_count; ++c) pred += coef[c] * x[r][c];
                max_update = std::max(max_update, std::abs(pred - x[r][f]));
                x[r][f] = pred;
            }
        }
        if (max_update < kImputerTol) break;
    }

    // store one regression per blood feature from the converged matrix
    stats.imputer_coef.resize(f_count);
    for (size_t f = 0; f < f_count; ++f)
        stats.imputer_coef[f] = fit_ridge_column(x, seen, f);
    return stats;
}

// --- preprocessor apply -------------------------------------------------------

PreprocessedPatient apply_preprocessor(const PatientRecord& record,
                                       const PreprocessStats& stats) {
    PreprocessedPatient out;
    out.patient_id = record.patient_id;
    out.event_indicator = record.event_indicator;
    out.time_to_event_days = record.time_to_event_days;
    out.last_followup_days = record.last_followup_days;

    for (const auto& e : record.events) {
        PreprocessedEvent pe;
        pe.t_days = e.t_days;
        pe.modality = e.modality;
        if (e.modality == Modality::kMedication) {
            for (const auto& c : e.codes) {
                auto it = stats.med_vocab.find(c);
                pe.tokens.push_back(it == stats.med_vocab.end()
                                        ? kUnkTokenId
                                        : static_cast<int32_t>(it->second));
            }
            if (pe.tokens.empty()) pe.tokens.push_back(kUnkTokenId);
        } else {
            const bool blood = e.modality == Modality::kBlood;
            const auto& names = blood ? stats.kept.blood : stats.kept.imaging;
            const auto& scaling = blood ? stats.blood_scaling : stats.imaging_scaling;
            const size_t f_count = names.size();
            pe.features.assign(f_count, 0.0);  // scaled median
            std::vector<uint8_t> seen(f_count, 0);
            for (size_t f = 0; f < f_count; ++f) {
                auto it = e.features.find(names[f]);
                if (it != e.features.end() && it->second.has_value()) {
                    pe.features[f] = scale_value(*it->second, scaling[f]);
                    seen[f] = 1;
                }
            }
            if (blood && !stats.median_only_imputer) {
                // one sequential pass of the fitted regressions
                for (size_t f = 0; f < f_count; ++f) {
                    if (seen[f]) continue;
                    const auto& coef = stats.imputer_coef[f];
                    double pred = coef[f_count];
                    for (size_t c = 0; c < f_count; ++c) pred += coef[c] * pe.features[c];
                    pe.features[f] = pred;
                }
            }
            // imaging (and median-only blood) keeps the scaled median 0
        }
        out.events.push_back(std::move(pe));
    }
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const PreprocessedEvent& a, const PreprocessedEvent& b) {
                         return a.t_days < b.t_days;
                     });
    return out;
}

// --- preprocessor (de)serialization -------------------------------------------

void save_preprocessor(const PreprocessStats& stats, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["kept_blood"] = stats.kept.blood;
    j["kept_imaging"] = stats.kept.imaging;
    auto dump_scaling = [](const std::vector<FeatureScaling>& v) {
        ordered_json a = ordered_json::array();
        for (const auto& s : v) a.push_back({{"median", s.median}, {"iqr", s.iqr}});
        return a;
    };
    j["blood_scaling"] = dump_scaling(stats.blood_scaling);
    j["imaging_scaling"] = dump_scaling(stats.imaging_scaling);
    j["median_only_imputer"] = stats.median_only_imputer;
    j["imputer_coef"] = stats.imputer_coef;
    j["med_vocab"] = stats.med_vocab;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write preprocessor file: " + path);
    out << j.dump(2) << "\n";
}

PreprocessStats load_preprocessor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open preprocessor file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("preprocessor file " + path + ": " + e.what());
    }
    PreprocessStats stats;
    stats.kept.blood = j.at("kept_blood").get<std::vector<std::string>>();
    stats.kept.imaging = j.at("kept_imaging").get<std::vector<std::string>>();
    auto read_scaling = [](const ordered_json& a) {
        std::vector<FeatureScaling> v;
        for (const auto& s : a)
            v.push_back({s.at("median").get<double>(), s.at("iqr").get<double>()});
        return v;
    };
    stats.blood_scaling = read_scaling(j.at("blood_scaling"));
    stats.imaging_scaling = read_scaling(j.at("imaging_scaling"));
    stats.median_only_imputer = j.at("median_only_imputer").get<bool>();
    stats.imputer_coef = j.at("imputer_coef").get<std::vector<std::vector<double>>>();
    stats.med_vocab = j.at("med_vocab").get<std::map<std::string, int>>();
    return stats;
}

// --- cutoffs and labels ---------------------------------------------------------

double sample_cutoff(Rng& rng, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("sample_cutoff: lo must be < hi");
    return rng.uniform(lo, hi);
}

LabelSet derive_labels(bool event_indicator, std::optional<double> time_to_event_days,
                       double last_followup_days, double cutoff_days) {
    LabelSet ls;
    ls.cutoff_days = cutoff_days;
    if (event_indicator && *time_to_event_days < cutoff_days)
        throw std::invalid_argument("truncate_and_label: cutoff-post-mortem (death at " +
                                    std::to_string(*time_to_event_days) + ", cutoff " +
                                    std::to_string(cutoff_days) + ")");
    for (size_t t = 0; t < kHorizonsDays.size(); ++t) {
        const double horizon_end = cutoff_days + kHorizonsDays[t];
        if (event_indicator) {
            ls.labels[t] = *time_to_event_days <= horizon_end;
        } else if (last_followup_days >= horizon_end) {
            ls.labels[t] = false;
        }  // otherwise censored before the horizon: masked
    }
    return ls;
}

std::pair<PreprocessedPatient, LabelSet> truncate_and_label(
    const PreprocessedPatient& patient, double cutoff_days) {
    LabelSet ls = derive_labels(patient.event_indicator, patient.time_to_event_days,
                                patient.last_followup_days, cutoff_days);
    PreprocessedPatient out = patient;
    std::erase_if(out.events,
                  [&](const PreprocessedEvent& e) { return e.t_days > cutoff_days; });
    return {std::move(out), ls};
}

std::pair<PatientRecord, LabelSet> truncate_and_label(const PatientRecord& record,
                                                      double cutoff_days) {
    LabelSet ls = derive_labels(record.event_indicator, record.time_to_event_days,
                                record.last_followup_days, cutoff_days);
    PatientRecord out = record;
    std::erase_if(out.events,
                  [&](const ObservationEvent& e) { return e.t_days > cutoff_days; });
    return {std::move(out), ls};
}

}  // namespace simta
