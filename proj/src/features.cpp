#include "ecgage/features.hpp"

#include <cmath>
#include <unordered_map>

namespace ecgage {

namespace {

const char* const kNames[kEcgFeatureCount] = {
    "rr_ms", "qt_ms", "p_dur_ms", "pp_ms", "pt_ms", "pr_interval_ms", "t_dur_ms",
    "st_seg_ms", "qrs_ms", "pr_seg_ms", "qtc_ms", "rmssd_ms", "sdnn_ms",
};

std::optional<double> span_ms(const std::optional<std::size_t>& from, const std::optional<std::size_t>& to,
                              double fs_hz) {
    if (!from || !to) return std::nullopt;
    return (static_cast<double>(*to) - static_cast<double>(*from)) * 1000.0 / fs_hz;
}

}  // namespace

const char* feature_name(Feature f) { return kNames[static_cast<int>(f)]; }

std::vector<std::string> ecg_feature_names() { return {std::begin(kNames), std::end(kNames)}; }

bool EcgFeatures::complete() const {
    for (const auto& x : v)
        if (!x || std::isnan(*x)) return false;
    return true;
}

std::vector<EcgFeatures> interval_features(const std::vector<FiducialSet>& cycles, double fs_hz) {
    using F = Fiducial;
    std::vector<EcgFeatures> out(cycles.size());
    for (std::size_t i = 0; i < cycles.size(); ++i) {
        const auto& c = cycles[i];
        auto& f = out[i];
        f[Feature::qt] = span_ms(c[F::qrs_onset], c[F::t_offset], fs_hz);
        f[Feature::p_dur] = span_ms(c[F::p_onset], c[F::p_offset], fs_hz);
        f[Feature::pr_interval] = span_ms(c[F::p_onset], c[F::qrs_onset], fs_hz);
        f[Feature::pr_seg] = span_ms(c[F::p_offset], c[F::qrs_onset], fs_hz);
        f[Feature::qrs] = span_ms(c[F::qrs_onset], c[F::qrs_offset], fs_hz);
        f[Feature::st_seg] = span_ms(c[F::qrs_offset], c[F::t_onset], fs_hz);
        f[Feature::t_dur] = span_ms(c[F::t_onset], c[F::t_offset], fs_hz);
        if (i + 1 < cycles.size() && cycles[i + 1].beat == c.beat + 1) {
            const auto& n = cycles[i + 1];
            f[Feature::rr] = span_ms(c[F::r_peak], n[F::r_peak], fs_hz);
            f[Feature::pp] = span_ms(c[F::p_peak], n[F::p_peak], fs_hz);
            f[Feature::pt] = span_ms(c[F::t_offset], n[F::p_onset], fs_hz);
        }
        if (f[Feature::qt] && f[Feature::rr] && *f[Feature::rr] > 0)
            f[Feature::qtc] = qtc(*f[Feature::qt], *f[Feature::rr]);
    }
    return out;
}

double qtc(double qt_ms, double rr_ms) {
    if (!(rr_ms > 0)) throw NumericError("QTc needs a positive RR interval");
    return qt_ms / std::sqrt(rr_ms / 1000.0);
}

double rmssd(std::span<const double> rr) {
    if (rr.size() < 3) throw DataError("RMSSD needs at least 3 RR intervals");
    double s = 0;
    for (std::size_t i = 1; i < rr.size(); ++i) {
        double d = rr[i] - rr[i - 1];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(rr.size() - 1));
}

double sdnn(std::span<const double> rr, StdConvention conv) {
    if (rr.size() < 2) throw DataError("SDNN needs at least 2 RR intervals");
    return conv == StdConvention::population ? pstdev(rr) : sstdev(rr);
}

Hrv hrv(std::span<const double> rr, StdConvention conv) { return {rmssd(rr), sdnn(rr, conv)}; }

std::optional<EcgFeatures> aggregate(std::span<const EcgFeatures> cycles, StdConvention conv) {
    if (cycles.empty()) return std::nullopt;
    EcgFeatures out;
    for (std::size_t k = 0; k < kEcgFeatureCount; ++k) {
        auto f = static_cast<Feature>(k);
        if (f == Feature::qtc || f == Feature::rmssd || f == Feature::sdnn) continue;
        double s = 0;
        std::size_t n = 0;
        for (const auto& c : cycles) {
            if (c[f]) {
                s += *c[f];
                ++n;
            }
        }
        if (n > 0) out[f] = s / static_cast<double>(n);
    }
    std::vector<double> rr;
    for (const auto& c : cycles)
        if (c[Feature::rr]) rr.push_back(*c[Feature::rr]);
    if (rr.size() >= 3) out[Feature::rmssd] = rmssd(rr);
    if (rr.size() >= 2) out[Feature::sdnn] = sdnn(rr, conv);
    if (out[Feature::qt] && out[Feature::rr]) out[Feature::qtc] = qtc(*out[Feature::qt], *out[Feature::rr]);
    return out;
}

std::vector<std::string> default_demographics() {
    return {"sex", "smoker", "bmi_kg_m2", "sleep_hours", "systolic_mmhg", "diastolic_mmhg", "resting_hr_bpm",
            "family_history"};
}

std::vector<std::string> predictor_names(const std::vector<std::string>& demographics) {
    auto names = ecg_feature_names();
    names.insert(names.end(), demographics.begin(), demographics.end());
    return names;
}

double demographic_value(const SubjectMetadata& m, const std::string& name, const SexEncoding& enc) {
    const double nan = std::nan("");
    if (name == "sex") return enc.encode(m.sex);
    if (name == "smoker") return m.smoker ? 1.0 : 0.0;
    if (name == "bmi_kg_m2") return m.bmi_kg_m2;
    if (name == "sleep_hours") return m.sleep_hours;
    if (name == "systolic_mmhg") return m.systolic_mmhg;
    if (name == "diastolic_mmhg") return m.diastolic_mmhg;
    if (name == "resting_hr_bpm") return m.resting_hr_bpm;
    if (name == "family_history") return m.family_history ? 1.0 : 0.0;
    if (name == "height_cm") return m.height_cm.value_or(nan);
    if (name == "weight_kg") return m.weight_kg.value_or(nan);
    throw UsageError("unknown demographic feature: " + name);
}

AssembledRows assemble_rows(const std::vector<ScopeFeatures>& scopes, const std::vector<SubjectMetadata>& metadata,
                            const std::vector<std::string>& demographics, const SexEncoding& enc) {
    std::unordered_map<std::string, const SubjectMetadata*> by_id;
    for (const auto& m : metadata) by_id[m.subject_id] = &m;
    for (const auto& d : demographics) demographic_value(SubjectMetadata{}, d, enc);  // validates names

    AssembledRows out;
    out.data.columns = predictor_names(demographics);
    std::vector<double> row(out.data.cols());
    for (const auto& s : scopes) {
        auto it = by_id.find(s.subject_id);
        if (it == by_id.end()) throw DataError("no metadata for subject " + s.subject_id);
        if (!s.features) {
            ++out.dropped_empty;
            continue;
        }
        const auto& m = *it->second;
        bool ok = true;
        for (std::size_t k = 0; k < kEcgFeatureCount; ++k) {
            const auto& v = s.features->v[k];
            row[k] = v ? *v : std::nan("");
            ok = ok && v && std::isfinite(*v);
        }
        for (std::size_t k = 0; k < demographics.size(); ++k) {
            row[kEcgFeatureCount + k] = demographic_value(m, demographics[k], enc);
            ok = ok && std::isfinite(row[kEcgFeatureCount + k]);
        }
        if (!ok) {
            ++out.dropped_missing;
            continue;
        }
        out.data.add_row(row, m.age_years, m.smoker ? 1.0 : 0.0, s.subject_id, s.segment_id);
    }
    return out;
}

}  // namespace ecgage
