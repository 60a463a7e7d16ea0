#include "ecgage/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ecgage/delineate.hpp"

namespace ecgage {

SosCascade design_butterworth(const FilterSpec& spec) {
    if (spec.order < 1) throw UsageError("filter order must be >= 1");
    if (!(spec.sampling_rate_hz > 0)) throw UsageError("sampling rate must be positive");
    if (!(spec.cutoff_hz > 0) || spec.cutoff_hz >= spec.sampling_rate_hz / 2)
        throw UsageError("cutoff must lie strictly between 0 and Nyquist");

    const double k = 2.0 * spec.sampling_rate_hz;
    const double wc = k * std::tan(std::numbers::pi * spec.cutoff_hz / spec.sampling_rate_hz);
    const bool low = spec.kind == FilterKind::lowpass;
    const int n = spec.order;

    SosCascade sos;
    for (int i = 0; i < n / 2; ++i) {
        // Conjugate pole pair of the normalized prototype: s^2 + alpha s + 1.
        double theta = std::numbers::pi * (2.0 * i + 1.0) / (2.0 * n);
        double alpha = 2.0 * std::sin(theta) * wc;
        double d0 = k * k + alpha * k + wc * wc;
        Biquad bq;
        bq.a1 = (2.0 * wc * wc - 2.0 * k * k) / d0;
        bq.a2 = (k * k - alpha * k + wc * wc) / d0;
        if (low) {
            bq.b0 = wc * wc / d0;
            bq.b1 = 2.0 * bq.b0;
            bq.b2 = bq.b0;
        } else {
            bq.b0 = k * k / d0;
            bq.b1 = -2.0 * bq.b0;
            bq.b2 = bq.b0;
        }
        sos.push_back(bq);
    }
    if (n % 2 == 1) {
        double d0 = k + wc;
        Biquad bq;
        bq.a1 = (wc - k) / d0;
        if (low) {
            bq.b0 = wc / d0;
            bq.b1 = bq.b0;
        } else {
            bq.b0 = k / d0;
            bq.b1 = -bq.b0;
        }
        sos.push_back(bq);
    }
    // Pin passband gain of each section to exactly one.
    for (auto& bq : sos) {
        double sign = low ? 1.0 : -1.0;
        double num = bq.b0 + sign * bq.b1 + bq.b2;
        double den = 1.0 + sign * bq.a1 + bq.a2;
        double g = num / den;
        bq.b0 /= g;
        bq.b1 /= g;
        bq.b2 /= g;
    }
    return sos;
}

std::complex<double> frequency_response(const SosCascade& sos, double f_hz, double fs_hz) {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / fs_hz);
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h = 1.0;
    for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

namespace {

void run_cascade(std::vector<double>& y, const SosCascade& sos) {
    for (const auto& s : sos) {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : y) {
            double in = v;
            double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
}

}  // namespace

std::vector<double> apply_filter(std::span<const double> x, const SosCascade& sos, FilterMode mode) {
    if (x.empty()) throw DataError("apply_filter: empty input");
    std::vector<double> y(x.begin(), x.end());
    run_cascade(y, sos);
    if (mode == FilterMode::zero_phase) {
        std::reverse(y.begin(), y.end());
        run_cascade(y, sos);
        std::reverse(y.begin(), y.end());
    }
    return y;
}

std::size_t odd_window(double ms, double fs_hz) {
    auto n = static_cast<long long>(std::llround(ms * fs_hz / 1000.0));
    if (n < 1) n = 1;
    if (n % 2 == 0) ++n;
    return static_cast<std::size_t>(n);
}

std::vector<double> median_filter(std::span<const double> x, std::size_t window) {
    if (window % 2 == 0) throw UsageError("median window must be odd");
    const std::size_t n = x.size();
    const std::size_t half = window / 2;
    if (half >= n) throw DataError("signal shorter than median window");
    auto at = [&](long long i) {
        // Mirror about the first and last samples.
        if (i < 0) i = -i;
        if (i >= static_cast<long long>(n)) i = 2 * static_cast<long long>(n) - 2 - i;
        return x[static_cast<std::size_t>(i)];
    };
    std::vector<double> out(n);
    std::vector<double> buf(window);
    const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(half);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < window; ++k)
            buf[k] = at(static_cast<long long>(i + k) - static_cast<long long>(half));
        std::nth_element(buf.begin(), mid, buf.end());
        out[i] = *mid;
    }
    return out;
}

std::vector<double> remove_baseline(std::span<const double> x, const BaselineSpec& spec, double fs_hz) {
    std::size_t w1 = odd_window(spec.stage1_window_ms, fs_hz);
    std::size_t w2 = odd_window(spec.stage2_window_ms, fs_hz);
    if (!(spec.stage1_window_ms < spec.stage2_window_ms)) throw UsageError("baseline stage1 window must be shorter");
    if (x.size() <= w2) throw DataError("recording shorter than the baseline window");
    auto base = median_filter(median_filter(x, w1), w2);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - base[i];
    return out;
}

ZScoreResult zscore(std::span<const double> x, const std::vector<bool>& mask) {
    if (mask.size() != x.size()) throw UsageError("zscore: mask length mismatch");
    std::vector<double> v;
    v.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        if (mask[i]) v.push_back(x[i]);
    if (v.size() < 2) throw NumericError("zscore: fewer than two valid samples");
    ZScoreResult r;
    r.mean = mean(v);
    r.std = pstdev(v);
    if (!(r.std > 0.0)) throw NumericError("zero variance");
    r.values.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r.values[i] = (x[i] - r.mean) / r.std;
    return r;
}

namespace {

std::vector<double> bridge_invalid(const EcgRecording& rec) {
    std::vector<double> y = rec.samples;
    const std::size_t n = y.size();
    std::size_t i = 0;
    while (i < n) {
        if (rec.valid[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && !rec.valid[j]) ++j;
        bool has_left = i > 0;
        bool has_right = j < n;
        double left = has_left ? y[i - 1] : 0.0;
        double right = has_right ? y[j] : 0.0;
        if (!has_left) left = right;
        if (!has_right) right = left;
        for (std::size_t k = i; k < j; ++k) {
            double t = static_cast<double>(k - i + 1) / static_cast<double>(j - i + 1);
            y[k] = left + t * (right - left);
        }
        i = j;
    }
    return y;
}

}  // namespace

CleanRecording preprocess(const EcgRecording& rec, const PreprocessConfig& cfg) {
    if (rec.samples.empty()) throw DataError("preprocess: empty recording");
    if (rec.valid.size() != rec.samples.size()) throw DataError("preprocess: mask length mismatch");
    if (rec.valid_count() < 2) throw DataError("preprocess: recording has no valid samples");

    FilterSpec spec = cfg.lowpass;
    spec.sampling_rate_hz = rec.sampling_rate_hz;
    auto sos = design_butterworth(spec);

    auto bridged = bridge_invalid(rec);
    auto filtered = apply_filter(bridged, sos, cfg.mode);
    auto detrended = remove_baseline(filtered, cfg.baseline, rec.sampling_rate_hz);
    auto z = zscore(detrended, rec.valid);

    CleanRecording out;
    out.signal.subject_id = rec.subject_id;
    out.signal.sampling_rate_hz = rec.sampling_rate_hz;
    out.signal.samples = std::move(z.values);
    out.signal.valid = rec.valid;
    out.raw = rec.samples;
    out.filter = spec;
    out.mode = cfg.mode;
    out.baseline = cfg.baseline;
    out.norm_mean = z.mean;
    out.norm_std = z.std;
    return out;
}

std::pair<std::size_t, std::size_t> cycle_span(const std::vector<FiducialSet>& cycles, std::size_t i,
                                               std::size_t n_samples, double fs_hz) {
    // Fallback start when the P onset is absent: 300 ms before R.
    auto start_of = [&](const FiducialSet& c) -> std::size_t {
        if (auto p = c[Fiducial::p_onset]) return *p;
        if (auto q = c[Fiducial::qrs_onset]) {
            auto back = static_cast<std::size_t>(std::lround(0.2 * fs_hz));
            return *q > back ? *q - back : 0;
        }
        auto back = static_cast<std::size_t>(std::lround(0.3 * fs_hz));
        return c.r_peak() > back ? c.r_peak() - back : 0;
    };
    std::size_t begin = start_of(cycles[i]);
    std::size_t end;
    if (i + 1 < cycles.size() && cycles[i + 1].beat == cycles[i].beat + 1) {
        end = start_of(cycles[i + 1]);
    } else if (auto t = cycles[i][Fiducial::t_offset]) {
        end = *t + 1;
    } else {
        end = cycles[i].r_peak() + static_cast<std::size_t>(std::lround(0.6 * fs_hz));
    }
    end = std::min(std::max(end, begin + 1), n_samples);
    return {begin, end};
}

ExcisionResult find_anomalies(const CleanRecording& rec, const std::vector<FiducialSet>& cycles,
                              const AnomalySpec& spec) {
    const std::size_t n = rec.signal.samples.size();
    const double fs = rec.signal.sampling_rate_hz;
    ExcisionResult res;
    res.valid = rec.signal.valid;

    std::vector<bool> bad(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(rec.raw[i]) || !rec.signal.valid[i]) bad[i] = true;
        if (std::abs(rec.signal.samples[i]) > spec.excursion_sd) bad[i] = true;
    }
    // Runs of identical raw values.
    const auto min_run = static_cast<std::size_t>(std::ceil(spec.flat_run_ms * fs / 1000.0 - 1e-9));
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && rec.raw[j] == rec.raw[i]) ++j;
        if (j - i >= std::max<std::size_t>(min_run, 2))
            for (std::size_t k = i; k < j; ++k) bad[k] = true;
        i = j;
    }

    for (std::size_t c = 0; c < cycles.size(); ++c) {
        auto [b, e] = cycle_span(cycles, c, n, fs);
        bool hit = std::any_of(bad.begin() + static_cast<std::ptrdiff_t>(b), bad.begin() + static_cast<std::ptrdiff_t>(e),
                               [](bool v) { return v; });
        if (!hit) continue;
        res.masked_cycles.push_back(c);
        for (std::size_t k = b; k < e; ++k) res.valid[k] = false;
    }
    // Anomalous samples outside any cycle are masked on their own.
    for (std::size_t k = 0; k < n; ++k)
        if (bad[k]) res.valid[k] = false;
    res.unusable = !cycles.empty() && res.masked_cycles.size() == cycles.size();
    return res;
}

void excise_anomalies(CleanRecording& rec, const std::vector<FiducialSet>& cycles, const AnomalySpec& spec,
                      ExcisionResult* result) {
    auto res = find_anomalies(rec, cycles, spec);
    rec.signal.valid = res.valid;
    if (result) *result = std::move(res);
}

}  // namespace ecgage
