#include "ecgage/delineate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace ecgage {

namespace {

constexpr const char* kFiducialNames[kFiducialCount] = {
    "p_onset", "p_peak", "p_offset", "qrs_onset", "r_peak", "qrs_offset", "t_onset", "t_peak", "t_offset",
};

long long to_samples(double ms, double fs) { return std::llround(ms * fs / 1000.0); }

}  // namespace

const char* fiducial_name(Fiducial f) { return kFiducialNames[static_cast<int>(f)]; }

std::optional<Fiducial> fiducial_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kFiducialCount; ++i)
        if (name == kFiducialNames[i]) return static_cast<Fiducial>(i);
    return std::nullopt;
}

bool is_ordered(const FiducialSet& f) {
    std::optional<std::size_t> prev;
    for (const auto& v : f.at) {
        if (!v) continue;
        if (prev && *v <= *prev) return false;
        prev = v;
    }
    return f.at[static_cast<int>(Fiducial::r_peak)].has_value();
}

std::vector<std::vector<double>> wavelet_details(std::span<const double> x, int levels) {
    const auto n = static_cast<long long>(x.size());
    std::vector<std::vector<double>> details;
    std::vector<double> approx(x.begin(), x.end());
    auto at = [&](const std::vector<double>& a, long long i) {
        if (n == 1) return a[0];
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return a[static_cast<std::size_t>(i)];
    };
    for (int k = 1; k <= levels; ++k) {
        const long long s = 1LL << (k - 1);
        std::vector<double> w(x.size()), next(x.size());
        for (long long i = 0; i < n; ++i) {
            w[static_cast<std::size_t>(i)] = 2.0 * (at(approx, i + s) - at(approx, i));
            next[static_cast<std::size_t>(i)] =
                (at(approx, i - s) + 3.0 * at(approx, i) + 3.0 * at(approx, i + s) + at(approx, i + 2 * s)) / 8.0;
        }
        details.push_back(std::move(w));
        approx = std::move(next);
    }
    return details;
}

std::vector<std::size_t> detect_r_peaks(std::span<const double> clean, double fs, const RPeakConfig& cfg) {
    const std::size_t n = clean.size();
    if (n < 3) throw NumericError("fewer than 2 peaks found");

    FilterSpec hp{FilterKind::highpass, cfg.band_order, cfg.band_low_hz, fs};
    FilterSpec lp{FilterKind::lowpass, cfg.band_order, std::min(cfg.band_high_hz, 0.45 * fs), fs};
    auto band = apply_filter(apply_filter(clean, design_butterworth(hp), FilterMode::zero_phase),
                             design_butterworth(lp), FilterMode::zero_phase);

    std::vector<double> sq(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double d = 0.5 * (band[i + 1] - band[i - 1]);
        sq[i] = d * d;
    }
    const std::size_t win = odd_window(cfg.integration_ms, fs);
    const std::size_t half = win / 2;
    std::vector<double> energy(n, 0.0);
    {
        std::vector<double> prefix(n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + sq[i];
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t lo = i >= half ? i - half : 0;
            std::size_t hi = std::min(n, i + half + 1);
            energy[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(win);
        }
    }

    // Seed the energy history with per-2-second block maxima.
    std::deque<double> history;
    const auto block = static_cast<std::size_t>(std::max<long long>(1, to_samples(2000.0, fs)));
    for (std::size_t b = 0; b < n && history.size() < cfg.energy_history; b += block) {
        double m = *std::max_element(energy.begin() + static_cast<std::ptrdiff_t>(b),
                                     energy.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + block)));
        history.push_back(m);
    }

    const auto refractory = static_cast<std::size_t>(to_samples(cfg.refractory_ms, fs));
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(energy[i] > energy[i - 1] && energy[i] >= energy[i + 1])) continue;
        double thr = cfg.threshold_fraction * median(std::vector<double>(history.begin(), history.end()));
        if (!(energy[i] > thr) || !(energy[i] > 0.0)) continue;
        if (!cand.empty() && i - cand.back() < refractory) {
            if (energy[i] > energy[cand.back()]) {
                cand.back() = i;
                history.back() = energy[i];
            }
            continue;
        }
        cand.push_back(i);
        history.push_back(energy[i]);
        while (history.size() > cfg.energy_history) history.pop_front();
    }
    if (cand.size() < 2) throw NumericError("fewer than 2 peaks found");

    // Polarity by majority vote, then snap to the extremum of the clean signal.
    const auto snap = static_cast<std::size_t>(to_samples(cfg.snap_ms, fs));
    auto window_of = [&](std::size_t c) {
        std::size_t lo = c >= snap ? c - snap : 0;
        std::size_t hi = std::min(n - 1, c + snap);
        return std::pair{lo, hi};
    };
    int votes = 0;
    for (auto c : cand) {
        auto [lo, hi] = window_of(c);
        auto [mn, mx] = std::minmax_element(clean.begin() + static_cast<std::ptrdiff_t>(lo),
                                            clean.begin() + static_cast<std::ptrdiff_t>(hi + 1));
        votes += (*mx >= -*mn) ? 1 : -1;
    }
    const double polarity = votes >= 0 ? 1.0 : -1.0;

    std::vector<std::size_t> peaks;
    for (auto c : cand) {
        auto [lo, hi] = window_of(c);
        std::size_t best = lo;
        for (std::size_t i = lo; i <= hi; ++i)
            if (polarity * clean[i] > polarity * clean[best]) best = i;
        if (!peaks.empty() && best - peaks.back() < refractory) {
            if (polarity * clean[best] > polarity * clean[peaks.back()]) peaks.back() = best;
            continue;
        }
        if (!peaks.empty() && best <= peaks.back()) continue;
        peaks.push_back(best);
    }
    if (peaks.size() < 2) throw NumericError("fewer than 2 peaks found");
    return peaks;
}

std::vector<std::size_t> detect_r_peaks(const CleanRecording& clean, const RPeakConfig& cfg) {
    return detect_r_peaks(clean.signal.samples, clean.signal.sampling_rate_hz, cfg);
}

namespace {

struct WaveEdges {
    std::optional<std::size_t> onset, peak, offset;
};

/// Peak of |x - base| inside [lo, hi] and the points where the deflection
/// falls back within frac of its amplitude; search for edges stays inside
/// [left_limit, right_limit].
WaveEdges find_wave(std::span<const double> x, long long lo, long long hi, double base, double frac, double min_amp,
                    long long left_limit, long long right_limit) {
    WaveEdges w;
    if (hi < lo) return w;
    long long pk = lo;
    for (long long i = lo; i <= hi; ++i)
        if (std::abs(x[i] - base) > std::abs(x[pk] - base)) pk = i;
    double amp = std::abs(x[pk] - base);
    if (!(amp >= min_amp) || amp == 0.0) return w;
    // Reject window-edge maxima: the deflection must peak inside the window.
    if ((pk == lo && pk > left_limit && std::abs(x[pk - 1] - base) > amp) ||
        (pk == hi && pk < right_limit && std::abs(x[pk + 1] - base) > amp))
        return w;
    const double sign = x[pk] >= base ? 1.0 : -1.0;
    const double level = frac * amp;
    w.peak = static_cast<std::size_t>(pk);
    long long m = pk;
    while (m > left_limit && sign * (x[m] - base) >= level) --m;
    if (sign * (x[m] - base) < level) w.onset = static_cast<std::size_t>(m);
    m = pk;
    while (m < right_limit && sign * (x[m] - base) >= level) ++m;
    if (sign * (x[m] - base) < level) w.offset = static_cast<std::size_t>(m);
    return w;
}

}  // namespace

std::vector<FiducialSet> delineate_cycles(std::span<const double> x, double fs,
                                          const std::vector<std::size_t>& r_peaks, const DelineationConfig& cfg) {
    if (r_peaks.size() < 2) throw NumericError("delineation needs at least 2 R peaks");
    const auto n = static_cast<long long>(x.size());
    auto ms = [&](double v) { return to_samples(v, fs); };

    int level = cfg.qrs_wavelet_level;
    if (level <= 0) level = static_cast<int>(std::clamp(std::lround(std::log2(0.016 * fs)), 1L, 4L));
    const auto details = wavelet_details(x, level);
    const auto& w = details.back();
    const double centre = (std::pow(2.0, level) - 1.0) / 2.0;
    const auto c_lo = static_cast<long long>(std::floor(centre));
    const auto c_hi = static_cast<long long>(std::ceil(centre));

    const double min_amp = cfg.min_wave_amplitude * pstdev(x);

    std::vector<FiducialSet> out;
    for (std::size_t b = 0; b < r_peaks.size(); ++b) {
        const auto r = static_cast<long long>(r_peaks[b]);
        const long long rr = b + 1 < r_peaks.size() ? static_cast<long long>(r_peaks[b + 1]) - r
                                                    : r - static_cast<long long>(r_peaks[b - 1]);
        FiducialSet f;
        f.beat = b;
        f[Fiducial::r_peak] = static_cast<std::size_t>(r);

        const long long p_lo = r - ms(cfg.p_start_before_r_ms);
        if (p_lo - ms(cfg.edge_search_ms) < 0) continue;

        // QRS boundaries from the wavelet slope.
        const long long search = ms(cfg.qrs_search_ms);
        const long long reach = ms(cfg.qrs_secondary_ms);
        const long long lo = std::max(0LL, r - search - c_lo);
        const long long hi = std::min(n - 1, r + search - c_lo);
        double wmax = 0.0;
        for (long long i = lo; i <= hi; ++i) wmax = std::max(wmax, std::abs(w[i]));
        if (wmax > 0.0) {
            const double thr = cfg.qrs_slope_fraction * wmax;
            auto arg_abs_max = [&](long long a, long long z) {
                long long best = a;
                for (long long i = a; i <= z; ++i)
                    if (std::abs(w[i]) > std::abs(w[best])) best = i;
                return best;
            };
            // Onset: steepest pre-R slope, then any opposite-signed Q lobe.
            long long first = arg_abs_max(lo, std::max(lo, r - 1 - c_lo));
            {
                double sgn = w[first] >= 0 ? 1.0 : -1.0;
                long long opp = first;
                for (long long i = first - 1; i >= std::max(0LL, first - reach); --i)
                    if (-sgn * w[i] > -sgn * w[opp]) opp = i;
                if (opp != first && -sgn * w[opp] >= thr) first = opp;
                long long m = first;
                const long long limit = std::max(0LL, first - reach);
                while (m > limit && std::abs(w[m]) >= thr) --m;
                if (std::abs(w[m]) < thr) f[Fiducial::qrs_onset] = static_cast<std::size_t>(m + c_hi);
            }
            long long last = arg_abs_max(std::min(hi, r - c_lo), hi);
            {
                double sgn = w[last] >= 0 ? 1.0 : -1.0;
                long long opp = last;
                for (long long i = last + 1; i <= std::min(n - 1, last + reach); ++i)
                    if (-sgn * w[i] > -sgn * w[opp]) opp = i;
                if (opp != last && -sgn * w[opp] >= thr) last = opp;
                long long m = last;
                const long long limit = std::min(n - 1, last + reach);
                while (m < limit && std::abs(w[m]) >= thr) ++m;
                if (std::abs(w[m]) < thr) f[Fiducial::qrs_offset] = static_cast<std::size_t>(m + c_lo);
            }
        }
        const long long q_on = f[Fiducial::qrs_onset] ? static_cast<long long>(*f[Fiducial::qrs_onset]) : r - ms(60);
        const long long q_off = f[Fiducial::qrs_offset] ? static_cast<long long>(*f[Fiducial::qrs_offset]) : r + ms(60);

        const long long t_lo = q_off + ms(cfg.t_start_after_qrs_ms);
        const long long t_hi = q_off + std::llround(cfg.t_end_rr_fraction * static_cast<double>(rr));
        if (t_hi + ms(cfg.edge_search_ms) >= n) continue;

        // Local isoelectric level from the PR neighbourhood.
        const long long base_lo = std::max(0LL, q_on - ms(cfg.baseline_window_ms));
        std::vector<double> pr(x.begin() + base_lo, x.begin() + std::max(base_lo + 1, q_on));
        const double base = median(pr);

        auto t = find_wave(x, t_lo, t_hi, base, cfg.boundary_fraction, min_amp, q_off + 1,
                           std::min(n - 1, t_hi + ms(cfg.edge_search_ms)));
        if (t.peak) {
            f[Fiducial::t_onset] = t.onset;
            f[Fiducial::t_peak] = t.peak;
            f[Fiducial::t_offset] = t.offset;
        }

        const long long p_hi = q_on - ms(cfg.p_end_before_qrs_ms);
        auto p = find_wave(x, p_lo, p_hi, base, cfg.boundary_fraction, min_amp, p_lo - ms(cfg.edge_search_ms),
                           q_on - 1);
        if (p.peak) {
            f[Fiducial::p_onset] = p.onset;
            f[Fiducial::p_peak] = p.peak;
            f[Fiducial::p_offset] = p.offset;
        }

        // A wave that breaks the ordering is reported absent.
        if (!is_ordered(f)) {
            for (auto g : {Fiducial::t_onset, Fiducial::t_peak, Fiducial::t_offset}) f[g].reset();
            if (!is_ordered(f))
                for (auto g : {Fiducial::p_onset, Fiducial::p_peak, Fiducial::p_offset}) f[g].reset();
            if (!is_ordered(f)) {
                f[Fiducial::qrs_onset].reset();
                f[Fiducial::qrs_offset].reset();
            }
        }
        out.push_back(f);
    }
    return out;
}

std::vector<FiducialSet> delineate_cycles(const CleanRecording& clean, const std::vector<std::size_t>& r_peaks,
                                          const DelineationConfig& cfg) {
    return delineate_cycles(clean.signal.samples, clean.signal.sampling_rate_hz, r_peaks, cfg);
}

std::string format_fiducials(const std::vector<FiducialSet>& cycles) {
    std::ostringstream os;
    os << "cycle_index,fiducial_name,sample_index\n";
    for (const auto& c : cycles)
        for (std::size_t k = 0; k < kFiducialCount; ++k)
            if (c.at[k]) os << c.beat << ',' << kFiducialNames[k] << ',' << *c.at[k] << '\n';
    return os.str();
}

std::vector<FiducialSet> parse_fiducials(const std::string& text) {
    std::vector<FiducialSet> out;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line_no == 1) continue;
        std::istringstream ls(line);
        std::string beat_s, name, idx_s;
        if (!std::getline(ls, beat_s, ',') || !std::getline(ls, name, ',') || !std::getline(ls, idx_s))
            throw DataError("fiducials: malformed row at line " + std::to_string(line_no));
        auto f = fiducial_from_name(name);
        if (!f) throw DataError("fiducials: unknown fiducial '" + name + "' at line " + std::to_string(line_no));
        std::size_t beat = 0, idx = 0;
        try {
            beat = std::stoul(beat_s);
            idx = std::stoul(idx_s);
        } catch (const std::exception&) {
            throw DataError("fiducials: bad number at line " + std::to_string(line_no));
        }
        if (out.empty() || out.back().beat != beat) {
            FiducialSet fs;
            fs.beat = beat;
            out.push_back(fs);
        }
        out.back()[*f] = idx;
    }
    return out;
}

}  // namespace ecgage
