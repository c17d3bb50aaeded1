#include "fome/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <string>
#include <thread>

#include "fome/error.hpp"

namespace fome {

namespace {

constexpr double kPi = std::numbers::pi;

Recording map_channels(const Recording& r, const std::vector<Biquad>& sections) {
    std::vector<double> out = r.data();
    for (std::size_t c = 0; c < r.channels(); ++c) {
        apply_cascade(sections, std::span<double>(out.data() + c * r.samples(), r.samples()));
    }
    return r.with_data(r.samples(), r.sample_rate_hz(), std::move(out));
}

// Runs fn(c) for every channel on up to `threads` workers. Each channel is
// processed by exactly one worker, so results do not depend on the count.
template <typename Fn>
void for_each_channel(std::size_t channels, unsigned threads, Fn&& fn) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, channels);
    if (workers == 1) {
        for (std::size_t c = 0; c < channels; ++c) fn(c);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t c = w; c < channels; c += workers) fn(c);
        });
    }
}

// Continued-fraction approximation of x with bounded denominator.
std::pair<std::size_t, std::size_t> approximate_ratio(double x, double rel_tol, std::size_t max_den) {
    long double h0 = 0, h1 = 1, k0 = 1, k1 = 0;
    long double v = x;
    for (int iter = 0; iter < 64; ++iter) {
        const long double a = std::floor(v);
        const long double h2 = a * h1 + h0;
        const long double k2 = a * k1 + k0;
        if (k2 > static_cast<long double>(max_den)) break;
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        if (std::abs(static_cast<double>(h1 / k1) - x) <= rel_tol * x) break;
        const long double frac = v - a;
        if (frac == 0) break;
        v = 1 / frac;
    }
    return {static_cast<std::size_t>(h1), static_cast<std::size_t>(k1)};
}

std::vector<double> kaiser_lowpass(std::size_t taps, double cutoff_cycles, double beta, double gain) {
    std::vector<double> h(taps);
    const double center = static_cast<double>(taps - 1) / 2.0;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    for (std::size_t k = 0; k < taps; ++k) {
        const double m = static_cast<double>(k) - center;
        const double arg = 2.0 * cutoff_cycles * m;
        const double sinc = m == 0.0 ? 1.0 : std::sin(kPi * arg) / (kPi * arg);
        const double r = taps > 1 ? 2.0 * static_cast<double>(k) / static_cast<double>(taps - 1) - 1.0 : 0.0;
        const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
        h[k] = 2.0 * cutoff_cycles * sinc * window;
    }
    const double sum = std::accumulate(h.begin(), h.end(), 0.0);
    for (double& v : h) v *= gain / sum;
    return h;
}

bool same_rate(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(a, b); }

}  // namespace

void PreprocessConfig::validate() const {
    if (notch_hz != 50.0 && notch_hz != 60.0) throw ConfigError("notch must be 50 or 60 Hz");
    if (!(notch_q > 0.0)) throw ConfigError("notch Q must be positive");
    if (!(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz)) throw ConfigError("band must satisfy 0 < lo < hi");
    if (!(target_rate_hz > 0.0)) throw ConfigError("target rate must be positive");
    if (window_len_samples < 2) throw ConfigError("window must hold at least 2 samples");
    const std::size_t L = effective_patch_len();
    if (L == 0 || window_len_samples % L != 0) {
        throw ConfigError("patch length " + std::to_string(L) + " must divide window length " +
                          std::to_string(window_len_samples));
    }
    if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must lie in (0, 1]");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

Biquad Biquad::notch(double f0, double q, double fs) {
    const double w0 = 2.0 * kPi * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double cw = std::cos(w0);
    return {1.0 / a0, -2.0 * cw / a0, 1.0 / a0, -2.0 * cw / a0, (1.0 - alpha) / a0};
}

Biquad Biquad::lowpass(double fc, double q, double fs) {
    const double w0 = 2.0 * kPi * fc / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0, -2.0 * cw / a0, (1.0 - alpha) / a0};
}

Biquad Biquad::highpass(double fc, double q, double fs) {
    const double w0 = 2.0 * kPi * fc / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0, -2.0 * cw / a0, (1.0 - alpha) / a0};
}

double Biquad::magnitude(double f, double fs) const {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * f / fs);
    const std::complex<double> z2 = z1 * z1;
    return std::abs((b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2));
}

void apply_cascade(std::span<const Biquad> sections, std::span<double> x) {
    for (const Biquad& s : sections) {
        double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
        for (double& v : x) {
            const double y = s.b0 * v + s.b1 * x1 + s.b2 * x2 - s.a1 * y1 - s.a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            v = y;
        }
    }
}

namespace {
std::vector<double> butterworth_qs(int order) {
    if (order < 2 || order % 2 != 0) throw ConfigError("Butterworth order must be even and >= 2");
    std::vector<double> qs;
    for (int k = 1; k <= order / 2; ++k) {
        qs.push_back(1.0 / (2.0 * std::sin((2.0 * k - 1.0) * kPi / (2.0 * order))));
    }
    return qs;
}
}  // namespace

std::vector<Biquad> butterworth_highpass(double fc, double fs, int order) {
    std::vector<Biquad> out;
    for (double q : butterworth_qs(order)) out.push_back(Biquad::highpass(fc, q, fs));
    return out;
}

std::vector<Biquad> butterworth_lowpass(double fc, double fs, int order) {
    std::vector<Biquad> out;
    for (double q : butterworth_qs(order)) out.push_back(Biquad::lowpass(fc, q, fs));
    return out;
}

Recording notch_filter(const Recording& r, double f0, double q) {
    const double nyquist = r.sample_rate_hz() / 2.0;
    if (!(f0 > 0.0 && f0 < nyquist)) {
        throw ConfigError("notch frequency " + std::to_string(f0) + " Hz must lie in (0, Nyquist=" +
                          std::to_string(nyquist) + ")");
    }
    if (!(q > 0.0)) throw ConfigError("notch Q must be positive");
    return map_channels(r, {Biquad::notch(f0, q, r.sample_rate_hz())});
}

Recording bandpass_filter(const Recording& r, double lo, double hi) {
    const double fs = r.sample_rate_hz();
    if (!(lo > 0.0 && lo < hi && hi < fs / 2.0)) {
        throw ConfigError("band (" + std::to_string(lo) + ", " + std::to_string(hi) +
                          ") must satisfy 0 < lo < hi < Nyquist=" + std::to_string(fs / 2.0));
    }
    auto sections = butterworth_highpass(lo, fs);
    const auto lp = butterworth_lowpass(hi, fs);
    sections.insert(sections.end(), lp.begin(), lp.end());
    return map_channels(r, sections);
}

std::pair<std::size_t, std::size_t> rational_ratio(double original_hz, double target_hz) {
    if (!(original_hz > 0.0 && target_hz > 0.0)) throw ConfigError("rates must be positive");
    const double ratio = target_hz / original_hz;
    auto [up, down] = approximate_ratio(ratio, 1e-9, 1u << 16);
    if (up == 0 || down == 0 ||
        std::abs(static_cast<double>(up) / static_cast<double>(down) - ratio) > 1e-9 * ratio) {
        throw ConfigError("no rational resampling ratio within 1e-9 for " + std::to_string(original_hz) + " -> " +
                          std::to_string(target_hz) + " Hz");
    }
    const std::size_t g = std::gcd(up, down);
    return {up / g, down / g};
}

Recording resample(const Recording& r, double target_hz) {
    const double fs = r.sample_rate_hz();
    if (same_rate(fs, target_hz)) return r;
    const auto [up, down] = rational_ratio(fs, target_hz);

    constexpr double kBeta = 8.6;
    constexpr std::size_t kTapsPerPhase = 64;
    const std::size_t taps = kTapsPerPhase * std::max(up, down) + 1;
    // Prototype runs at fs*up; cut off at the lower of the two Nyquist rates.
    const double cutoff_cycles = 0.5 / static_cast<double>(std::max(up, down));
    const std::vector<double> h = kaiser_lowpass(taps, cutoff_cycles, kBeta, static_cast<double>(up));

    const std::size_t T = r.samples();
    const auto T_out = static_cast<std::size_t>(std::llround(static_cast<double>(T) * target_hz / fs));
    if (T_out == 0) throw EmptyError("resampled recording would be empty");
    const auto center = static_cast<long long>((taps - 1) / 2);
    const auto U = static_cast<long long>(up);
    const auto Dn = static_cast<long long>(down);
    const auto N = static_cast<long long>(taps);

    std::vector<double> out(r.channels() * T_out);
    for (std::size_t c = 0; c < r.channels(); ++c) {
        const auto x = r.channel(c);
        for (std::size_t m = 0; m < T_out; ++m) {
            // y[m] = sum_n x[n] h[m*down + center - n*up]
            const long long base = static_cast<long long>(m) * Dn + center;
            long long n_lo = base - (N - 1);
            n_lo = n_lo <= 0 ? 0 : (n_lo + U - 1) / U;
            long long n_hi = std::min<long long>(base / U, static_cast<long long>(T) - 1);
            double acc = 0.0;
            for (long long n = n_lo; n <= n_hi; ++n) acc += x[static_cast<std::size_t>(n)] * h[base - n * U];
            out[c * T_out + m] = acc;
        }
    }
    return r.with_data(T_out, target_hz, std::move(out));
}

Recording detrend(const Recording& r) {
    const std::size_t T = r.samples();
    std::vector<double> out(r.data().size());
    const double t_mean = static_cast<double>(T - 1) / 2.0;
    double stt = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double dt = static_cast<double>(t) - t_mean;
        stt += dt * dt;
    }
    for (std::size_t c = 0; c < r.channels(); ++c) {
        const auto x = r.channel(c);
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(T);
        double sxy = 0.0;
        for (std::size_t t = 0; t < T; ++t) sxy += (static_cast<double>(t) - t_mean) * (x[t] - mean);
        const double slope = stt > 0.0 ? sxy / stt : 0.0;
        double* y = out.data() + c * T;
        for (std::size_t t = 0; t < T; ++t) y[t] = x[t] - mean - slope * (static_cast<double>(t) - t_mean);
        // Second pass removes the residual mean left by rounding.
        double resid = 0.0;
        for (std::size_t t = 0; t < T; ++t) resid += y[t];
        resid /= static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) y[t] -= resid;
    }
    return r.with_data(T, r.sample_rate_hz(), std::move(out));
}

std::pair<Recording, StandardizerState> standardize_ema(const Recording& r, const PreprocessConfig& cfg) {
    const double alpha = cfg.ema_alpha;
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ema_alpha must lie in (0, 1]");
    const std::size_t T = r.samples();
    StandardizerState state{std::vector<double>(r.channels()), std::vector<double>(r.channels())};
    std::vector<double> out(r.data().size());
    for (std::size_t c = 0; c < r.channels(); ++c) {
        const auto x = r.channel(c);
        double* y = out.data() + c * T;
        double ema = x[0];
        double esd = 0.0;
        y[0] = (x[0] - ema) / (esd + cfg.eps);
        for (std::size_t t = 1; t < T; ++t) {
            // Skipping the update when x == ema keeps constant runs exactly at their value.
            if (x[t] != ema) ema = alpha * x[t] + (1.0 - alpha) * ema;
            const double dev = x[t] - ema;
            esd = std::sqrt(alpha * dev * dev + (1.0 - alpha) * esd * esd);
            y[t] = dev / (esd + cfg.eps);
        }
        state.ema[c] = ema;
        state.esd[c] = esd;
    }
    return {r.with_data(T, r.sample_rate_hz(), std::move(out)), std::move(state)};
}

PatchGrid window_and_patch(const Recording& r, const PreprocessConfig& cfg, std::size_t patch_len) {
    if (!same_rate(r.sample_rate_hz(), cfg.target_rate_hz)) {
        throw ConfigError("recording must be at the target rate before patching");
    }
    if (patch_len == 0) throw ConfigError("patch length must be positive");
    if (patch_len != cfg.window_len_samples && cfg.window_len_samples % patch_len != 0) {
        throw ConfigError("patch length must divide the window length");
    }
    const std::size_t T = r.samples();
    if (T < patch_len) {
        throw EmptyError("recording has " + std::to_string(T) + " samples, fewer than one patch of " +
                         std::to_string(patch_len));
    }
    const std::size_t P = T / patch_len;
    std::vector<double> values;
    values.reserve(r.channels() * P * patch_len);
    for (std::size_t c = 0; c < r.channels(); ++c) {
        const auto x = r.channel(c);
        values.insert(values.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(P * patch_len));
    }
    return PatchGrid(r.channels(), P, patch_len, r.sample_rate_hz(), std::move(values));
}

PatchGrid preprocess_pipeline(const Recording& r, const PreprocessConfig& cfg) {
    cfg.validate();
    const double fs = r.sample_rate_hz();
    const std::size_t W = cfg.window_len_samples;
    const std::size_t L = cfg.effective_patch_len();

    // Output length is known up front so channels can be filled independently.
    const double ratio = cfg.target_rate_hz / fs;
    const auto T_out = same_rate(fs, cfg.target_rate_hz)
                           ? r.samples()
                           : static_cast<std::size_t>(std::llround(static_cast<double>(r.samples()) * ratio));
    const std::size_t windows = T_out / W;
    if (windows == 0) {
        throw EmptyError("recording yields " + std::to_string(T_out) + " samples at " +
                         std::to_string(cfg.target_rate_hz) + " Hz, fewer than one window of " + std::to_string(W));
    }
    if (!(cfg.band_lo_hz < fs / 2.0)) throw ConfigError("band low edge must be below Nyquist");
    const std::size_t per_window = W / L;
    const std::size_t P = windows * per_window;
    std::vector<double> values(r.channels() * P * L);

    for_each_channel(r.channels(), cfg.threads, [&](std::size_t c) {
        const auto src = r.channel(c);
        Recording x(1, r.samples(), fs, std::vector<double>(src.begin(), src.end()));
        // A notch at or above Nyquist has nothing to remove; a low-pass edge
        // at or above Nyquist is vacuous (the resampler band-limits anyway).
        if (cfg.notch_hz < fs / 2.0) x = notch_filter(x, cfg.notch_hz, cfg.notch_q);
        auto sections = butterworth_highpass(cfg.band_lo_hz, fs);
        if (cfg.band_hi_hz < fs / 2.0) {
            const auto lp = butterworth_lowpass(cfg.band_hi_hz, fs);
            sections.insert(sections.end(), lp.begin(), lp.end());
        }
        std::vector<double> filtered = x.data();
        apply_cascade(sections, filtered);
        x = x.with_data(x.samples(), fs, std::move(filtered));
        x = resample(x, cfg.target_rate_hz);
        x = detrend(x);
        for (std::size_t w = 0; w < windows; ++w) {
            const auto seg = x.channel(0).subspan(w * W, W);
            Recording window(1, W, cfg.target_rate_hz, std::vector<double>(seg.begin(), seg.end()));
            const auto [standardized, state] = standardize_ema(window, cfg);
            std::copy(standardized.data().begin(), standardized.data().end(),
                      values.begin() + static_cast<std::ptrdiff_t>((c * P + w * per_window) * L));
        }
    });
    return PatchGrid(r.channels(), P, L, cfg.target_rate_hz, std::move(values));
}

}  // namespace fome
