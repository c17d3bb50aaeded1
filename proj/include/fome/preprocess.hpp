#pragma once

#include <array>
#include <span>
#include <vector>

#include "fome/patch_grid.hpp"
#include "fome/recording.hpp"

namespace fome {

struct PreprocessConfig {
    double notch_hz = 50.0;  // 50 or 60
    double notch_q = 35.0;
    double band_lo_hz = 0.5;
    double band_hi_hz = 100.5;
    double target_rate_hz = 250.0;
    std::size_t window_len_samples = 1500;
    std::size_t patch_len = 0;  // 0 => one patch per window
    double ema_alpha = 0.05;
    double eps = 1e-8;
    unsigned threads = 1;

    std::size_t effective_patch_len() const { return patch_len == 0 ? window_len_samples : patch_len; }
    void validate() const;
};

/// Per-channel running statistics of the exponential moving standardizer.
struct StandardizerState {
    std::vector<double> ema;
    std::vector<double> esd;
};

/// Direct-form-I second-order section, normalized so a0 == 1.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

    static Biquad notch(double f0, double q, double fs);
    static Biquad lowpass(double fc, double q, double fs);
    static Biquad highpass(double fc, double q, double fs);

    /// Complex magnitude response at frequency f.
    double magnitude(double f, double fs) const;
};

/// Runs cascaded sections causally over `x` in place, zero initial state.
void apply_cascade(std::span<const Biquad> sections, std::span<double> x);

/// Butterworth sections (order 4 => two biquads).
std::vector<Biquad> butterworth_highpass(double fc, double fs, int order = 4);
std::vector<Biquad> butterworth_lowpass(double fc, double fs, int order = 4);

Recording notch_filter(const Recording& r, double f0, double q = 35.0);
Recording bandpass_filter(const Recording& r, double lo, double hi);

/// Rational polyphase resampler, Kaiser-windowed sinc prototype
/// (beta 8.6, 64 taps per phase). T' = round(T * target / original).
Recording resample(const Recording& r, double target_hz);

/// Reduced up/down factors with |up/down - target/orig| <= 1e-9 * ratio.
std::pair<std::size_t, std::size_t> rational_ratio(double original_hz, double target_hz);

Recording detrend(const Recording& r);

std::pair<Recording, StandardizerState> standardize_ema(const Recording& r, const PreprocessConfig& cfg);

PatchGrid window_and_patch(const Recording& r, const PreprocessConfig& cfg, std::size_t patch_len);

/// notch -> bandpass -> resample -> detrend -> window -> standardize per
/// window -> patch.
PatchGrid preprocess_pipeline(const Recording& r, const PreprocessConfig& cfg);

}  // namespace fome
