#pragma once

#include <array>
#include <complex>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fome/patch_grid.hpp"

namespace fome {

using Complex = std::complex<double>;

/// Precomputed FFT for one length. Lengths whose prime factors are all
/// small use recursive mixed-radix Cooley-Tukey; anything with a large
/// prime factor goes through Bluestein's chirp-z on a power-of-two grid.
class FftPlan {
public:
    explicit FftPlan(std::size_t n);
    ~FftPlan();
    FftPlan(FftPlan&&) noexcept;
    FftPlan& operator=(FftPlan&&) noexcept;

    std::size_t size() const noexcept { return n_; }
    bool uses_bluestein() const noexcept;

    /// X_k = sum_n x_n exp(-2*pi*i*k*n/N)
    std::vector<Complex> forward(std::span<const Complex> x) const;
    /// x_n = (1/N) sum_k X_k exp(+2*pi*i*k*n/N)
    std::vector<Complex> inverse(std::span<const Complex> x) const;

private:
    struct Impl;
    std::size_t n_;
    std::unique_ptr<Impl> impl_;
};

/// Cached plan for length n (thread-safe).
const FftPlan& fft_plan(std::size_t n);

std::vector<Complex> dft(std::span<const double> x);
std::vector<Complex> dft(std::span<const Complex> x);
std::vector<Complex> idft(std::span<const Complex> spectrum);

enum class Taper { none, hann };

/// One-sided PSD, bins 0..floor(L/2): P(k) = |X_k|^2 / T with T = L / rate
/// the patch duration in seconds. No doubling of the positive bins.
std::vector<double> psd(std::span<const double> patch, double rate_hz, Taper taper = Taper::none);

struct Band {
    std::string name;
    double lo_hz;
    double hi_hz;
};

/// Ordered frequency bands. Each band owns bins with f in [lo, hi); the last
/// band also owns f == hi.
struct BandScheme {
    std::vector<Band> bands;

    /// delta, theta, alpha, beta, gamma1..gamma4 covering 1-100 Hz.
    static BandScheme eeg_default();
    std::size_t size() const noexcept { return bands.size(); }
    void validate() const;
};

/// C x P x B log10(band PSD sum + 1), row-major.
struct BandPowerTensor {
    std::size_t channels = 0;
    std::size_t patches = 0;
    std::size_t n_bands = 0;
    std::vector<double> values;
    BandScheme scheme;

    double at(std::size_t c, std::size_t p, std::size_t b) const {
        return values[(c * patches + p) * n_bands + b];
    }
};

/// Band powers of a single patch (length B).
std::vector<double> patch_band_powers(std::span<const double> patch, double rate_hz, const BandScheme& scheme,
                                      Taper taper = Taper::none);

BandPowerTensor band_powers(const PatchGrid& grid, const BandScheme& scheme = BandScheme::eeg_default(),
                            Taper taper = Taper::none);

}  // namespace fome
