#include "fome/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "fome/error.hpp"

namespace fome {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kMaxDirectRadix = 31;

// exp(-2*pi*i*num/den) with the argument reduced before the trig call.
Complex unit_root(std::size_t num, std::size_t den) {
    num %= den;
    const double angle = -2.0 * kPi * static_cast<double>(num) / static_cast<double>(den);
    return {std::cos(angle), std::sin(angle)};
}

std::vector<std::size_t> factorize(std::size_t n) {
    std::vector<std::size_t> factors;
    while (n % 4 == 0) {
        factors.push_back(4);
        n /= 4;
    }
    for (std::size_t p = 2; p * p <= n; ++p) {
        while (n % p == 0) {
            factors.push_back(p);
            n /= p;
        }
    }
    if (n > 1) factors.push_back(n);
    return factors;
}

std::size_t next_pow2(std::size_t n) {
    std::size_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

}  // namespace

struct FftPlan::Impl {
    std::size_t n = 0;
    std::vector<std::size_t> factors;
    std::vector<Complex> twiddles;  // exp(-2 pi i k / n), k < n

    // Bluestein state.
    bool bluestein = false;
    std::vector<Complex> chirp;         // exp(-i pi k^2 / n)
    std::vector<Complex> kernel_fft;    // FFT of conj chirp, wrapped to length m
    std::unique_ptr<FftPlan> conv_plan; // power-of-two

    void mixed_radix(const Complex* in, std::size_t stride, Complex* out, std::size_t len, std::size_t fi,
                     std::vector<Complex>& scratch) const {
        if (len == 1) {
            out[0] = in[0];
            return;
        }
        const std::size_t p = factors[fi];
        const std::size_t m = len / p;
        for (std::size_t j = 0; j < p; ++j) mixed_radix(in + j * stride, stride * p, out + j * m, m, fi + 1, scratch);

        const std::size_t step = n / len;
        if (p == 2) {
            for (std::size_t k = 0; k < m; ++k) {
                const Complex a = out[k];
                const Complex b = out[m + k] * twiddles[k * step];
                out[k] = a + b;
                out[m + k] = a - b;
            }
            return;
        }
        if (p == 4) {
            const Complex minus_i{0.0, -1.0};
            for (std::size_t k = 0; k < m; ++k) {
                const Complex a0 = out[k];
                const Complex a1 = out[m + k] * twiddles[(k * step) % n];
                const Complex a2 = out[2 * m + k] * twiddles[(2 * k * step) % n];
                const Complex a3 = out[3 * m + k] * twiddles[(3 * k * step) % n];
                const Complex s02 = a0 + a2, d02 = a0 - a2;
                const Complex s13 = a1 + a3, d13 = (a1 - a3) * minus_i;
                out[k] = s02 + s13;
                out[m + k] = d02 + d13;
                out[2 * m + k] = s02 - s13;
                out[3 * m + k] = d02 - d13;
            }
            return;
        }
        scratch.resize(2 * p);
        Complex* t = scratch.data();
        Complex* acc = scratch.data() + p;
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t j = 0; j < p; ++j) t[j] = out[j * m + k] * twiddles[(j * k * step) % n];
            for (std::size_t q = 0; q < p; ++q) {
                Complex s = t[0];
                for (std::size_t j = 1; j < p; ++j) s += t[j] * twiddles[((j * q) % p) * (n / p)];
                acc[q] = s;
            }
            for (std::size_t q = 0; q < p; ++q) out[q * m + k] = acc[q];
        }
    }
};

FftPlan::FftPlan(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
    if (n == 0) throw ShapeError("FFT length must be positive");
    impl_->n = n;
    impl_->factors = factorize(n);
    std::size_t largest = 1;
    for (auto f : impl_->factors) largest = std::max(largest, f);

    if (largest <= kMaxDirectRadix) {
        impl_->twiddles.resize(n);
        for (std::size_t k = 0; k < n; ++k) impl_->twiddles[k] = unit_root(k, n);
        return;
    }

    impl_->bluestein = true;
    const std::size_t m = next_pow2(2 * n - 1);
    impl_->chirp.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the chirp angle small and exact.
        const std::size_t k2 = (k * k) % (2 * n);
        impl_->chirp[k] = unit_root(k2, 2 * n);
    }
    impl_->conv_plan = std::make_unique<FftPlan>(m);
    std::vector<Complex> b(m, Complex{});
    b[0] = std::conj(impl_->chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
        b[k] = std::conj(impl_->chirp[k]);
        b[m - k] = b[k];
    }
    impl_->kernel_fft = impl_->conv_plan->forward(b);
}

FftPlan::~FftPlan() = default;
FftPlan::FftPlan(FftPlan&&) noexcept = default;
FftPlan& FftPlan::operator=(FftPlan&&) noexcept = default;

bool FftPlan::uses_bluestein() const noexcept { return impl_->bluestein; }

std::vector<Complex> FftPlan::forward(std::span<const Complex> x) const {
    if (x.size() != n_) throw ShapeError("FFT input length " + std::to_string(x.size()) + " != plan " + std::to_string(n_));
    if (!impl_->bluestein) {
        std::vector<Complex> out(n_);
        std::vector<Complex> scratch;
        impl_->mixed_radix(x.data(), 1, out.data(), n_, 0, scratch);
        return out;
    }
    const std::size_t m = impl_->conv_plan->size();
    std::vector<Complex> a(m, Complex{});
    for (std::size_t k = 0; k < n_; ++k) a[k] = x[k] * impl_->chirp[k];
    auto fa = impl_->conv_plan->forward(a);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= impl_->kernel_fft[k];
    const auto conv = impl_->conv_plan->inverse(fa);
    std::vector<Complex> out(n_);
    for (std::size_t k = 0; k < n_; ++k) out[k] = conv[k] * impl_->chirp[k];
    return out;
}

std::vector<Complex> FftPlan::inverse(std::span<const Complex> x) const {
    std::vector<Complex> conj_in(x.begin(), x.end());
    for (auto& v : conj_in) v = std::conj(v);
    auto out = forward(conj_in);
    const double scale = 1.0 / static_cast<double>(n_);
    for (auto& v : out) v = std::conj(v) * scale;
    return out;
}

const FftPlan& fft_plan(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

std::vector<Complex> dft(std::span<const double> x) {
    std::vector<Complex> cx(x.begin(), x.end());
    return fft_plan(x.size()).forward(cx);
}

std::vector<Complex> dft(std::span<const Complex> x) { return fft_plan(x.size()).forward(x); }

std::vector<Complex> idft(std::span<const Complex> spectrum) { return fft_plan(spectrum.size()).inverse(spectrum); }

std::vector<double> psd(std::span<const double> patch, double rate_hz, Taper taper) {
    const std::size_t L = patch.size();
    if (L < 2) throw ShapeError("PSD needs a patch of at least 2 samples");
    if (!(rate_hz > 0.0)) throw ConfigError("PSD rate must be positive");
    std::vector<Complex> x(patch.begin(), patch.end());
    if (taper == Taper::hann) {
        for (std::size_t n = 0; n < L; ++n) {
            x[n] *= 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(L)));
        }
    }
    const auto X = fft_plan(L).forward(x);
    const double duration = static_cast<double>(L) / rate_hz;
    std::vector<double> out(L / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(X[k]) / duration;
    return out;
}

BandScheme BandScheme::eeg_default() {
    return {{{"delta", 1, 4},
             {"theta", 4, 8},
             {"alpha", 8, 13},
             {"beta", 13, 30},
             {"gamma1", 30, 50},
             {"gamma2", 50, 70},
             {"gamma3", 70, 90},
             {"gamma4", 90, 100}}};
}

void BandScheme::validate() const {
    if (bands.empty()) throw ConfigError("band scheme is empty");
    for (std::size_t i = 0; i < bands.size(); ++i) {
        if (!(bands[i].lo_hz >= 0.0 && bands[i].lo_hz < bands[i].hi_hz)) {
            throw ConfigError("band '" + bands[i].name + "' must satisfy 0 <= lo < hi");
        }
        if (i > 0 && bands[i].lo_hz < bands[i - 1].hi_hz) {
            throw ConfigError("bands '" + bands[i - 1].name + "' and '" + bands[i].name + "' overlap or are unordered");
        }
    }
}

std::vector<double> patch_band_powers(std::span<const double> patch, double rate_hz, const BandScheme& scheme,
                                      Taper taper) {
    scheme.validate();
    if (scheme.bands.back().hi_hz > rate_hz / 2.0) {
        throw ConfigError("band edge " + std::to_string(scheme.bands.back().hi_hz) + " Hz exceeds Nyquist " +
                          std::to_string(rate_hz / 2.0) + " Hz");
    }
    const auto power = psd(patch, rate_hz, taper);
    const double L = static_cast<double>(patch.size());
    std::vector<double> out(scheme.size());
    for (std::size_t b = 0; b < scheme.size(); ++b) {
        const Band& band = scheme.bands[b];
        const bool last = b + 1 == scheme.size();
        double sum = 0.0;
        for (std::size_t k = 0; k < power.size(); ++k) {
            const double f = static_cast<double>(k) * rate_hz / L;
            if (f >= band.lo_hz && (f < band.hi_hz || (last && f == band.hi_hz))) sum += power[k];
        }
        out[b] = std::log10(sum + 1.0);
    }
    return out;
}

BandPowerTensor band_powers(const PatchGrid& grid, const BandScheme& scheme, Taper taper) {
    BandPowerTensor out;
    out.channels = grid.channels();
    out.patches = grid.patches();
    out.n_bands = scheme.size();
    out.scheme = scheme;
    out.values.reserve(out.channels * out.patches * out.n_bands);
    for (std::size_t c = 0; c < grid.channels(); ++c) {
        for (std::size_t p = 0; p < grid.patches(); ++p) {
            const auto bp = patch_band_powers(grid.patch(c, p), grid.rate_hz(), scheme, taper);
            out.values.insert(out.values.end(), bp.begin(), bp.end());
        }
    }
    return out;
}

}  // namespace fome
