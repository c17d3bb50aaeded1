#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fome/error.hpp"
#include "fome/rng.hpp"
#include "fome/spectral.hpp"

using namespace fome;

namespace {

std::vector<Complex> naive_dft(std::span<const Complex> x) {
    const std::size_t L = x.size();
    std::vector<Complex> out(L);
    for (std::size_t k = 0; k < L; ++k) {
        std::complex<long double> acc = 0;
        for (std::size_t n = 0; n < L; ++n) {
            const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * n) % L) / L;
            acc += std::complex<long double>(x[n].real(), x[n].imag()) * std::polar(1.0L, ang);
        }
        out[k] = Complex(static_cast<double>(acc.real()), static_cast<double>(acc.imag()));
    }
    return out;
}

std::vector<double> random_real(std::size_t L, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(L);
    for (double& v : x) v = rng.normal();
    return x;
}

std::vector<double> sine(std::size_t L, double f, double rate, double amp = 1.0) {
    std::vector<double> x(L);
    for (std::size_t n = 0; n < L; ++n) x[n] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(n) / rate);
    return x;
}

}  // namespace

TEST_CASE("DFT small examples") {
    const std::vector<double> delta{1, 0, 0, 0};
    for (const auto& X : dft(delta)) CHECK(std::abs(X - Complex(1, 0)) < 1e-15);
    const std::vector<double> c(8, 2.5);
    const auto X = dft(c);
    CHECK(std::abs(X[0] - Complex(20, 0)) < 1e-12);
    for (std::size_t k = 1; k < 8; ++k) CHECK(std::abs(X[k]) < 1e-12);
    CHECK(dft(std::vector<double>{3.0})[0] == Complex(3.0, 0.0));
}

TEST_CASE("FFT matches the naive DFT across lengths") {
    for (std::size_t L : {2, 3, 5, 7, 12, 16, 31, 37, 97, 100, 128, 210, 1024, 1500, 1009}) {
        Rng rng(L);
        std::vector<Complex> x(L);
        for (auto& v : x) v = Complex(rng.normal(), rng.normal());
        const auto fast = dft(x);
        const auto slow = naive_dft(x);
        double err = 0, norm = 0;
        for (std::size_t k = 0; k < L; ++k) err = std::max(err, std::abs(fast[k] - slow[k]));
        for (const auto& v : x) norm += std::norm(v);
        CAPTURE(L);
        CHECK(err < 1e-8 * std::sqrt(norm));
    }
    CHECK(fft_plan(1009).uses_bluestein());
    CHECK_FALSE(fft_plan(1500).uses_bluestein());
}

TEST_CASE("inverse round-trip and Parseval") {
    for (std::size_t L : {2, 3, 100, 1024, 1500}) {
        const auto x = random_real(L, 100 + L);
        const auto X = dft(x);
        const auto back = idft(X);
        double err = 0, norm = 0, energy_f = 0;
        for (std::size_t n = 0; n < L; ++n) {
            err = std::max(err, std::abs(back[n] - Complex(x[n], 0)));
            norm += x[n] * x[n];
            energy_f += std::norm(X[n]);
        }
        CAPTURE(L);
        CHECK(err <= 1e-9 * std::sqrt(norm));
        CHECK(std::abs(energy_f - L * norm) <= 1e-9 * L * norm);
    }
}

TEST_CASE("PSD") {
    const double rate = 250.0;
    SUBCASE("zero patch") {
        for (double v : psd(std::vector<double>(1500, 0.0), rate)) CHECK(v == 0.0);
    }
    SUBCASE("exact-bin 25 Hz tone has one dominant bin") {
        const auto p = psd(sine(1500, 25.0, rate), rate);
        REQUIRE(p.size() == 751);
        const auto peak = std::max_element(p.begin(), p.end()) - p.begin();
        CHECK(peak == 150);
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (k != 150) CHECK(p[k] < 1e-6 * p[150]);
        }
    }
    SUBCASE("full-spectrum Parseval with 1/T scaling") {
        const auto x = random_real(1500, 9);
        const double T = 1500.0 / rate;
        double full = 0, meansq = 0;
        for (const auto& X : dft(x)) full += std::norm(X) / T;
        for (double v : x) meansq += v * v / 1500.0;
        CHECK(std::abs(full - (1500.0 / T) * meansq * 1500.0) <= 1e-9 * full);
    }
    SUBCASE("nonnegative and quadratic in amplitude") {
        const auto x = random_real(300, 4);
        std::vector<double> y(x);
        for (double& v : y) v *= 3.0;
        const auto px = psd(x, rate), py = psd(y, rate);
        for (std::size_t k = 0; k < px.size(); ++k) {
            CHECK(px[k] >= 0.0);
            CHECK(py[k] == doctest::Approx(9.0 * px[k]).epsilon(1e-12));
        }
    }
    SUBCASE("Hann taper changes the estimate") {
        const auto x = sine(1500, 10.3, rate);
        CHECK(psd(x, rate, Taper::hann) != psd(x, rate));
    }
}

TEST_CASE("band powers") {
    const auto scheme = BandScheme::eeg_default();
    REQUIRE(scheme.size() == 8);
    SUBCASE("zero patch gives zeros") {
        for (double v : patch_band_powers(std::vector<double>(1500, 0.0), 250.0, scheme)) CHECK(v == 0.0);
    }
    SUBCASE("10 Hz tone: alpha strictly greatest") {
        const auto b = patch_band_powers(sine(1500, 10.0, 250.0), 250.0, scheme);
        for (std::size_t i = 0; i < 8; ++i) {
            if (i != 2) CHECK(b[2] > b[i]);
        }
    }
    SUBCASE("25 Hz + 60 Hz: beta and gamma2 on top") {
        auto x = sine(1500, 25.0, 250.0);
        const auto y = sine(1500, 60.0, 250.0);
        for (std::size_t n = 0; n < x.size(); ++n) x[n] += y[n];
        const auto b = patch_band_powers(x, 250.0, scheme);
        std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
        std::sort(idx.begin(), idx.end(), [&](auto a, auto c) { return b[a] > b[c]; });
        CHECK(((idx[0] == 3 && idx[1] == 5) || (idx[0] == 5 && idx[1] == 3)));
    }
    SUBCASE("shared edges are half-open, the last band includes 100 Hz") {
        // 1 s patch: bins at every integer frequency.
        const auto at4 = patch_band_powers(sine(250, 4.0, 250.0), 250.0, scheme);
        CHECK(at4[0] < 1e-9);
        CHECK(at4[1] > 1.0);
        const auto at100 = patch_band_powers(sine(250, 100.0, 250.0), 250.0, scheme);
        CHECK(at100[7] > 1.0);
    }
    SUBCASE("time reversal leaves band powers unchanged") {
        auto x = random_real(1500, 21);
        const auto a = patch_band_powers(x, 250.0, scheme);
        std::reverse(x.begin(), x.end());
        const auto b = patch_band_powers(x, 250.0, scheme);
        for (std::size_t i = 0; i < 8; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
    }
    SUBCASE("log bookkeeping is lossless") {
        const auto x = random_real(1500, 22);
        const auto p = psd(x, 250.0);
        double in_band = 0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double f = static_cast<double>(k) * 250.0 / 1500.0;
            if (f >= 1.0 && f <= 100.0) in_band += p[k];
        }
        double recovered = 0;
        for (double v : patch_band_powers(x, 250.0, scheme)) recovered += std::pow(10.0, v) - 1.0;
        CHECK(std::abs(recovered - in_band) <= 1e-9 * in_band);
    }
    SUBCASE("grid tensor layout and non-negativity") {
        std::vector<double> v;
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t p = 0; p < 3; ++p) {
                const auto s = sine(1500, 5.0 + 10.0 * static_cast<double>(c * 3 + p), 250.0);
                v.insert(v.end(), s.begin(), s.end());
            }
        }
        const auto t = band_powers(PatchGrid(2, 3, 1500, 250.0, v), scheme);
        CHECK(t.values.size() == 2 * 3 * 8);
        for (double x : t.values) CHECK(x >= 0.0);
        const auto direct = patch_band_powers(std::span(v).subspan(4 * 1500, 1500), 250.0, scheme);
        for (std::size_t b = 0; b < 8; ++b) CHECK(t.at(1, 1, b) == direct[b]);
    }
    SUBCASE("bands above Nyquist are rejected") {
        CHECK_THROWS_AS(patch_band_powers(std::vector<double>(100, 0.0), 160.0, scheme), ConfigError);
    }
}
