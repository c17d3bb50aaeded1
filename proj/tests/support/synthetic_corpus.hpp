#pragma once

// Seeded synthetic patch grids shared by the unit and acceptance tests.

#include <cmath>
#include <numbers>
#include <vector>

#include "fome/patch_grid.hpp"
#include "fome/rng.hpp"
#include "fome/trainer.hpp"

namespace fome::testing {

inline constexpr double kRate = 250.0;

/// C channels of a shared two-tone signal with per-channel gain and phase
/// lag, random phases per grid, plus small white noise.
inline PatchGrid multi_tone_grid(std::size_t C, std::size_t P, std::size_t L, Rng& rng, double noise = 0.05) {
    const double f1 = 10.0, f2 = 23.0;
    const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a1 = rng.uniform(0.6, 1.2), a2 = rng.uniform(0.3, 0.8);
    std::vector<double> v(C * P * L);
    for (std::size_t c = 0; c < C; ++c) {
        const double gain = 1.0 - 0.15 * static_cast<double>(c % 4);
        const double lag = 0.3 * static_cast<double>(c);
        for (std::size_t n = 0; n < P * L; ++n) {
            const double t = static_cast<double>(n) / kRate;
            v[c * P * L + n] = gain * (a1 * std::sin(2 * std::numbers::pi * f1 * t + ph1 + lag) +
                                       a2 * std::sin(2 * std::numbers::pi * f2 * t + ph2 + lag)) +
                               noise * rng.normal();
        }
    }
    return PatchGrid(C, P, L, kRate, std::move(v));
}

inline std::vector<PatchGrid> multi_tone_corpus(std::size_t n, std::size_t C, std::size_t P, std::size_t L,
                                                std::uint64_t seed, double noise = 0.05) {
    Rng rng(seed);
    std::vector<PatchGrid> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(multi_tone_grid(C, P, L, rng, noise));
    return out;
}

/// Pure tone of `freq` Hz on every channel with random phase and amplitude,
/// plus white noise of standard deviation `noise`.
inline PatchGrid tone_grid(std::size_t C, std::size_t P, std::size_t L, double freq, Rng& rng, double noise) {
    std::vector<double> v(C * P * L);
    for (std::size_t c = 0; c < C; ++c) {
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double amp = rng.uniform(0.7, 1.3);
        for (std::size_t n = 0; n < P * L; ++n) {
            const double t = static_cast<double>(n) / kRate;
            v[c * P * L + n] = amp * std::sin(2 * std::numbers::pi * freq * t + phase) + noise * rng.normal();
        }
    }
    return PatchGrid(C, P, L, kRate, std::move(v));
}

/// Alternating-label 1 Hz (class 0) versus 30 Hz (class 1) records.
inline std::vector<LabeledGrid> two_tone_dataset(std::size_t n, std::size_t C, std::size_t P, std::size_t L,
                                                 std::uint64_t seed, double noise) {
    Rng rng(seed);
    std::vector<LabeledGrid> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % 2;
        out.push_back({tone_grid(C, P, L, label == 0 ? 1.0 : 30.0, rng, noise), label, Split::unassigned});
    }
    return out;
}

}  // namespace fome::testing
