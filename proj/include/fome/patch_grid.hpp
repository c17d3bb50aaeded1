#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace fome {

/// C x P x L block of non-overlapping patches, row-major (channel, patch, sample).
class PatchGrid {
public:
    PatchGrid() = default;
    PatchGrid(std::size_t channels, std::size_t patches, std::size_t patch_len, double rate_hz,
              std::vector<double> values);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t patches() const noexcept { return patches_; }
    std::size_t patch_len() const noexcept { return patch_len_; }
    double rate_hz() const noexcept { return rate_; }
    const std::vector<double>& values() const noexcept { return values_; }

    std::span<const double> patch(std::size_t c, std::size_t p) const {
        return {values_.data() + (c * patches_ + p) * patch_len_, patch_len_};
    }
    std::span<double> patch(std::size_t c, std::size_t p) {
        return {values_.data() + (c * patches_ + p) * patch_len_, patch_len_};
    }

    /// Patches [first, first + count) of every channel.
    PatchGrid slice_patches(std::size_t first, std::size_t count) const;

    /// Reorders channels: output channel i is input channel order[i].
    PatchGrid permute_channels(std::span<const std::size_t> order) const;

private:
    std::size_t channels_ = 0;
    std::size_t patches_ = 0;
    std::size_t patch_len_ = 0;
    double rate_ = 0.0;
    std::vector<double> values_;
};

/// FEEG-P v1: "FEGP", u32 C, u32 P, u32 L, f64 rate, C*P*L f32 LE.
void write_patch_grid(const PatchGrid& grid, std::ostream& os);
/// Returns false on clean EOF before the magic (for concatenated streams).
bool read_patch_grid(std::istream& is, PatchGrid& out);

void write_patch_grid(const PatchGrid& grid, const std::filesystem::path& path);
PatchGrid read_patch_grid(const std::filesystem::path& path);

}  // namespace fome
