#include "fome/patch_grid.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "fome/binary_io.hpp"
#include "fome/error.hpp"

namespace fome {

namespace {
constexpr char kMagic[5] = "FEGP";
}

PatchGrid::PatchGrid(std::size_t channels, std::size_t patches, std::size_t patch_len, double rate_hz,
                     std::vector<double> values)
    : channels_(channels), patches_(patches), patch_len_(patch_len), rate_(rate_hz), values_(std::move(values)) {
    if (values_.size() != channels_ * patches_ * patch_len_) {
        throw ShapeError("patch grid data length " + std::to_string(values_.size()) + " != C*P*L = " +
                         std::to_string(channels_ * patches_ * patch_len_));
    }
}

PatchGrid PatchGrid::slice_patches(std::size_t first, std::size_t count) const {
    if (first + count > patches_) throw IndexError("patch slice out of range");
    std::vector<double> out;
    out.reserve(channels_ * count * patch_len_);
    for (std::size_t c = 0; c < channels_; ++c) {
        const double* begin = values_.data() + (c * patches_ + first) * patch_len_;
        out.insert(out.end(), begin, begin + count * patch_len_);
    }
    return PatchGrid(channels_, count, patch_len_, rate_, std::move(out));
}

PatchGrid PatchGrid::permute_channels(std::span<const std::size_t> order) const {
    if (order.size() != channels_) throw ShapeError("channel permutation has wrong length");
    std::vector<double> out;
    out.reserve(values_.size());
    const std::size_t stride = patches_ * patch_len_;
    for (std::size_t c : order) {
        if (c >= channels_) throw IndexError("channel permutation index out of range");
        out.insert(out.end(), values_.begin() + c * stride, values_.begin() + (c + 1) * stride);
    }
    return PatchGrid(channels_, patches_, patch_len_, rate_, std::move(out));
}

void write_patch_grid(const PatchGrid& grid, std::ostream& os) {
    os.write(kMagic, 4);
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.channels()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.patches()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.patch_len()));
    io::put_f64(os, grid.rate_hz());
    for (double v : grid.values()) io::put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("failed writing FEGP stream");
}

bool read_patch_grid(std::istream& is, PatchGrid& out) {
    if (!io::expect_magic(is, kMagic, "FEGP")) return false;
    const auto channels = io::get_le<std::uint32_t>(is, "FEGP channel count");
    const auto patches = io::get_le<std::uint32_t>(is, "FEGP patch count");
    const auto patch_len = io::get_le<std::uint32_t>(is, "FEGP patch length");
    const double rate = io::get_f64(is, "FEGP rate");
    if (channels == 0 || patches == 0 || patch_len == 0) throw FormatError("FEGP header declares an empty grid");
    if (!(rate > 0.0) || !std::isfinite(rate)) throw FormatError("FEGP header has invalid rate");
    const std::size_t n = std::size_t{channels} * patches * patch_len;
    std::vector<double> values;
    values.reserve(std::min<std::size_t>(n, std::size_t{1} << 24));
    for (std::size_t i = 0; i < n; ++i) {
        const double v = io::get_f32(is, "FEGP values");
        if (!std::isfinite(v)) throw DataError("non-finite FEGP value at flat index " + std::to_string(i));
        values.push_back(v);
    }
    out = PatchGrid(channels, patches, patch_len, rate, std::move(values));
    return true;
}

void write_patch_grid(const PatchGrid& grid, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    write_patch_grid(grid, os);
}

PatchGrid read_patch_grid(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    PatchGrid grid;
    if (!read_patch_grid(is, grid)) throw FormatError("empty FEGP file '" + path.string() + "'");
    return grid;
}

}  // namespace fome
