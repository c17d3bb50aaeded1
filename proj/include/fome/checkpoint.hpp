#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fome/tensor.hpp"

namespace fome {

/// Named learnable tensors in a stable insertion order.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor value);
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

    void zero_grad();
    /// Deep copy with fresh storage.
    ParameterStore clone() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

/// FCKP v1: "FCKP", u32 count, then per tensor u16 name length + UTF-8 name,
/// u8 dtype tag, u8 rank, u64 dims, raw LE data.
void write_checkpoint(const ParameterStore& store, std::ostream& os, DType dtype = DType::f64);
void write_checkpoint(const ParameterStore& store, const std::filesystem::path& path, DType dtype = DType::f64);

struct CheckpointEntry {
    std::string name;
    DType dtype;
    Shape shape;
    std::vector<double> values;
};

std::vector<CheckpointEntry> read_checkpoint(std::istream& is);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `store`, which fixes the expected names and
/// shapes. Missing, extra or mis-shaped tensors raise FormatError.
void load_checkpoint(ParameterStore& store, const std::vector<CheckpointEntry>& entries);

}  // namespace fome
