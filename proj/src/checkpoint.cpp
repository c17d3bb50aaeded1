#include "fome/checkpoint.hpp"

#include <fstream>
#include <set>

#include "fome/binary_io.hpp"
#include "fome/error.hpp"

namespace fome {

namespace {
constexpr char kMagic[5] = "FCKP";
}

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone(t.requires_grad()));
    return out;
}

void write_checkpoint(const ParameterStore& store, std::ostream& os, DType dtype) {
    os.write(kMagic, 4);
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store.entries()) {
        if (name.size() > UINT16_MAX) throw FormatError("parameter name too long: " + name);
        io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
        io::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) io::put_le<std::uint64_t>(os, d);
        for (double v : t.data()) {
            if (dtype == DType::f64) {
                io::put_f64(os, v);
            } else {
                io::put_f32(os, static_cast<float>(v));
            }
        }
    }
    if (!os) throw IoError("failed writing FCKP stream");
}

void write_checkpoint(const ParameterStore& store, const std::filesystem::path& path, DType dtype) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(store, os, dtype);
}

std::vector<CheckpointEntry> read_checkpoint(std::istream& is) {
    if (!io::expect_magic(is, kMagic, "FCKP")) throw FormatError("empty FCKP stream");
    const auto count = io::get_le<std::uint32_t>(is, "FCKP tensor count");
    std::vector<CheckpointEntry> out;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto len = io::get_le<std::uint16_t>(is, "FCKP name length");
        e.name.resize(len);
        is.read(e.name.data(), len);
        if (is.gcount() != len) throw FormatError("truncated FCKP tensor name");
        if (!seen.insert(e.name).second) throw FormatError("duplicate tensor '" + e.name + "' in checkpoint");
        const auto tag = io::get_le<std::uint8_t>(is, "FCKP dtype");
        if (tag != static_cast<std::uint8_t>(DType::f32) && tag != static_cast<std::uint8_t>(DType::f64)) {
            throw FormatError("unknown dtype tag " + std::to_string(tag) + " for '" + e.name + "'");
        }
        e.dtype = static_cast<DType>(tag);
        const auto rank = io::get_le<std::uint8_t>(is, "FCKP rank");
        for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(io::get_le<std::uint64_t>(is, "FCKP dims"));
        const std::size_t n = shape_numel(e.shape);
        e.values.reserve(std::min<std::size_t>(n, std::size_t{1} << 24));
        for (std::size_t k = 0; k < n; ++k) {
            e.values.push_back(e.dtype == DType::f64 ? io::get_f64(is, "FCKP data") : io::get_f32(is, "FCKP data"));
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    return read_checkpoint(is);
}

void load_checkpoint(ParameterStore& store, const std::vector<CheckpointEntry>& entries) {
    std::set<std::string> provided;
    for (const auto& e : entries) {
        if (!store.contains(e.name)) throw FormatError("checkpoint tensor '" + e.name + "' is not part of the model");
        Tensor& t = store.at(e.name);
        if (t.shape() != e.shape) {
            throw FormatError("checkpoint tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", model expects " +
                              shape_str(t.shape()));
        }
        provided.insert(e.name);
    }
    for (const auto& [name, t] : store.entries()) {
        if (!provided.contains(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    for (const auto& e : entries) {
        auto dst = store.at(e.name).data();
        std::copy(e.values.begin(), e.values.end(), dst.begin());
    }
}

}  // namespace fome
