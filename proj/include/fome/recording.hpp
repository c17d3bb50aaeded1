#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fome {

/// Multi-channel signal, C x T samples stored channel-major, plus the
/// sampling rate shared by all channels. Immutable once constructed.
class Recording {
public:
    Recording() = default;
    Recording(std::size_t channels, std::size_t samples, double sample_rate_hz,
              std::vector<double> data, std::vector<std::string> labels = {},
              std::string id = {});

    std::size_t channels() const noexcept { return channels_; }
    std::size_t samples() const noexcept { return samples_; }
    double sample_rate_hz() const noexcept { return rate_; }
    const std::string& id() const noexcept { return id_; }
    const std::vector<std::string>& channel_labels() const noexcept { return labels_; }

    std::span<const double> channel(std::size_t c) const {
        return {data_.data() + c * samples_, samples_};
    }
    double at(std::size_t c, std::size_t t) const { return data_[c * samples_ + t]; }
    const std::vector<double>& data() const noexcept { return data_; }

    /// Same metadata, new samples (shape may change in T, e.g. after resampling).
    Recording with_data(std::size_t samples, double rate, std::vector<double> data) const;

    /// Bitwise equality on shape, rate, labels and samples (id ignored).
    bool identical(const Recording& other) const;

private:
    std::size_t channels_ = 0;
    std::size_t samples_ = 0;
    double rate_ = 0.0;
    std::vector<double> data_;
    std::vector<std::string> labels_;
    std::string id_;
};

enum class RecordingFormat { binary, csv };

struct ToneComponent {
    std::size_t channel = 0;
    double frequency_hz = 0.0;
    double amplitude = 1.0;
    double phase_rad = 0.0;
};

struct SyntheticSpec {
    std::size_t channels = 1;
    std::vector<ToneComponent> components;
    double noise_std = 0.0;
    double duration_s = 1.0;
    double sample_rate_hz = 250.0;
    std::uint64_t seed = 0;
};

/// FEEG v1 stream codec. Samples are narrowed to f32 on write; a Recording
/// whose samples are f32-representable round-trips bit-exactly.
void write_recording(const Recording& r, std::ostream& os);
/// Returns false on clean EOF before the magic (for concatenated streams).
bool read_recording(std::istream& is, Recording& out, const std::string& id = {});

void write_recording(const Recording& r, const std::filesystem::path& path, RecordingFormat format);
Recording read_recording(const std::filesystem::path& path, RecordingFormat format);

/// Infers the format from the extension (.csv => csv, otherwise binary).
RecordingFormat format_for_path(const std::filesystem::path& path);

/// Sum of sinusoids per channel plus seeded gaussian noise:
///   data[c][t] = sum A*sin(2*pi*f*t/fs + phi) + N(0, noise_std)
/// Noise is drawn channel-major, time-minor from one Rng(seed) stream.
Recording generate_synthetic(const SyntheticSpec& spec);

}  // namespace fome
