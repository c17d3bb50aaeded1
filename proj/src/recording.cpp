#include "fome/recording.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "fome/binary_io.hpp"
#include "fome/error.hpp"
#include "fome/rng.hpp"

namespace fome {

namespace {

constexpr char kMagic[5] = "FEEG";
constexpr std::uint8_t kVersion = 1;

void check_finite(std::span<const double> data, std::size_t samples) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw DataError("non-finite sample at channel " + std::to_string(i / samples) +
                            ", index " + std::to_string(i % samples));
        }
    }
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& text, const std::string& where) {
    // strtod accepts "nan"/"inf" so those surface as DataError, not FormatError.
    const char* begin = text.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (text.empty() || end != begin + text.size()) {
        throw FormatError("cannot parse number '" + text + "' at " + where);
    }
    return v;
}

}  // namespace

Recording::Recording(std::size_t channels, std::size_t samples, double sample_rate_hz,
                     std::vector<double> data, std::vector<std::string> labels, std::string id)
    : channels_(channels),
      samples_(samples),
      rate_(sample_rate_hz),
      data_(std::move(data)),
      labels_(std::move(labels)),
      id_(std::move(id)) {
    if (channels_ < 1 || samples_ < 1) throw DataError("recording needs C >= 1 and T >= 1");
    if (!(rate_ > 0.0) || !std::isfinite(rate_)) throw DataError("sample rate must be positive");
    if (data_.size() != channels_ * samples_) {
        throw DataError("data length " + std::to_string(data_.size()) + " != C*T = " +
                        std::to_string(channels_ * samples_));
    }
    if (!labels_.empty() && labels_.size() != channels_) {
        throw DataError("expected " + std::to_string(channels_) + " channel labels, got " +
                        std::to_string(labels_.size()));
    }
    check_finite(data_, samples_);
}

Recording Recording::with_data(std::size_t samples, double rate, std::vector<double> data) const {
    return Recording(channels_, samples, rate, std::move(data), labels_, id_);
}

bool Recording::identical(const Recording& other) const {
    if (channels_ != other.channels_ || samples_ != other.samples_) return false;
    if (std::bit_cast<std::uint64_t>(rate_) != std::bit_cast<std::uint64_t>(other.rate_)) return false;
    if (labels_ != other.labels_) return false;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(other.data_[i])) {
            return false;
        }
    }
    return true;
}

void write_recording(const Recording& r, std::ostream& os) {
    os.write(kMagic, 4);
    io::put_le<std::uint8_t>(os, kVersion);
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.channels()));
    io::put_le<std::uint64_t>(os, r.samples());
    io::put_f64(os, r.sample_rate_hz());
    for (double v : r.data()) io::put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("failed writing FEEG stream");
}

bool read_recording(std::istream& is, Recording& out, const std::string& id) {
    if (!io::expect_magic(is, kMagic, "FEEG")) return false;
    const auto version = io::get_le<std::uint8_t>(is, "FEEG version");
    if (version != kVersion) throw FormatError("unsupported FEEG version " + std::to_string(version));
    const auto channels = io::get_le<std::uint32_t>(is, "FEEG channel count");
    const auto samples = io::get_le<std::uint64_t>(is, "FEEG sample count");
    const double rate = io::get_f64(is, "FEEG sample rate");
    if (channels == 0 || samples == 0) throw FormatError("FEEG header declares an empty recording");
    if (!(rate > 0.0) || !std::isfinite(rate)) throw FormatError("FEEG header has invalid sample rate");
    if (samples > std::numeric_limits<std::size_t>::max() / channels / sizeof(double)) {
        throw FormatError("FEEG header dimensions overflow");
    }
    std::vector<double> data;
    data.reserve(std::min<std::size_t>(channels * samples, std::size_t{1} << 24));
    for (std::size_t i = 0; i < channels * samples; ++i) {
        data.push_back(static_cast<double>(io::get_f32(is, "FEEG samples")));
    }
    check_finite(data, samples);
    out = Recording(channels, samples, rate, std::move(data), {}, id);
    return true;
}

RecordingFormat format_for_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? RecordingFormat::csv : RecordingFormat::binary;
}

void write_recording(const Recording& r, const std::filesystem::path& path, RecordingFormat format) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    if (format == RecordingFormat::binary) {
        write_recording(r, os);
        return;
    }
    os << "# rate_hz=" << std::setprecision(17) << r.sample_rate_hz() << '\n';
    for (std::size_t c = 0; c < r.channels(); ++c) {
        if (c) os << ',';
        os << (r.channel_labels().empty() ? "ch" + std::to_string(c) : r.channel_labels()[c]);
    }
    os << '\n';
    for (std::size_t t = 0; t < r.samples(); ++t) {
        for (std::size_t c = 0; c < r.channels(); ++c) {
            if (c) os << ',';
            os << r.at(c, t);
        }
        os << '\n';
    }
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Recording read_recording(const std::filesystem::path& path, RecordingFormat format) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    const std::string id = path.stem().string();
    if (format == RecordingFormat::binary) {
        Recording r(1, 1, 1.0, {0.0});
        if (!read_recording(is, r, id)) throw FormatError("empty FEEG file '" + path.string() + "'");
        return r;
    }

    std::string line;
    if (!std::getline(is, line)) throw FormatError("CSV missing rate header");
    line = trim(line);
    const std::string prefix = "# rate_hz=";
    if (line.rfind(prefix, 0) != 0) throw FormatError("CSV line 1 must be '# rate_hz=<float>'");
    const double rate = parse_double(line.substr(prefix.size()), "line 1");
    if (!(rate > 0.0) || !std::isfinite(rate)) throw FormatError("CSV sample rate must be positive");
    if (!std::getline(is, line)) throw FormatError("CSV missing label line");
    std::vector<std::string> labels = split_csv(trim(line));
    const std::size_t channels = labels.size();
    if (channels == 0) throw FormatError("CSV declares no channels");

    std::vector<std::vector<double>> columns(channels);
    std::size_t row = 0;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != channels) {
            throw FormatError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                              " values, header declares " + std::to_string(channels));
        }
        for (std::size_t c = 0; c < channels; ++c) {
            const double v = parse_double(cells[c], "row " + std::to_string(row));
            if (!std::isfinite(v)) {
                throw DataError("non-finite sample at channel " + std::to_string(c) + ", index " +
                                std::to_string(row));
            }
            columns[c].push_back(v);
        }
        ++row;
    }
    if (row == 0) throw FormatError("CSV has no sample rows");
    std::vector<double> data;
    data.reserve(channels * row);
    for (auto& col : columns) data.insert(data.end(), col.begin(), col.end());
    return Recording(channels, row, rate, std::move(data), std::move(labels), id);
}

Recording generate_synthetic(const SyntheticSpec& spec) {
    if (spec.channels < 1) throw SpecError("synthetic spec needs at least one channel");
    if (!(spec.sample_rate_hz > 0.0)) throw SpecError("sample rate must be positive");
    if (!(spec.duration_s > 0.0)) throw SpecError("duration must be positive");
    if (!(spec.noise_std >= 0.0)) throw SpecError("noise_std must be non-negative");
    const double nyquist = spec.sample_rate_hz / 2.0;
    for (const auto& comp : spec.components) {
        if (comp.channel >= spec.channels) throw SpecError("component channel out of range");
        if (!(comp.frequency_hz < nyquist) || comp.frequency_hz < 0.0) {
            throw SpecError("component frequency " + std::to_string(comp.frequency_hz) +
                            " Hz is not below Nyquist " + std::to_string(nyquist) + " Hz");
        }
    }
    const auto samples = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
    if (samples < 1) throw SpecError("duration too short for one sample");

    std::vector<double> data(spec.channels * samples, 0.0);
    for (const auto& comp : spec.components) {
        double* row = data.data() + comp.channel * samples;
        const double w = 2.0 * std::numbers::pi * comp.frequency_hz / spec.sample_rate_hz;
        for (std::size_t t = 0; t < samples; ++t) {
            row[t] += comp.amplitude * std::sin(w * static_cast<double>(t) + comp.phase_rad);
        }
    }
    if (spec.noise_std > 0.0) {
        Rng rng(spec.seed);
        for (double& v : data) v += spec.noise_std * rng.normal();
    }
    return Recording(spec.channels, samples, spec.sample_rate_hz, std::move(data), {},
                     "synthetic-" + std::to_string(spec.seed));
}

}  // namespace fome
