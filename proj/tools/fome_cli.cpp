// Batch command-line front end: synth, preprocess, spectra, pretrain,
// finetune (classify|forecast|impute), eval, inspect-checkpoint.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fome/checkpoint.hpp"
#include "fome/error.hpp"
#include "fome/model.hpp"
#include "fome/patch_grid.hpp"
#include "fome/preprocess.hpp"
#include "fome/recording.hpp"
#include "fome/spectral.hpp"
#include "fome/trainer.hpp"

#ifndef FOME_GIT_DESCRIBE
#define FOME_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kStdio = "-";

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw fome::IoError("SHA-256 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

/// Everything needed to re-run a command, written as JSON next to its output.
class RunManifest {
public:
    RunManifest(std::string command, std::vector<std::string> argv)
        : command_(std::move(command)), argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream os;
        os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
        started_at_ = os.str();
    }

    json config = json::object();
    std::uint64_t seed = 0;

    std::string read(const std::string& path) {
        std::string bytes;
        if (path == kStdio) {
            std::ostringstream ss;
            ss << std::cin.rdbuf();
            bytes = ss.str();
        } else {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw fome::IoError("cannot open '" + path + "' for reading");
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        inputs_.push_back({{"path", path}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
        return bytes;
    }

    void write(const std::string& path, const std::string& bytes) {
        if (path == kStdio) {
            std::cout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            std::cout.flush();
        } else {
            if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
            std::ofstream out(path, std::ios::binary);
            if (!out) throw fome::IoError("cannot open '" + path + "' for writing");
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            if (!out) throw fome::IoError("write to '" + path + "' failed");
        }
        outputs_.push_back({{"path", path}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    }

    /// Records a file written by the library itself.
    void note_output(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        const std::string bytes(std::istreambuf_iterator<char>(in), {});
        outputs_.push_back({{"path", path.string()}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    }

    json to_json() const {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return {{"command", command_}, {"argv", argv_},         {"config", config},
                {"seed", seed},        {"inputs", inputs_},     {"outputs", outputs_},
                {"started_at", started_at_}, {"wall_time_s", wall}, {"git_describe", FOME_GIT_DESCRIBE}};
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::chrono::steady_clock::time_point start_;
    std::string started_at_;
    json inputs_ = json::array();
    json outputs_ = json::array();
};

// ------------------------------------------------------------- options

struct CommonOptions {
    std::vector<std::string> in;
    std::string out = kStdio;
    std::string manifest;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct ModelOptions {
    std::string preset = "tiny";
    std::string config_path;
    std::string scale;
    std::vector<std::string> ablate;
    std::size_t patch_len = 0;
};

struct TrainOptions {
    std::size_t steps = 0;
    double mask_ratio = 0.40;
    bool loss_all = false;
    std::string mask_mode = "slot";
    std::size_t batch = 0;
    std::size_t accum = 0;
    std::size_t patches_per_sample = 15;
    double lr_peak = 0, lr_init = -1, lr_final = -1;
    std::size_t warmup = 0;
    std::size_t checkpoint_every = 500;
    std::string checkpoint_dir;
    std::string taper = "none";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool multi_in = true) {
    if (multi_in) {
        cmd->add_option("--in", o.in, "Input path(s); '-' reads stdin")->default_str("-");
    } else {
        cmd->add_option("--in", o.in, "Input path; '-' reads stdin")->expected(1)->default_str("-");
    }
    cmd->add_option("--out", o.out, "Output path; '-' writes stdout")->capture_default_str();
    cmd->add_option("--manifest", o.manifest, "Run manifest path (default <out>.manifest.json)");
    cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", o.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_model(CLI::App* cmd, ModelOptions& o) {
    cmd->add_option("--preset", o.preset, "Model preset")
        ->capture_default_str()
        ->check(CLI::IsMember({"tiny", "base", "large"}));
    cmd->add_option("--model-config", o.config_path, "key=value model config file (overrides --preset)");
    cmd->add_option("--scale", o.scale, "Attention score scaling")->check(CLI::IsMember({"d", "dk"}));
    cmd->add_option("--ablate", o.ablate, "Ablation variant (repeatable)")
        ->check(CLI::IsMember({"freq", "temporal", "channel", "conv-embed"}));
    cmd->add_option("--patch-len", o.patch_len, "Patch length (default: the input's)");
}

void add_train(CLI::App* cmd, TrainOptions& o) {
    cmd->add_option("--steps", o.steps, "Optimizer steps (default: 1096000 for pretrain, 1000 for finetune)");
    cmd->add_option("--mask-ratio", o.mask_ratio, "Masked slot fraction")->capture_default_str();
    cmd->add_flag("--loss-all", o.loss_all, "Reconstruction loss over all slots");
    cmd->add_option("--mask-mode", o.mask_mode, "Masking unit")
        ->capture_default_str()
        ->check(CLI::IsMember({"slot", "column"}));
    cmd->add_option("--batch", o.batch, "Micro-batch size");
    cmd->add_option("--accum", o.accum, "Gradient accumulation steps");
    cmd->add_option("--patches-per-sample", o.patches_per_sample, "Patches per training window")->capture_default_str();
    cmd->add_option("--lr-peak", o.lr_peak, "Peak learning rate");
    cmd->add_option("--lr-init", o.lr_init, "Warmup start learning rate");
    cmd->add_option("--lr-final", o.lr_final, "Final learning rate");
    cmd->add_option("--warmup", o.warmup, "Warmup steps");
    cmd->add_option("--checkpoint-every", o.checkpoint_every, "Steps between checkpoints")->capture_default_str();
    cmd->add_option("--checkpoint-dir", o.checkpoint_dir, "Directory for intermediate checkpoints");
    cmd->add_option("--taper", o.taper, "PSD taper")->capture_default_str()->check(CLI::IsMember({"none", "hann"}));
}

fome::Taper parse_taper(const std::string& s) { return s == "hann" ? fome::Taper::hann : fome::Taper::none; }

std::vector<std::string> inputs_or_stdin(const CommonOptions& o) {
    return o.in.empty() ? std::vector<std::string>{kStdio} : o.in;
}

fome::ModelConfig build_model_config(const ModelOptions& o, std::size_t data_patch_len) {
    fome::ModelConfig cfg =
        o.config_path.empty() ? fome::ModelConfig::preset_named(o.preset) : fome::ModelConfig::load(o.config_path);
    if (o.patch_len) {
        cfg.patch_len = o.patch_len;
    } else if (data_patch_len && o.config_path.empty()) {
        cfg.patch_len = data_patch_len;
    }
    if (o.scale == "d") cfg.scale = fome::AttentionScale::model_dim;
    if (o.scale == "dk") cfg.scale = fome::AttentionScale::head_dim;
    for (const auto& a : o.ablate) {
        if (a == "freq") cfg.use_freq = false;
        if (a == "temporal") cfg.temporal_layers = 0;
        if (a == "channel") cfg.channel_layers = 0;
        if (a == "conv-embed") cfg.patch_embed = fome::PatchEmbedKind::conv;
    }
    cfg.validate();
    return cfg;
}

fome::TrainConfig build_train_config(const TrainOptions& o, std::uint64_t seed, std::size_t default_steps = 0) {
    fome::TrainConfig cfg;
    cfg.seed = seed;
    cfg.mask_ratio = o.mask_ratio;
    cfg.loss_scope = o.loss_all ? fome::LossScope::all : fome::LossScope::masked_only;
    cfg.mask_mode = o.mask_mode == "column" ? fome::MaskMode::column : fome::MaskMode::slot;
    if (o.batch) cfg.batch_size = o.batch;
    if (o.accum) cfg.grad_accum = o.accum;
    cfg.patches_per_sample = o.patches_per_sample;
    const std::size_t steps = o.steps ? o.steps : default_steps;
    if (steps) cfg.lr = cfg.lr.scaled_to(steps);
    if (o.lr_peak > 0) cfg.lr.peak = o.lr_peak;
    if (o.lr_init >= 0) cfg.lr.init = o.lr_init;
    if (o.lr_final >= 0) cfg.lr.final_lr = o.lr_final;
    if (o.warmup) cfg.lr.warmup_steps = o.warmup;
    cfg.checkpoint_every = o.checkpoint_every;
    cfg.eval_every = std::max<std::size_t>(1, std::min<std::size_t>(50, cfg.lr.total_steps));
    if (!o.checkpoint_dir.empty()) cfg.checkpoint_dir = o.checkpoint_dir;
    cfg.taper = parse_taper(o.taper);
    cfg.validate();
    return cfg;
}

json model_config_json(const fome::ModelConfig& cfg) {
    json out = json::object();
    std::istringstream is(cfg.to_text());
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

json train_config_json(const fome::TrainConfig& c) {
    return {{"mask_ratio", c.mask_ratio},
            {"patches_per_sample", c.patches_per_sample},
            {"batch_size", c.batch_size},
            {"grad_accum", c.grad_accum},
            {"adamw", {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps},
                       {"weight_decay", c.adamw.weight_decay}}},
            {"lr", {{"init", c.lr.init}, {"peak", c.lr.peak}, {"warmup_steps", c.lr.warmup_steps},
                    {"final", c.lr.final_lr}, {"total_steps", c.lr.total_steps}}},
            {"seed", c.seed},
            {"loss_scope", c.loss_scope == fome::LossScope::all ? "all" : "masked_only"},
            {"mask_mode", c.mask_mode == fome::MaskMode::column ? "column" : "slot"},
            {"taper", c.taper == fome::Taper::hann ? "hann" : "none"},
            {"checkpoint_every", c.checkpoint_every},
            {"checkpoint_dir", c.checkpoint_dir ? c.checkpoint_dir->string() : ""}};
}

std::vector<fome::PatchGrid> parse_grids(const std::string& bytes, const std::string& origin) {
    std::istringstream is(bytes);
    std::vector<fome::PatchGrid> grids;
    fome::PatchGrid g;
    while (fome::read_patch_grid(is, g)) grids.push_back(std::move(g));
    if (grids.empty()) throw fome::EmptyError("no patch grids in '" + origin + "'");
    return grids;
}

std::vector<fome::PatchGrid> read_grids(RunManifest& m, const std::vector<std::string>& paths) {
    std::vector<fome::PatchGrid> all;
    for (const auto& p : paths) {
        for (auto& g : parse_grids(m.read(p), p)) all.push_back(std::move(g));
    }
    return all;
}

std::string serialize_checkpoint(const fome::ParameterStore& store) {
    std::ostringstream os;
    fome::write_checkpoint(store, os);
    return os.str();
}

/// Writes the checkpoint plus its key=value config sidecar.
void write_model(RunManifest& m, const fome::FomeModel& model, const std::string& path) {
    if (path == kStdio) throw fome::ConfigError("model checkpoints need a file path for --out");
    m.write(path, serialize_checkpoint(model.params()));
    m.write(path + ".config", model.config().to_text());
}

fome::ModelConfig sidecar_config(const std::string& checkpoint) {
    const fs::path side = checkpoint + ".config";
    if (!fs::exists(side)) throw fome::ConfigError("missing model config sidecar '" + side.string() + "'");
    return fome::ModelConfig::load(side);
}

/// Copies every tensor of `entries` that `store` also names; all backbone
/// tensors must be present.
void load_backbone(fome::FomeModel& model, const std::vector<fome::CheckpointEntry>& entries) {
    auto& store = model.params();
    std::size_t loaded = 0;
    for (const auto& e : entries) {
        if (!store.contains(e.name)) continue;
        auto& t = store.at(e.name);
        if (t.shape() != e.shape) {
            throw fome::FormatError("tensor '" + e.name + "' has shape " + fome::shape_str(e.shape) + ", model expects " +
                                    fome::shape_str(t.shape()));
        }
        std::copy(e.values.begin(), e.values.end(), t.data().begin());
        ++loaded;
    }
    for (const auto& name : model.backbone_names()) {
        const bool found = std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
        if (!found) throw fome::FormatError("checkpoint lacks backbone tensor '" + name + "'");
    }
    spdlog::info("loaded {} tensors from checkpoint", loaded);
}

void finish(RunManifest& m, const CommonOptions& o, const std::string& command) {
    std::string path = o.manifest;
    if (path.empty()) path = o.out != kStdio ? o.out + ".manifest.json" : "fome-" + command + ".manifest.json";
    std::ofstream out(path);
    if (!out) throw fome::IoError("cannot write manifest '" + path + "'");
    out << m.to_json().dump(2) << '\n';
    spdlog::info("manifest written to {}", path);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text, std::vector<std::string>& header) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    bool first = true;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto cells = split(line, ',');
        for (auto& c : cells) c = trim(c);
        if (first) {
            header = cells;
            first = false;
            continue;
        }
        if (cells.size() != header.size()) {
            throw fome::FormatError("CSV row '" + line + "' has " + std::to_string(cells.size()) + " fields, header has " +
                                    std::to_string(header.size()));
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (s.empty() || pos != s.size() || s[0] == '-') throw fome::FormatError(what + " '" + s + "' is not a count");
    return static_cast<std::size_t>(v);
}

double parse_real(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (s.empty() || pos != s.size()) throw fome::FormatError(what + " '" + s + "' is not a number");
    return v;
}

fome::Split parse_split(const std::string& s) {
    if (s.empty()) return fome::Split::unassigned;
    if (s == "train") return fome::Split::train;
    if (s == "val") return fome::Split::val;
    if (s == "test") return fome::Split::test;
    throw fome::FormatError("split '" + s + "' must be train, val, test or empty");
}

/// Labeled manifest CSV: path,label[,split]; paths relative to the manifest.
std::vector<fome::LabeledGrid> read_labeled(RunManifest& m, const std::string& manifest_path) {
    std::vector<std::string> header;
    const auto rows = parse_csv_rows(m.read(manifest_path), header);
    const auto col = [&](const std::string& name) -> std::ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    const auto ip = col("path"), il = col("label"), is = col("split");
    if (ip < 0 || il < 0) throw fome::FormatError("labeled manifest needs 'path' and 'label' columns");
    const fs::path base = manifest_path == kStdio ? fs::current_path() : fs::path(manifest_path).parent_path();
    std::vector<fome::LabeledGrid> out;
    for (const auto& r : rows) {
        fs::path p = r[static_cast<std::size_t>(ip)];
        if (p.is_relative()) p = base / p;
        const std::size_t label = parse_count(r[static_cast<std::size_t>(il)], "label");
        const fome::Split split = is >= 0 ? parse_split(r[static_cast<std::size_t>(is)]) : fome::Split::unassigned;
        for (auto& g : parse_grids(m.read(p.string()), p.string())) out.push_back({std::move(g), label, split});
    }
    if (out.empty()) throw fome::EmptyError("labeled manifest lists no records");
    return out;
}

/// Model for a fine-tuning command: from a pre-trained checkpoint when
/// given (config from its sidecar), else freshly initialized.
fome::FomeModel finetune_model(RunManifest& m, const ModelOptions& mo, const std::string& checkpoint,
                               std::size_t data_patch_len, const std::function<void(fome::ModelConfig&)>& set_head) {
    fome::ModelConfig cfg;
    std::vector<fome::CheckpointEntry> entries;
    if (!checkpoint.empty()) {
        cfg = sidecar_config(checkpoint);
        const std::string bytes = m.read(checkpoint);
        std::istringstream is(bytes);
        entries = fome::read_checkpoint(is);
    } else {
        cfg = build_model_config(mo, data_patch_len);
    }
    set_head(cfg);
    cfg.validate();
    fome::FomeModel model(cfg);
    if (!entries.empty()) load_backbone(model, entries);
    return model;
}

std::string report_text(const fome::MetricsReport& r) { return r.to_json(2) + "\n"; }

// ------------------------------------------------------------ commands

struct SynthOptions {
    std::size_t channels = 4;
    double duration = 60.0;
    double rate = 250.0;
    double noise = 0.1;
    std::vector<std::string> tones;
    std::string format = "feeg";
};

void run_synth(const CommonOptions& o, const SynthOptions& so, const std::vector<std::string>& argv) {
    RunManifest m("synth", argv);
    m.seed = o.seed;
    fome::SyntheticSpec spec;
    spec.channels = so.channels;
    spec.duration_s = so.duration;
    spec.sample_rate_hz = so.rate;
    spec.noise_std = so.noise;
    spec.seed = o.seed;
    if (so.tones.empty()) {
        for (std::size_t c = 0; c < so.channels; ++c) {
            spec.components.push_back({c, 10.0, 1.0, 0.3 * static_cast<double>(c)});
            spec.components.push_back({c, 23.0, 0.5, 0.7 * static_cast<double>(c)});
        }
    }
    for (const auto& t : so.tones) {
        const auto parts = split(t, ':');
        if (parts.size() < 2 || parts.size() > 4) throw fome::ConfigError("--tone expects ch:freq[:amp[:phase]], got '" + t + "'");
        fome::ToneComponent comp;
        comp.channel = parse_count(parts[0], "tone channel");
        comp.frequency_hz = parse_real(parts[1], "tone frequency");
        if (parts.size() > 2) comp.amplitude = parse_real(parts[2], "tone amplitude");
        if (parts.size() > 3) comp.phase_rad = parse_real(parts[3], "tone phase");
        spec.components.push_back(comp);
    }
    json comps = json::array();
    for (const auto& c : spec.components) {
        comps.push_back({{"channel", c.channel}, {"frequency_hz", c.frequency_hz}, {"amplitude", c.amplitude},
                         {"phase_rad", c.phase_rad}});
    }
    m.config = {{"channels", spec.channels}, {"duration_s", spec.duration_s}, {"sample_rate_hz", spec.sample_rate_hz},
                {"noise_std", spec.noise_std}, {"components", comps}, {"format", so.format}};
    const fome::Recording r = fome::generate_synthetic(spec);
    if (so.format == "csv") {
        if (o.out == kStdio) throw fome::ConfigError("CSV output needs a file path for --out");
        fome::write_recording(r, fs::path(o.out), fome::RecordingFormat::csv);
        m.note_output(o.out);
    } else {
        std::ostringstream os;
        fome::write_recording(r, os);
        m.write(o.out, os.str());
    }
    finish(m, o, "synth");
}

struct PreprocessOptions {
    double notch = 50.0;
    std::string band = "0.5:100.5";
    double rate = 250.0;
    std::size_t window = 1500;
    std::size_t patch_len = 0;
    double ema_alpha = 0.05;
};

void run_preprocess(const CommonOptions& o, const PreprocessOptions& po, const std::vector<std::string>& argv) {
    RunManifest m("preprocess", argv);
    m.seed = o.seed;
    fome::PreprocessConfig cfg;
    cfg.notch_hz = po.notch;
    const auto band = split(po.band, ':');
    if (band.size() != 2) throw fome::ConfigError("--band expects lo:hi, got '" + po.band + "'");
    cfg.band_lo_hz = parse_real(band[0], "band low edge");
    cfg.band_hi_hz = parse_real(band[1], "band high edge");
    cfg.target_rate_hz = po.rate;
    cfg.window_len_samples = po.window;
    cfg.patch_len = po.patch_len;
    cfg.ema_alpha = po.ema_alpha;
    cfg.threads = o.threads;
    cfg.validate();
    m.config = {{"notch_hz", cfg.notch_hz},         {"notch_q", cfg.notch_q},
                {"band_lo_hz", cfg.band_lo_hz},     {"band_hi_hz", cfg.band_hi_hz},
                {"target_rate_hz", cfg.target_rate_hz}, {"window_len_samples", cfg.window_len_samples},
                {"patch_len", cfg.effective_patch_len()}, {"ema_alpha", cfg.ema_alpha},
                {"eps", cfg.eps},                   {"threads", cfg.threads}};

    std::ostringstream out;
    std::size_t count = 0;
    for (const auto& path : inputs_or_stdin(o)) {
        std::vector<fome::Recording> recs;
        if (path != kStdio && fome::format_for_path(path) == fome::RecordingFormat::csv) {
            m.read(path);
            recs.push_back(fome::read_recording(fs::path(path), fome::RecordingFormat::csv));
        } else {
            std::istringstream is(m.read(path));
            fome::Recording r;
            while (fome::read_recording(is, r, path)) recs.push_back(r);
            if (recs.empty()) throw fome::EmptyError("no recordings in '" + path + "'");
        }
        for (const auto& r : recs) {
            const fome::PatchGrid grid = fome::preprocess_pipeline(r, cfg);
            spdlog::info("{}: {} channels, {} patches of {}", path, grid.channels(), grid.patches(), grid.patch_len());
            fome::write_patch_grid(grid, out);
            ++count;
        }
    }
    m.config["recordings"] = count;
    m.write(o.out, out.str());
    finish(m, o, "preprocess");
}

void run_spectra(const CommonOptions& o, const std::string& taper, const std::vector<std::string>& argv) {
    RunManifest m("spectra", argv);
    m.seed = o.seed;
    const auto scheme = fome::BandScheme::eeg_default();
    m.config = {{"taper", taper}, {"bands", json::array()}};
    for (const auto& b : scheme.bands) m.config["bands"].push_back({{"name", b.name}, {"lo_hz", b.lo_hz}, {"hi_hz", b.hi_hz}});
    std::ostringstream out;
    for (std::size_t i = 0; i < scheme.size(); ++i) out << (i ? "," : "") << scheme.bands[i].name;
    out << '\n' << std::setprecision(17);
    for (const auto& g : read_grids(m, inputs_or_stdin(o))) {
        const auto t = fome::band_powers(g, scheme, parse_taper(taper));
        for (std::size_t c = 0; c < t.channels; ++c) {
            for (std::size_t p = 0; p < t.patches; ++p) {
                for (std::size_t b = 0; b < t.n_bands; ++b) out << (b ? "," : "") << t.at(c, p, b);
                out << '\n';
            }
        }
    }
    m.write(o.out, out.str());
    finish(m, o, "spectra");
}

void run_pretrain(const CommonOptions& o, const ModelOptions& mo, const TrainOptions& to, const std::string& trace_path,
                  const std::vector<std::string>& argv) {
    RunManifest m("pretrain", argv);
    m.seed = o.seed;
    const auto corpus = read_grids(m, inputs_or_stdin(o));
    fome::ModelConfig mc = build_model_config(mo, corpus.front().patch_len());
    mc.init_seed = o.seed;
    const fome::TrainConfig tc = build_train_config(to, o.seed);
    m.config = {{"model", model_config_json(mc)}, {"train", train_config_json(tc)}, {"corpus_grids", corpus.size()}};
    fome::FomeModel model(mc);
    spdlog::info("pre-training {} parameters for {} steps", model.params().parameter_count(), tc.lr.total_steps);
    const auto result = fome::pretrain(model, corpus, tc, [&](const fome::LossRecord& r) {
        if (r.step % 100 == 0) spdlog::info("step {} lr {:.3g} loss {:.6f}", r.step, r.lr, r.loss);
    });
    for (const auto& p : result.checkpoints) m.note_output(p);
    write_model(m, model, o.out);
    std::ostringstream trace;
    fome::write_loss_trace(result.trace, trace);
    m.write(trace_path.empty() ? o.out + ".trace.csv" : trace_path, trace.str());
    finish(m, o, "pretrain");
}

struct FinetuneOptions {
    std::string checkpoint;
    std::string mode = "full";
    std::string report;
    std::size_t classes = 0;
    std::size_t context = 15;
    std::size_t horizon = 2;
    double missing_ratio = 0.4;
};

fome::FinetuneMode parse_mode(const std::string& s) {
    return s == "probe" ? fome::FinetuneMode::probe : fome::FinetuneMode::full;
}

void emit_report(RunManifest& m, const FinetuneOptions& fo, const CommonOptions& o, const fome::MetricsReport& r) {
    m.write(fo.report.empty() ? o.out + ".metrics.json" : fo.report, report_text(r));
}

void run_classify(const CommonOptions& o, const ModelOptions& mo, const TrainOptions& to, const FinetuneOptions& fo,
                  const std::vector<std::string>& argv) {
    RunManifest m("finetune classify", argv);
    m.seed = o.seed;
    if (o.in.size() != 1) throw fome::ConfigError("classify expects one labeled manifest CSV for --in");
    const auto data = read_labeled(m, o.in.front());
    std::size_t K = fo.classes;
    if (K == 0) {
        for (const auto& d : data) K = std::max(K, d.label + 1);
    }
    auto model = finetune_model(m, mo, fo.checkpoint, data.front().grid.patch_len(), [&](fome::ModelConfig& c) {
        c.n_classes = K;
        c.init_seed = o.seed;
    });
    const fome::TrainConfig tc = build_train_config(to, o.seed, 1000);
    m.config = {{"model", model_config_json(model.config())}, {"train", train_config_json(tc)}, {"mode", fo.mode},
                {"records", data.size()}, {"checkpoint", fo.checkpoint}};
    const auto result = fome::finetune_classify(model, data, tc, parse_mode(fo.mode));
    write_model(m, model, o.out);
    emit_report(m, fo, o, result.report);
    finish(m, o, "finetune-classify");
}

void run_forecast(const CommonOptions& o, const ModelOptions& mo, const TrainOptions& to, const FinetuneOptions& fo,
                  const std::vector<std::string>& argv) {
    RunManifest m("finetune forecast", argv);
    m.seed = o.seed;
    std::vector<fome::ForecastRecord> data;
    for (auto& g : read_grids(m, inputs_or_stdin(o))) data.push_back({std::move(g), fome::Split::unassigned});
    const std::size_t L = data.front().grid.patch_len();
    auto model = finetune_model(m, mo, fo.checkpoint, L, [&](fome::ModelConfig& c) {
        c.forecast_context = fo.context;
        c.forecast_horizon = fo.horizon * c.patch_len;
        c.init_seed = o.seed;
    });
    const fome::TrainConfig tc = build_train_config(to, o.seed, 1000);
    m.config = {{"model", model_config_json(model.config())}, {"train", train_config_json(tc)}, {"mode", fo.mode},
                {"horizon_patches", fo.horizon}, {"records", data.size()}, {"checkpoint", fo.checkpoint}};
    const auto result = fome::finetune_forecast(model, data, tc, fo.horizon, parse_mode(fo.mode));
    write_model(m, model, o.out);
    emit_report(m, fo, o, result.report);
    finish(m, o, "finetune-forecast");
}

void run_impute(const CommonOptions& o, const ModelOptions& mo, const TrainOptions& to, const FinetuneOptions& fo,
                const std::string& mask_path, const std::vector<std::string>& argv) {
    RunManifest m("finetune impute", argv);
    m.seed = o.seed;
    const auto grids = read_grids(m, inputs_or_stdin(o));
    std::string mask_bytes;
    if (!mask_path.empty()) mask_bytes = m.read(mask_path);
    std::vector<fome::ImputeRecord> data;
    fome::Rng rng(o.seed ^ 0x6d697373696e67ULL);
    std::size_t offset = 0;
    for (const auto& g : grids) {
        const std::size_t n = g.values().size();
        std::vector<std::uint8_t> missing(n, 0);
        if (!mask_path.empty()) {
            if (offset + n > mask_bytes.size()) throw fome::FormatError("missing mask shorter than the input grids");
            for (std::size_t i = 0; i < n; ++i) missing[i] = mask_bytes[offset + i] != 0;
        } else {
            const fome::MaskPlan gaps = fome::MaskPlan::draw(g.channels(), g.patches(), fo.missing_ratio, rng);
            for (std::size_t s : gaps.slots) {
                std::fill_n(missing.begin() + static_cast<std::ptrdiff_t>(s * g.patch_len()), g.patch_len(), 1);
            }
        }
        offset += n;
        data.push_back({g, std::move(missing), fome::Split::unassigned});
    }
    if (!mask_path.empty() && offset != mask_bytes.size()) throw fome::FormatError("missing mask longer than the input grids");
    auto model = finetune_model(m, mo, fo.checkpoint, grids.front().patch_len(), [&](fome::ModelConfig& c) {
        if (fo.checkpoint.empty()) c.init_seed = o.seed;
    });
    const fome::TrainConfig tc = build_train_config(to, o.seed, 1000);
    m.config = {{"model", model_config_json(model.config())}, {"train", train_config_json(tc)},
                {"missing", mask_path.empty() ? json{{"simulated_ratio", fo.missing_ratio}} : json{{"mask", mask_path}}},
                {"records", data.size()}, {"checkpoint", fo.checkpoint}};
    const auto result = fome::impute(model, data, tc);
    write_model(m, model, o.out);
    emit_report(m, fo, o, result.report);
    finish(m, o, "finetune-impute");
}

void run_eval(const CommonOptions& o, const std::string& checkpoint, std::size_t classes, const std::string& taper,
              const std::vector<std::string>& argv) {
    RunManifest m("eval", argv);
    m.seed = o.seed;
    if (o.in.size() > 1) throw fome::ConfigError("eval expects a single --in");
    const std::string in = o.in.empty() ? kStdio : o.in.front();
    fome::MetricsReport report;
    if (!checkpoint.empty()) {
        const auto data = read_labeled(m, in);
        const fome::ModelConfig cfg = sidecar_config(checkpoint);
        fome::FomeModel model(cfg);
        std::istringstream is(m.read(checkpoint));
        fome::load_checkpoint(model.params(), fome::read_checkpoint(is));
        std::vector<std::size_t> preds, labels;
        for (const auto& d : data) {
            preds.push_back(fome::predict_class(model, fome::make_sample(d.grid, fome::BandScheme::eeg_default(),
                                                                         parse_taper(taper))));
            labels.push_back(d.label);
        }
        report = fome::classification_metrics(preds, labels, cfg.n_classes);
        m.config = {{"source", "checkpoint"}, {"checkpoint", checkpoint}, {"records", data.size()}};
    } else {
        std::vector<std::string> header;
        const auto rows = parse_csv_rows(m.read(in), header);
        if (header.size() != 2 || header[0] != "pred" || (header[1] != "label" && header[1] != "target")) {
            throw fome::FormatError("eval CSV header must be 'pred,label' or 'pred,target'");
        }
        if (header[1] == "label") {
            std::vector<std::size_t> preds, labels;
            std::size_t K = classes;
            for (const auto& r : rows) {
                preds.push_back(parse_count(r[0], "prediction"));
                labels.push_back(parse_count(r[1], "label"));
                if (!classes) K = std::max({K, preds.back() + 1, labels.back() + 1});
            }
            report = fome::classification_metrics(preds, labels, K);
        } else {
            std::vector<double> preds, targets;
            for (const auto& r : rows) {
                preds.push_back(parse_real(r[0], "prediction"));
                targets.push_back(parse_real(r[1], "target"));
            }
            if (preds.empty()) throw fome::EmptyError("no predictions to score");
            report = fome::regression_metrics(preds, targets);
        }
        m.config = {{"source", "csv"}, {"rows", rows.size()}};
    }
    m.write(o.out, report_text(report));
    finish(m, o, "eval");
}

void run_inspect(const CommonOptions& o, const std::string& config_path, const std::vector<std::string>& argv) {
    RunManifest m("inspect-checkpoint", argv);
    if (o.in.size() != 1 || o.in.front() == kStdio) throw fome::ConfigError("inspect-checkpoint expects a checkpoint path");
    const std::string path = o.in.front();
    std::istringstream is(m.read(path));
    const auto entries = fome::read_checkpoint(is);
    json out;
    out["checkpoint"] = path;
    out["tensors"] = json::array();
    std::size_t count = 0;
    for (const auto& e : entries) {
        out["tensors"].push_back(
            {{"name", e.name}, {"dtype", e.dtype == fome::DType::f32 ? "f32" : "f64"}, {"shape", e.shape}});
        count += e.values.size();
    }
    out["parameter_count"] = count;
    const std::string side = config_path.empty() ? path + ".config" : config_path;
    if (fs::exists(side)) {
        const auto cfg = fome::ModelConfig::load(side);
        const auto layout = fome::parameter_layout(cfg);
        bool match = layout.size() == entries.size();
        for (std::size_t i = 0; match && i < layout.size(); ++i) {
            match = layout[i].first == entries[i].name && layout[i].second == entries[i].shape;
        }
        out["config"] = model_config_json(cfg);
        out["matches_config"] = match;
    }
    m.config = {{"config_path", fs::exists(side) ? side : ""}};
    m.write(o.out, out.dump(2) + "\n");
    finish(m, o, "inspect-checkpoint");
}

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("fome");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("FOME_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

void report_error(const std::string& kind, const std::string& message, const std::string& command) {
    const json err = {{"error", {{"kind", kind}, {"message", message}, {"command", command}}}};
    std::cerr << err.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    std::vector<std::string> args(argv, argv + argc);

    CLI::App app{"FoME EEG foundation model: preprocessing, pre-training and fine-tuning"};
    app.require_subcommand(1);

    CommonOptions common;
    ModelOptions model_opts;
    TrainOptions train_opts;

    SynthOptions synth_opts;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-tone recording (FEEG or CSV)");
    add_common(synth, common);
    synth->add_option("--channels", synth_opts.channels, "Channel count")->capture_default_str();
    synth->add_option("--duration", synth_opts.duration, "Duration in seconds")->capture_default_str();
    synth->add_option("--rate", synth_opts.rate, "Sample rate in Hz")->capture_default_str();
    synth->add_option("--noise", synth_opts.noise, "Gaussian noise standard deviation")->capture_default_str();
    synth->add_option("--tone", synth_opts.tones, "Tone component ch:freq[:amp[:phase]] (repeatable)");
    synth->add_option("--format", synth_opts.format, "Output format")
        ->capture_default_str()
        ->check(CLI::IsMember({"feeg", "csv"}));

    PreprocessOptions pre_opts;
    auto* pre = app.add_subcommand("preprocess", "Filter, resample, standardize and patch recordings into FEGP");
    add_common(pre, common);
    pre->add_option("--notch", pre_opts.notch, "Line-noise notch frequency")
        ->capture_default_str()
        ->check(CLI::IsMember({50.0, 60.0}));
    pre->add_option("--band", pre_opts.band, "Band-pass edges lo:hi in Hz")->capture_default_str();
    pre->add_option("--rate", pre_opts.rate, "Target sample rate in Hz")->capture_default_str();
    pre->add_option("--window", pre_opts.window, "Window length in samples")->capture_default_str();
    pre->add_option("--patch-len", pre_opts.patch_len, "Patch length (default: one patch per window)");
    pre->add_option("--ema-alpha", pre_opts.ema_alpha, "Standardizer smoothing factor")->capture_default_str();

    std::string taper = "none";
    auto* spectra = app.add_subcommand("spectra", "Band powers per channel and patch as CSV");
    add_common(spectra, common);
    spectra->add_option("--taper", taper, "PSD taper")->capture_default_str()->check(CLI::IsMember({"none", "hann"}));

    std::string trace_path;
    auto* pretrain = app.add_subcommand("pretrain", "Masked-reconstruction pre-training");
    add_common(pretrain, common);
    add_model(pretrain, model_opts);
    add_train(pretrain, train_opts);
    pretrain->add_option("--trace", trace_path, "Loss trace CSV (default <out>.trace.csv)");

    FinetuneOptions ft_opts;
    std::string mask_path;
    auto* finetune = app.add_subcommand("finetune", "Task fine-tuning");
    finetune->require_subcommand(1);
    const auto add_finetune = [&](CLI::App* cmd) {
        add_common(cmd, common);
        add_model(cmd, model_opts);
        add_train(cmd, train_opts);
        cmd->add_option("--checkpoint", ft_opts.checkpoint, "Pre-trained checkpoint (config read from <ckpt>.config)");
        cmd->add_option("--mode", ft_opts.mode, "probe trains the head only; full trains everything")
            ->capture_default_str()
            ->check(CLI::IsMember({"probe", "full"}));
        cmd->add_option("--report", ft_opts.report, "Metrics JSON path (default <out>.metrics.json)");
    };
    auto* classify = finetune->add_subcommand("classify", "Classification from a labeled manifest CSV (path,label,split)");
    add_finetune(classify);
    classify->add_option("--classes", ft_opts.classes, "Class count (default: max label + 1)");
    auto* forecast = finetune->add_subcommand("forecast", "Forecast future patches from a context window");
    add_finetune(forecast);
    forecast->add_option("--context", ft_opts.context, "Context patches")->capture_default_str();
    forecast->add_option("--horizon", ft_opts.horizon, "Forecast horizon in patches")->capture_default_str();
    auto* imp = finetune->add_subcommand("impute", "Reconstruct missing patches");
    add_finetune(imp);
    imp->add_option("--mask", mask_path, "Per-sample missing mask, one byte per grid value");
    imp->add_option("--missing-ratio", ft_opts.missing_ratio, "Simulated missing patch fraction without --mask")
        ->capture_default_str();

    std::string eval_checkpoint;
    std::size_t eval_classes = 0;
    auto* eval = app.add_subcommand("eval", "Score pred,label / pred,target CSV, or a checkpoint on a labeled manifest");
    add_common(eval, common);
    eval->add_option("--checkpoint", eval_checkpoint, "Classifier checkpoint to evaluate");
    eval->add_option("--classes", eval_classes, "Class count (default: max id + 1)");
    eval->add_option("--taper", taper, "PSD taper")->capture_default_str()->check(CLI::IsMember({"none", "hann"}));

    std::string inspect_config;
    auto* inspect = app.add_subcommand("inspect-checkpoint", "List tensors of a checkpoint");
    add_common(inspect, common);
    inspect->add_option("--model-config", inspect_config, "Config to check against (default <ckpt>.config)");

    std::string command = argc > 1 ? argv[1] : "";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("UsageError", e.what(), command);
        return 2;
    }

    try {
        if (*synth) run_synth(common, synth_opts, args);
        else if (*pre) run_preprocess(common, pre_opts, args);
        else if (*spectra) run_spectra(common, taper, args);
        else if (*pretrain) run_pretrain(common, model_opts, train_opts, trace_path, args);
        else if (*classify) run_classify(common, model_opts, train_opts, ft_opts, args);
        else if (*forecast) run_forecast(common, model_opts, train_opts, ft_opts, args);
        else if (*imp) run_impute(common, model_opts, train_opts, ft_opts, mask_path, args);
        else if (*eval) run_eval(common, eval_checkpoint, eval_classes, taper, args);
        else if (*inspect) run_inspect(common, inspect_config, args);
    } catch (const fome::Error& e) {
        report_error(e.kind(), e.what(), command);
        return 1;
    } catch (const fs::filesystem_error& e) {
        report_error("IoError", e.what(), command);
        return 1;
    } catch (const std::exception& e) {
        report_error("InternalError", e.what(), command);
        return 1;
    }
    return 0;
}
