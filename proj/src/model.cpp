#include "fome/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fome/error.hpp"

namespace fome {

namespace {

struct ConvGeometry {
    std::size_t kernel, stride, frames;
};

ConvGeometry conv_geometry(std::size_t patch_len) {
    const std::size_t kernel = std::max<std::size_t>(1, patch_len / 4);
    const std::size_t stride = std::max<std::size_t>(1, kernel / 2);
    return {kernel, stride, (patch_len - kernel) / stride + 1};
}

std::string layer_prefix(EncoderAxis axis, std::size_t layer) {
    return (axis == EncoderAxis::time ? "temporal." : "channel.") + std::to_string(layer);
}

AttentionLayout layout_for(EncoderAxis axis, std::size_t C, std::size_t P) {
    if (axis == EncoderAxis::time) return {C, P, P, 1};
    return {P, C, 1, P};
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Block schedule: all temporal then all channel, or alternating when interleaved.
std::vector<std::pair<EncoderAxis, std::size_t>> block_order(const ModelConfig& cfg) {
    std::vector<std::pair<EncoderAxis, std::size_t>> order;
    if (!cfg.interleave) {
        for (std::size_t i = 0; i < cfg.temporal_layers; ++i) order.emplace_back(EncoderAxis::time, i);
        for (std::size_t i = 0; i < cfg.channel_layers; ++i) order.emplace_back(EncoderAxis::channel, i);
        return order;
    }
    for (std::size_t i = 0; i < std::max(cfg.temporal_layers, cfg.channel_layers); ++i) {
        if (i < cfg.temporal_layers) order.emplace_back(EncoderAxis::time, i);
        if (i < cfg.channel_layers) order.emplace_back(EncoderAxis::channel, i);
    }
    return order;
}

}  // namespace

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.preset = "tiny";
    c.patch_len = 8;
    c.model_dim = 8;
    c.heads = 2;
    c.ffn_dim = 16;
    c.temporal_layers = 1;
    c.channel_layers = 1;
    c.max_patches = 32;
    c.dropout = 0.0;
    return c;
}

// Model width is not published; 1024/16 heads is our choice. Depth and FFN
// sizes follow the published Base/Large layouts.
ModelConfig ModelConfig::base() {
    ModelConfig c;
    c.preset = "base";
    c.patch_len = 1500;
    c.model_dim = 1024;
    c.heads = 16;
    c.ffn_dim = 3072;
    c.temporal_layers = 12;
    c.channel_layers = 4;
    c.max_patches = 32;
    c.dropout = 0.1;
    return c;
}

ModelConfig ModelConfig::large() {
    ModelConfig c = base();
    c.preset = "large";
    c.ffn_dim = 7168;
    return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "base") return base();
    if (name == "large") return large();
    throw ConfigError("unknown preset '" + name + "' (expected tiny|base|large)");
}

double ModelConfig::attention_scale() const {
    const double denom = scale == AttentionScale::model_dim ? static_cast<double>(model_dim) : static_cast<double>(dk());
    return 1.0 / std::sqrt(denom);
}

void ModelConfig::validate() const {
    if (patch_len < 1) throw ConfigError("patch_len must be >= 1");
    if (model_dim < 1 || heads < 1) throw ConfigError("model_dim and heads must be >= 1");
    if ((head_dim_k == 0 || head_dim_v == 0) && model_dim % heads != 0) {
        throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (dk() < 1 || dv() < 1) throw ConfigError("head dims must be >= 1");
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
    if (max_patches < 1) throw ConfigError("max_patches must be >= 1");
    if (n_bands < 1) throw ConfigError("n_bands must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (n_classes > 0 && model_dim / 4 < 1) throw ConfigError("classification head needs model_dim >= 4");
    if (forecast_horizon > 0 && (forecast_context < 1 || forecast_context > max_patches)) {
        throw ConfigError("forecast head needs 1 <= forecast_context <= max_patches");
    }
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "preset=" << preset << '\n'
       << "patch_len=" << patch_len << '\n'
       << "model_dim=" << model_dim << '\n'
       << "heads=" << heads << '\n'
       << "head_dim_k=" << head_dim_k << '\n'
       << "head_dim_v=" << head_dim_v << '\n'
       << "ffn_dim=" << ffn_dim << '\n'
       << "temporal_layers=" << temporal_layers << '\n'
       << "channel_layers=" << channel_layers << '\n'
       << "max_patches=" << max_patches << '\n'
       << "n_bands=" << n_bands << '\n'
       << "dropout=" << dropout << '\n'
       << "use_freq=" << (use_freq ? 1 : 0) << '\n'
       << "patch_embed=" << (patch_embed == PatchEmbedKind::linear ? "linear" : "conv") << '\n'
       << "interleave=" << (interleave ? 1 : 0) << '\n'
       << "scale=" << (scale == AttentionScale::model_dim ? "d" : "dk") << '\n'
       << "n_classes=" << n_classes << '\n'
       << "forecast_context=" << forecast_context << '\n'
       << "forecast_horizon=" << forecast_horizon << '\n'
       << "init_seed=" << init_seed << '\n';
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream is(text);
    std::string line;
    ModelConfig cfg = tiny();
    cfg.preset = "custom";
    while (std::getline(is, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(" \t") + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        if (key == "preset") {
            cfg = preset_named(value);
        } else {
            kv.emplace_back(key, value);
        }
    }
    const auto to_size = [](const std::string& k, const std::string& v) {
        std::size_t pos = 0;
        unsigned long long n = 0;
        try {
            n = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != v.size() || v.empty() || v[0] == '-') throw ConfigError("config key '" + k + "' needs a count, got '" + v + "'");
        return static_cast<std::size_t>(n);
    };
    for (const auto& [k, v] : kv) {
        if (k == "patch_len") cfg.patch_len = to_size(k, v);
        else if (k == "model_dim") cfg.model_dim = to_size(k, v);
        else if (k == "heads") cfg.heads = to_size(k, v);
        else if (k == "head_dim_k") cfg.head_dim_k = to_size(k, v);
        else if (k == "head_dim_v") cfg.head_dim_v = to_size(k, v);
        else if (k == "ffn_dim") cfg.ffn_dim = to_size(k, v);
        else if (k == "temporal_layers") cfg.temporal_layers = to_size(k, v);
        else if (k == "channel_layers") cfg.channel_layers = to_size(k, v);
        else if (k == "max_patches") cfg.max_patches = to_size(k, v);
        else if (k == "n_bands") cfg.n_bands = to_size(k, v);
        else if (k == "dropout") cfg.dropout = std::stod(v);
        else if (k == "use_freq") cfg.use_freq = to_size(k, v) != 0;
        else if (k == "interleave") cfg.interleave = to_size(k, v) != 0;
        else if (k == "n_classes") cfg.n_classes = to_size(k, v);
        else if (k == "forecast_context") cfg.forecast_context = to_size(k, v);
        else if (k == "forecast_horizon") cfg.forecast_horizon = to_size(k, v);
        else if (k == "init_seed") cfg.init_seed = to_size(k, v);
        else if (k == "patch_embed") {
            if (v != "linear" && v != "conv") throw ConfigError("patch_embed must be linear|conv");
            cfg.patch_embed = v == "linear" ? PatchEmbedKind::linear : PatchEmbedKind::conv;
        } else if (k == "scale") {
            if (v != "d" && v != "dk") throw ConfigError("scale must be d|dk");
            cfg.scale = v == "d" ? AttentionScale::model_dim : AttentionScale::head_dim;
        } else {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
}

void ModelConfig::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open config '" + path.string() + "' for writing");
    os << to_text();
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t D = cfg.model_dim, L = cfg.patch_len;
    std::vector<std::pair<std::string, Shape>> out;
    const auto lin = [&](const std::string& name, std::size_t in, std::size_t o) {
        out.emplace_back(name + ".weight", Shape{in, o});
        out.emplace_back(name + ".bias", Shape{o});
    };
    const auto norm = [&](const std::string& name) {
        out.emplace_back(name + ".gamma", Shape{D});
        out.emplace_back(name + ".beta", Shape{D});
    };
    if (cfg.patch_embed == PatchEmbedKind::linear) {
        lin("embed.patch", L, D);
    } else {
        const auto g = conv_geometry(L);
        lin("embed.conv", g.kernel, D);
        lin("embed.conv_proj", g.frames * D, D);
    }
    if (cfg.use_freq) lin("embed.freq", cfg.n_bands, D);
    out.emplace_back("embed.pos", Shape{cfg.max_patches, D});
    out.emplace_back("embed.mask", Shape{D});
    const auto block = [&](const std::string& prefix) {
        norm(prefix + ".norm1");
        lin(prefix + ".attn.q", D, cfg.heads * cfg.dk());
        lin(prefix + ".attn.k", D, cfg.heads * cfg.dk());
        lin(prefix + ".attn.v", D, cfg.heads * cfg.dv());
        lin(prefix + ".attn.out", cfg.heads * cfg.dv(), D);
        norm(prefix + ".norm2");
        lin(prefix + ".ffn.fc1", D, cfg.ffn_dim);
        lin(prefix + ".ffn.fc2", cfg.ffn_dim, D);
    };
    for (std::size_t i = 0; i < cfg.temporal_layers; ++i) block(layer_prefix(EncoderAxis::time, i));
    for (std::size_t i = 0; i < cfg.channel_layers; ++i) block(layer_prefix(EncoderAxis::channel, i));
    norm("final_norm");
    lin("head.reconstruct", D, L);
    if (cfg.n_classes > 0) {
        lin("head.classify.0", D, D / 2);
        lin("head.classify.1", D / 2, D / 4);
        lin("head.classify.2", D / 4, cfg.n_classes);
    }
    if (cfg.forecast_horizon > 0) lin("head.forecast", cfg.forecast_context * D, cfg.forecast_horizon);
    return out;
}

ParameterStore init_parameters(const ModelConfig& cfg) {
    Rng rng(cfg.init_seed);
    ParameterStore store;
    for (auto& [name, shape] : parameter_layout(cfg)) {
        std::vector<double> v(shape_numel(shape), 0.0);
        if (ends_with(name, ".weight")) {
            const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& x : v) x = rng.uniform(-limit, limit);
        } else if (ends_with(name, ".gamma")) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (name == "embed.pos" || name == "embed.mask") {
            for (double& x : v) x = rng.normal(0.0, 0.02);
        }
        store.add(name, Tensor(shape, std::move(v), true));
    }
    return store;
}

FomeModel::FomeModel(ModelConfig cfg) : cfg_(std::move(cfg)), params_(init_parameters(cfg_)) {}

FomeModel::FomeModel(ModelConfig cfg, ParameterStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    const auto layout = parameter_layout(cfg_);
    if (layout.size() != params_.size()) throw ShapeError("parameter store does not match model config");
    for (const auto& [name, shape] : layout) {
        if (params_.at(name).shape() != shape) {
            throw ShapeError("parameter '" + name + "' has shape " + shape_str(params_.at(name).shape()) + ", config expects " +
                             shape_str(shape));
        }
    }
}

Tensor FomeModel::linear(const Tensor& x, const std::string& prefix) const {
    return ops::add(ops::matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
}

EmbeddingParts FomeModel::embed_parts(const PatchGrid& grid, const BandPowerTensor& bands) const {
    const std::size_t C = grid.channels(), P = grid.patches(), L = grid.patch_len(), D = cfg_.model_dim;
    if (L != cfg_.patch_len) {
        throw ShapeError("grid patch length " + std::to_string(L) + " != model patch_len " + std::to_string(cfg_.patch_len));
    }
    if (P > cfg_.max_patches) {
        throw CapacityError(std::to_string(P) + " patches exceed max_patches " + std::to_string(cfg_.max_patches));
    }
    const std::size_t N = C * P;

    EmbeddingParts parts;
    const Tensor x({N, L}, grid.values());
    if (cfg_.patch_embed == PatchEmbedKind::linear) {
        parts.patch = linear(x, "embed.patch");
    } else {
        const auto g = conv_geometry(L);
        std::vector<double> frames;
        frames.reserve(N * g.frames * g.kernel);
        for (std::size_t n = 0; n < N; ++n) {
            const double* row = grid.values().data() + n * L;
            for (std::size_t f = 0; f < g.frames; ++f) frames.insert(frames.end(), row + f * g.stride, row + f * g.stride + g.kernel);
        }
        const Tensor unfolded({N * g.frames, g.kernel}, std::move(frames));
        const Tensor conv = ops::gelu(linear(unfolded, "embed.conv"));
        parts.patch = linear(ops::reshape(conv, {N, g.frames * D}), "embed.conv_proj");
    }

    if (cfg_.use_freq) {
        if (bands.channels != C || bands.patches != P || bands.n_bands != cfg_.n_bands) {
            throw ShapeError("band tensor [" + std::to_string(bands.channels) + ", " + std::to_string(bands.patches) + ", " +
                             std::to_string(bands.n_bands) + "] does not match grid [" + std::to_string(C) + ", " +
                             std::to_string(P) + "] with " + std::to_string(cfg_.n_bands) + " bands");
        }
        const Tensor power({N, cfg_.n_bands}, bands.values);
        parts.freq = linear(ops::softmax(power, 1), "embed.freq");
    } else {
        parts.freq = Tensor::zeros({N, D});
    }

    std::vector<std::size_t> positions(N);
    for (std::size_t n = 0; n < N; ++n) positions[n] = n % P;
    parts.pos = ops::embedding_lookup(p("embed.pos"), positions);
    return parts;
}

Tensor FomeModel::embed(const PatchGrid& grid, const BandPowerTensor& bands) const {
    const auto parts = embed_parts(grid, bands);
    Tensor content = cfg_.use_freq ? ops::add(parts.patch, parts.freq) : parts.patch;
    return ops::add(content, parts.pos);
}

Tensor FomeModel::multi_head_attention(const Tensor& x, std::size_t layer, EncoderAxis axis, std::size_t C, std::size_t P,
                                       std::vector<double>* probs) const {
    const std::string prefix = layer_prefix(axis, layer) + ".attn";
    const Tensor q = linear(x, prefix + ".q");
    const Tensor k = linear(x, prefix + ".k");
    const Tensor v = linear(x, prefix + ".v");
    const Tensor heads =
        ops::attention(q, k, v, cfg_.heads, layout_for(axis, C, P), cfg_.attention_scale(), probs);
    return linear(heads, prefix + ".out");
}

Tensor FomeModel::encoder_block(const Tensor& x, std::size_t layer, EncoderAxis axis, std::size_t C, std::size_t P,
                                const ForwardOptions& opts) const {
    const std::string prefix = layer_prefix(axis, layer);
    const bool drop = opts.training && cfg_.dropout > 0.0 && opts.dropout_rng != nullptr;

    std::vector<double> probs;
    const Tensor h1 = ops::layer_norm(x, p(prefix + ".norm1.gamma"), p(prefix + ".norm1.beta"));
    Tensor attn = multi_head_attention(h1, layer, axis, C, P, opts.capture ? &probs : nullptr);
    if (drop) attn = ops::dropout(attn, cfg_.dropout, *opts.dropout_rng);
    const Tensor x1 = ops::add(x, attn);

    const Tensor h2 = ops::layer_norm(x1, p(prefix + ".norm2.gamma"), p(prefix + ".norm2.beta"));
    Tensor ffn = linear(ops::gelu(linear(h2, prefix + ".ffn.fc1")), prefix + ".ffn.fc2");
    if (drop) ffn = ops::dropout(ffn, cfg_.dropout, *opts.dropout_rng);

    if (opts.capture != nullptr) {
        const auto lay = layout_for(axis, C, P);
        opts.capture->push_back({axis, layer, std::move(probs), lay.groups, cfg_.heads, lay.members});
    }
    return ops::add(x1, ffn);
}

Tensor FomeModel::forward(const PatchGrid& grid, const BandPowerTensor& bands, const ForwardOptions& opts) const {
    const std::size_t C = grid.channels(), P = grid.patches();
    const auto parts = embed_parts(grid, bands);
    Tensor content = cfg_.use_freq ? ops::add(parts.patch, parts.freq) : parts.patch;
    if (!opts.mask_slots.empty()) {
        for (std::size_t slot : opts.mask_slots) {
            if (slot >= C * P) {
                throw IndexError("mask slot " + std::to_string(slot) + " out of range for " + std::to_string(C) + "x" +
                                 std::to_string(P) + " grid");
            }
        }
        content = ops::replace_rows(content, p("embed.mask"), opts.mask_slots);
    }
    Tensor x = ops::add(content, parts.pos);
    for (const auto& [axis, layer] : block_order(cfg_)) x = encoder_block(x, layer, axis, C, P, opts);
    return ops::layer_norm(x, p("final_norm.gamma"), p("final_norm.beta"));
}

Tensor FomeModel::head_reconstruct(const Tensor& e_final) const { return linear(e_final, "head.reconstruct"); }

Tensor FomeModel::head_classify_logits(const Tensor& e_final) const {
    if (cfg_.n_classes == 0) throw ConfigError("model has no classification head (n_classes = 0)");
    const Tensor pooled = ops::mean_rows(e_final);
    const Tensor h1 = ops::gelu(linear(pooled, "head.classify.0"));
    const Tensor h2 = ops::gelu(linear(h1, "head.classify.1"));
    return linear(h2, "head.classify.2");
}

Tensor FomeModel::head_classify(const Tensor& e_final) const { return ops::softmax(head_classify_logits(e_final), 1); }

Tensor FomeModel::head_forecast(const Tensor& e_final, std::size_t C) const {
    if (cfg_.forecast_horizon == 0) throw ConfigError("model has no forecast head (forecast_horizon = 0)");
    const std::size_t D = cfg_.model_dim;
    if (e_final.numel() != C * cfg_.forecast_context * D) {
        throw ShapeError("forecast head expects " + std::to_string(C) + "x" + std::to_string(cfg_.forecast_context) +
                         " tokens, got " + shape_str(e_final.shape()));
    }
    return linear(ops::reshape(e_final, {C, cfg_.forecast_context * D}), "head.forecast");
}

std::vector<std::string> FomeModel::backbone_names() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : params_.entries()) {
        if (name.rfind("head.", 0) != 0) names.push_back(name);
    }
    return names;
}

}  // namespace fome
