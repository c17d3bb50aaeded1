#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fome/checkpoint.hpp"
#include "fome/patch_grid.hpp"
#include "fome/rng.hpp"
#include "fome/spectral.hpp"
#include "fome/tensor.hpp"

namespace fome {

/// Divisor of attention scores: sqrt(model_dim) or sqrt(head_dim_k).
enum class AttentionScale { model_dim, head_dim };

enum class PatchEmbedKind { linear, conv };

struct ModelConfig {
    std::string preset = "custom";
    std::size_t patch_len = 1500;
    std::size_t model_dim = 1024;
    std::size_t heads = 16;
    std::size_t head_dim_k = 0;  // 0 => model_dim / heads
    std::size_t head_dim_v = 0;  // 0 => model_dim / heads
    std::size_t ffn_dim = 3072;
    std::size_t temporal_layers = 12;
    std::size_t channel_layers = 4;
    std::size_t max_patches = 32;
    std::size_t n_bands = 8;
    double dropout = 0.1;

    bool use_freq = true;
    PatchEmbedKind patch_embed = PatchEmbedKind::linear;
    bool interleave = false;
    AttentionScale scale = AttentionScale::model_dim;

    // Task heads; zero disables the head.
    std::size_t n_classes = 0;
    std::size_t forecast_context = 0;  // patches fed to the forecast head
    std::size_t forecast_horizon = 0;  // samples produced per channel

    std::uint64_t init_seed = 0;

    static ModelConfig tiny();
    static ModelConfig base();
    static ModelConfig large();
    static ModelConfig preset_named(const std::string& name);

    std::size_t dk() const { return head_dim_k ? head_dim_k : model_dim / heads; }
    std::size_t dv() const { return head_dim_v ? head_dim_v : model_dim / heads; }
    double attention_scale() const;
    void validate() const;

    /// Plain key=value text, one pair per line.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    static ModelConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

/// Builds every learnable tensor named by `cfg`, initialized from
/// Rng(cfg.init_seed): Xavier-uniform linear weights, zero biases,
/// unit/zero layer-norm affine, N(0, 0.02) positional table and [MASK].
ParameterStore init_parameters(const ModelConfig& cfg);

/// Expected (name, shape) list, in store order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

enum class EncoderAxis { time, channel };

/// The three additive terms of the input embedding, each [C*P, D].
/// freq is empty (zero tensor) when the frequency branch is ablated.
struct EmbeddingParts {
    Tensor patch;
    Tensor freq;
    Tensor pos;
};

struct AttentionCapture {
    EncoderAxis axis;
    std::size_t layer;
    std::vector<double> probs;  // [groups][heads][members][members]
    std::size_t groups, heads, members;
};

struct ForwardOptions {
    /// Token slots (channel * P + patch) replaced by [MASK] before the encoders.
    std::span<const std::size_t> mask_slots{};
    bool training = false;
    Rng* dropout_rng = nullptr;
    std::vector<AttentionCapture>* capture = nullptr;
};

class FomeModel {
public:
    explicit FomeModel(ModelConfig cfg);
    FomeModel(ModelConfig cfg, ParameterStore params);

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterStore& params() noexcept { return params_; }
    const ParameterStore& params() const noexcept { return params_; }

    EmbeddingParts embed_parts(const PatchGrid& grid, const BandPowerTensor& bands) const;
    /// E_input = E_patch + E_freq + E_pos, [C*P, D].
    Tensor embed(const PatchGrid& grid, const BandPowerTensor& bands) const;

    /// Multi-head attention along `axis` applied to x [C*P, D] as-is,
    /// including the output projection, without norm or residual.
    Tensor multi_head_attention(const Tensor& x, std::size_t layer, EncoderAxis axis, std::size_t C, std::size_t P,
                                std::vector<double>* probs = nullptr) const;

    /// One pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(.)).
    Tensor encoder_block(const Tensor& x, std::size_t layer, EncoderAxis axis, std::size_t C, std::size_t P,
                         const ForwardOptions& opts = {}) const;

    /// Embedding, masking, encoder stack and final norm -> [C*P, D].
    Tensor forward(const PatchGrid& grid, const BandPowerTensor& bands, const ForwardOptions& opts = {}) const;

    /// Per-slot linear D -> L: [C*P, L].
    Tensor head_reconstruct(const Tensor& e_final) const;
    /// Mean-pooled MLP D -> D/2 -> D/4 -> n_classes, pre-softmax [1, n_classes].
    Tensor head_classify_logits(const Tensor& e_final) const;
    /// Softmax of head_classify_logits.
    Tensor head_classify(const Tensor& e_final) const;
    /// Per channel flatten P*D -> horizon: [C, horizon].
    Tensor head_forecast(const Tensor& e_final, std::size_t C) const;

    /// Names of backbone tensors (everything except task heads).
    std::vector<std::string> backbone_names() const;

private:
    Tensor linear(const Tensor& x, const std::string& prefix) const;
    const Tensor& p(const std::string& name) const { return params_.at(name); }

    ModelConfig cfg_;
    ParameterStore params_;
};

}  // namespace fome
