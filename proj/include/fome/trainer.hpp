#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fome/model.hpp"
#include "fome/patch_grid.hpp"
#include "fome/rng.hpp"
#include "fome/spectral.hpp"

namespace fome {

enum class LossScope { masked_only, all };
enum class MaskMode { slot, column };

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-6;
    double weight_decay = 1e-2;
};

/// Linear warmup from init to peak, then cosine decay to final.
struct LrSchedule {
    double init = 2e-6;
    double peak = 5e-5;
    std::size_t warmup_steps = 10960;
    double final_lr = 5e-9;
    std::size_t total_steps = 1096000;

    /// Same shape over `total` steps, warmup keeping its fraction of the run.
    LrSchedule scaled_to(std::size_t total) const;
    void validate() const;
};

double lr_at(std::size_t step, const LrSchedule& schedule);
/// The same curve at a real-valued step, for limits around the warmup edge.
double lr_curve(double step, const LrSchedule& schedule);

struct TrainConfig {
    double mask_ratio = 0.40;
    std::size_t patches_per_sample = 15;
    std::size_t batch_size = 12;
    std::size_t grad_accum = 4;
    AdamWConfig adamw;
    LrSchedule lr;
    std::uint64_t seed = 0;
    LossScope loss_scope = LossScope::masked_only;
    MaskMode mask_mode = MaskMode::slot;
    BandScheme bands = BandScheme::eeg_default();
    Taper taper = Taper::none;

    std::size_t checkpoint_every = 500;
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Optimizer steps between validation passes during fine-tuning.
    std::size_t eval_every = 50;

    void validate() const;
};

/// First and second moment estimates per parameter, plus the step counter
/// used for bias correction.
struct AdamWState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::size_t step = 0;
};

/// One AdamW update of the named parameters (all when `names` is empty)
/// from their accumulated gradients. Decoupled decay comes first:
/// p <- p * (1 - lr*wd), then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Parameters without a gradient are treated as having a zero gradient.
void adamw_step(ParameterStore& params, AdamWState& state, double lr, const AdamWConfig& cfg,
                std::span<const std::string> names = {});

/// Masked token slots (channel * P + patch) of one sample, ascending.
struct MaskPlan {
    std::size_t channels = 0;
    std::size_t patches = 0;
    std::vector<std::size_t> slots;

    /// round(ratio * C * P) slots in slot mode; round(ratio * P) whole patch
    /// columns in column mode. Uniform without replacement.
    static MaskPlan draw(std::size_t channels, std::size_t patches, double ratio, Rng& rng,
                         MaskMode mode = MaskMode::slot);
};

std::size_t mask_count(std::size_t channels, std::size_t patches, double ratio);

/// One model input: a patch grid and its band powers.
struct Sample {
    PatchGrid grid;
    BandPowerTensor bands;
};

Sample make_sample(PatchGrid grid, const BandScheme& scheme, Taper taper = Taper::none);
/// Patches [first, first + count) of a sample, band powers included.
Sample slice_sample(const Sample& s, std::size_t first, std::size_t count);

/// Reconstruction MSE of one sample under `plan`, over the masked slots or
/// every slot depending on `scope`.
Tensor reconstruction_loss(const FomeModel& model, const Sample& sample, const MaskPlan& plan, LossScope scope,
                           Rng* dropout_rng = nullptr);

struct LossRecord {
    std::size_t step;
    double lr;
    double loss;
};

void write_loss_trace(const std::vector<LossRecord>& trace, std::ostream& os);

struct PretrainResult {
    std::vector<LossRecord> trace;
    std::vector<std::filesystem::path> checkpoints;
};

/// Masked-reconstruction pre-training for cfg.lr.total_steps optimizer steps.
/// Each optimizer step accumulates cfg.grad_accum micro-batches of
/// cfg.batch_size windows of cfg.patches_per_sample contiguous patches.
/// `on_step` (optional) is called after every optimizer step.
PretrainResult pretrain(FomeModel& model, std::span<const PatchGrid> corpus, const TrainConfig& cfg,
                        const std::function<void(const LossRecord&)>& on_step = {});

// ---------------------------------------------------------------- metrics

enum class TaskKind { classification, regression, imputation };

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
};

double f_beta(double precision, double recall, double beta);

struct MetricsReport {
    TaskKind task = TaskKind::classification;
    std::string tag;

    // classification
    std::size_t n_classes = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
    double accuracy = 0.0;
    std::vector<ClassScores> per_class;
    /// Mean over classes occurring in labels or predictions.
    ClassScores macro;
    /// Class 1 scores for binary tasks.
    std::optional<ClassScores> positive;

    // regression / imputation
    double mae = 0.0;
    double mse = 0.0;
    std::size_t n_values = 0;
    std::optional<double> baseline_mae;
    std::optional<double> baseline_mse;
    std::string baseline_name;
    bool no_missing = false;

    std::string to_json(int indent = 2) const;
};

MetricsReport classification_metrics(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                     std::size_t n_classes);
MetricsReport regression_metrics(std::span<const double> preds, std::span<const double> targets);

// ------------------------------------------------------------- fine-tuning

enum class Split { unassigned, train, val, test };

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Contiguous 6:2:2 blocks in record order. Records carrying an explicit
/// split keep it; ConfigError when a split would end up empty.
SplitIndices split_records(std::span<const Split> assigned);

enum class FinetuneMode { probe, full };

struct LabeledGrid {
    PatchGrid grid;
    std::size_t label = 0;
    Split split = Split::unassigned;
};

struct FinetuneResult {
    MetricsReport report;
    std::vector<LossRecord> trace;
};

/// Cross-entropy training of the classification head (probe) or of the whole
/// model (full), reported on the test split.
FinetuneResult finetune_classify(FomeModel& model, std::span<const LabeledGrid> dataset, const TrainConfig& cfg,
                                 FinetuneMode mode);

/// Predicted class of one sample.
std::size_t predict_class(const FomeModel& model, const Sample& sample);

struct ForecastRecord {
    PatchGrid grid;
    Split split = Split::unassigned;
};

/// Forecasting head training. Every window of model.config().forecast_context
/// patches followed by `horizon_patches` patches is one example. The report
/// carries the persistence baseline (last context patch repeated).
FinetuneResult finetune_forecast(FomeModel& model, std::span<const ForecastRecord> dataset, const TrainConfig& cfg,
                                 std::size_t horizon_patches, FinetuneMode mode);

/// A grid with ground truth plus a per-sample missing mask (C*P*L).
struct ImputeRecord {
    PatchGrid grid;
    std::vector<std::uint8_t> missing;
    Split split = Split::unassigned;
};

/// Slots holding at least one missing sample.
std::vector<std::size_t> missing_slots(const ImputeRecord& rec);

/// Masked-reconstruction training on the train records, then reconstruction
/// of every missing patch of the test records through the [MASK] path.
/// Scored only on missing patches against a per-channel mean-imputation
/// baseline. With cfg.lr.total_steps == 0 the model is evaluated as-is.
FinetuneResult impute(FomeModel& model, std::span<const ImputeRecord> dataset, const TrainConfig& cfg);

}  // namespace fome
