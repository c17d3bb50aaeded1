#include "fome/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "fome/error.hpp"

namespace fome {

namespace {

constexpr std::uint64_t kDropoutStream = 0x6a09e667f3bcc909ULL;

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::vector<std::string> names_with_prefix(const ParameterStore& store, const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& [name, t] : store.entries()) {
        if (starts_with(name, prefix)) out.push_back(name);
    }
    return out;
}

std::vector<std::string> trainable_names(const FomeModel& model, const std::string& head_prefix, FinetuneMode mode) {
    auto names = names_with_prefix(model.params(), head_prefix);
    if (mode == FinetuneMode::full) {
        auto backbone = model.backbone_names();
        names.insert(names.begin(), backbone.begin(), backbone.end());
    }
    return names;
}

void maybe_checkpoint(const FomeModel& model, const TrainConfig& cfg, const std::string& stem,
                      std::vector<std::filesystem::path>* written) {
    if (!cfg.checkpoint_dir) return;
    std::filesystem::create_directories(*cfg.checkpoint_dir);
    const auto path = *cfg.checkpoint_dir / (stem + ".fckp");
    write_checkpoint(model.params(), path);
    if (written != nullptr) written->push_back(path);
}

std::vector<double> zeroed_missing(const ImputeRecord& rec) {
    std::vector<double> v = rec.grid.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (rec.missing[i]) v[i] = 0.0;
    }
    return v;
}

/// Runs `micro_loss` for cfg.grad_accum micro-batches of cfg.batch_size
/// draws each, back-propagating every draw with weight 1/(B*A). Returns the
/// unweighted mean loss of the step.
template <typename DrawLoss>
double accumulate_step(const TrainConfig& cfg, DrawLoss&& draw_loss) {
    const double weight = 1.0 / static_cast<double>(cfg.batch_size * cfg.grad_accum);
    double total = 0.0;
    for (std::size_t a = 0; a < cfg.grad_accum; ++a) {
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            Tape tape;
            TapeScope scope(tape);
            const Tensor loss = draw_loss();
            total += loss.item();
            tape.backward(ops::scale(loss, weight));
        }
    }
    return total * weight;
}

}  // namespace

// ---------------------------------------------------------------- schedule

LrSchedule LrSchedule::scaled_to(std::size_t total) const {
    if (total == 0) throw ConfigError("schedule needs at least one step");
    LrSchedule s = *this;
    const double fraction = static_cast<double>(warmup_steps) / static_cast<double>(total_steps);
    s.total_steps = total;
    s.warmup_steps = std::min<std::size_t>(total - 1, static_cast<std::size_t>(std::llround(fraction * total)));
    return s;
}

void LrSchedule::validate() const {
    if (total_steps == 0) throw ConfigError("total_steps must be >= 1");
    if (warmup_steps >= total_steps) throw ConfigError("warmup_steps must be < total_steps");
    if (!(init >= 0 && peak > 0 && final_lr >= 0)) throw ConfigError("learning rates must be non-negative, peak > 0");
}

double lr_curve(double step, const LrSchedule& s) {
    const double warmup = static_cast<double>(s.warmup_steps), total = static_cast<double>(s.total_steps);
    if (step >= total) return s.final_lr;
    if (step <= warmup && s.warmup_steps > 0) {
        const double t = step / warmup;
        return (1.0 - t) * s.init + t * s.peak;
    }
    const double progress = (step - warmup) / (total - warmup);
    return s.final_lr + (s.peak - s.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(std::size_t step, const LrSchedule& s) { return lr_curve(static_cast<double>(step), s); }

void TrainConfig::validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
    if (patches_per_sample == 0) throw ConfigError("patches_per_sample must be >= 1");
    if (batch_size == 0 || grad_accum == 0) throw ConfigError("batch_size and grad_accum must be >= 1");
    if (!(adamw.beta1 >= 0 && adamw.beta1 < 1 && adamw.beta2 >= 0 && adamw.beta2 < 1)) {
        throw ConfigError("AdamW betas must lie in [0, 1)");
    }
    if (!(adamw.eps > 0) || !(adamw.weight_decay >= 0)) throw ConfigError("AdamW eps must be > 0, weight decay >= 0");
    if (checkpoint_every == 0 || eval_every == 0) throw ConfigError("checkpoint_every and eval_every must be >= 1");
    lr.validate();
    bands.validate();
}

// --------------------------------------------------------------- optimizer

void adamw_step(ParameterStore& params, AdamWState& state, double lr, const AdamWConfig& cfg,
                std::span<const std::string> names) {
    std::vector<Tensor*> targets;
    std::vector<const std::string*> target_names;
    if (names.empty()) {
        for (auto& [name, t] : params.entries()) {
            targets.push_back(&t);
            target_names.push_back(&name);
        }
    } else {
        for (const auto& name : names) {
            targets.push_back(&params.at(name));
            target_names.push_back(&name);
        }
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        for (double g : targets[i]->grad()) {
            if (!std::isfinite(g)) throw TrainError("non-finite gradient in parameter '" + *target_names[i] + "'");
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Tensor& p = *targets[i];
        auto& m = state.m[*target_names[i]];
        auto& v = state.v[*target_names[i]];
        m.resize(p.numel(), 0.0);
        v.resize(p.numel(), 0.0);
        const auto grad = p.grad();
        auto data = p.data();
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            data[k] *= decay;
            data[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
        }
    }
}

// ----------------------------------------------------------------- masking

std::size_t mask_count(std::size_t channels, std::size_t patches, double ratio) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(channels * patches)));
}

MaskPlan MaskPlan::draw(std::size_t channels, std::size_t patches, double ratio, Rng& rng, MaskMode mode) {
    MaskPlan plan{channels, patches, {}};
    const std::size_t units = mode == MaskMode::slot ? channels * patches : patches;
    const std::size_t k = mode == MaskMode::slot ? mask_count(channels, patches, ratio) : mask_count(1, patches, ratio);
    std::vector<std::size_t> pool(units);
    for (std::size_t i = 0; i < units; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(units - i));
        std::swap(pool[i], pool[j]);
    }
    if (mode == MaskMode::slot) {
        plan.slots.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < k; ++i) plan.slots.push_back(c * patches + pool[i]);
        }
    }
    std::sort(plan.slots.begin(), plan.slots.end());
    return plan;
}

// ----------------------------------------------------------------- samples

Sample make_sample(PatchGrid grid, const BandScheme& scheme, Taper taper) {
    BandPowerTensor bands = band_powers(grid, scheme, taper);
    return {std::move(grid), std::move(bands)};
}

Sample slice_sample(const Sample& s, std::size_t first, std::size_t count) {
    Sample out;
    out.grid = s.grid.slice_patches(first, count);
    out.bands.channels = s.bands.channels;
    out.bands.patches = count;
    out.bands.n_bands = s.bands.n_bands;
    out.bands.scheme = s.bands.scheme;
    const std::size_t B = s.bands.n_bands;
    out.bands.values.reserve(s.bands.channels * count * B);
    for (std::size_t c = 0; c < s.bands.channels; ++c) {
        const auto* row = s.bands.values.data() + (c * s.bands.patches + first) * B;
        out.bands.values.insert(out.bands.values.end(), row, row + count * B);
    }
    return out;
}

Tensor reconstruction_loss(const FomeModel& model, const Sample& sample, const MaskPlan& plan, LossScope scope,
                           Rng* dropout_rng) {
    ForwardOptions opts;
    opts.mask_slots = plan.slots;
    opts.training = dropout_rng != nullptr;
    opts.dropout_rng = dropout_rng;
    const Tensor recon = model.head_reconstruct(model.forward(sample.grid, sample.bands, opts));
    const std::size_t L = sample.grid.patch_len();
    if (scope == LossScope::all) {
        return ops::mse(recon, Tensor(recon.shape(), sample.grid.values()));
    }
    if (plan.slots.empty()) throw ConfigError("mask selects no slots; masked-only loss is undefined");
    std::vector<double> target;
    target.reserve(plan.slots.size() * L);
    for (std::size_t slot : plan.slots) {
        const auto* row = sample.grid.values().data() + slot * L;
        target.insert(target.end(), row, row + L);
    }
    return ops::mse(ops::gather_rows(recon, plan.slots), Tensor({plan.slots.size(), L}, std::move(target)));
}

void write_loss_trace(const std::vector<LossRecord>& trace, std::ostream& os) {
    os << "step,lr,loss\n" << std::setprecision(17);
    for (const auto& r : trace) os << r.step << ',' << r.lr << ',' << r.loss << '\n';
}

// --------------------------------------------------------------- pretrain

PretrainResult pretrain(FomeModel& model, std::span<const PatchGrid> corpus, const TrainConfig& cfg,
                        const std::function<void(const LossRecord&)>& on_step) {
    cfg.validate();
    if (corpus.empty()) throw ConfigError("pre-training corpus is empty");
    std::vector<Sample> samples;
    samples.reserve(corpus.size());
    for (const auto& g : corpus) {
        if (g.patches() == 0) throw ConfigError("corpus grid with zero patches");
        samples.push_back(make_sample(g, cfg.bands, cfg.taper));
    }

    Rng rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ kDropoutStream);
    AdamWState state;
    const auto names = trainable_names(model, "head.reconstruct.", FinetuneMode::full);
    PretrainResult result;

    const auto draw_loss = [&]() {
        const Sample& s = samples[rng.below(samples.size())];
        const std::size_t P = s.grid.patches();
        const std::size_t w = std::min(cfg.patches_per_sample, P);
        const std::size_t off = rng.below(P - w + 1);
        const Sample window = w == P ? s : slice_sample(s, off, w);
        const MaskPlan plan = MaskPlan::draw(window.grid.channels(), w, cfg.mask_ratio, rng, cfg.mask_mode);
        return reconstruction_loss(model, window, plan, cfg.loss_scope, &dropout_rng);
    };

    for (std::size_t step = 0; step < cfg.lr.total_steps; ++step) {
        const double lr = lr_at(step, cfg.lr);
        const double loss = accumulate_step(cfg, draw_loss);
        adamw_step(model.params(), state, lr, cfg.adamw, names);
        model.params().zero_grad();
        result.trace.push_back({step, lr, loss});
        if (on_step) on_step(result.trace.back());
        if ((step + 1) % cfg.checkpoint_every == 0) {
            maybe_checkpoint(model, cfg, "pretrain_step" + std::to_string(step + 1), &result.checkpoints);
        }
    }
    if (cfg.lr.total_steps % cfg.checkpoint_every != 0) maybe_checkpoint(model, cfg, "pretrain_final", &result.checkpoints);
    return result;
}

// ----------------------------------------------------------------- metrics

double f_beta(double precision, double recall, double beta) {
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    return denom == 0.0 ? 0.0 : (1.0 + b2) * precision * recall / denom;
}

MetricsReport classification_metrics(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                     std::size_t n_classes) {
    if (preds.size() != labels.size()) {
        throw ShapeError(std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw EmptyError("no predictions to score");
    if (n_classes == 0) throw ConfigError("n_classes must be >= 1");
    MetricsReport r;
    r.task = TaskKind::classification;
    r.tag = "classification";
    r.n_classes = n_classes;
    r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] >= n_classes) throw DataError("label " + std::to_string(labels[i]) + " >= n_classes");
        if (preds[i] >= n_classes) throw DataError("prediction " + std::to_string(preds[i]) + " >= n_classes");
        ++r.confusion[labels[i]][preds[i]];
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < n_classes; ++c) correct += r.confusion[c][c];
    r.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

    std::size_t present = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t row = 0, col = 0;
        for (std::size_t k = 0; k < n_classes; ++k) {
            row += r.confusion[c][k];
            col += r.confusion[k][c];
        }
        const double tp = static_cast<double>(r.confusion[c][c]);
        const double fp = static_cast<double>(col) - tp;
        const double fn = static_cast<double>(row) - tp;
        ClassScores s;
        if (row == 0 && col == 0) {
            s = {1.0, 1.0, 1.0, 1.0};
        } else {
            s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
            s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
            s.f1 = f_beta(s.precision, s.recall, 1.0);
            s.f2 = f_beta(s.precision, s.recall, 2.0);
            ++present;
            r.macro.precision += s.precision;
            r.macro.recall += s.recall;
            r.macro.f1 += s.f1;
            r.macro.f2 += s.f2;
        }
        r.per_class.push_back(s);
    }
    const double n = static_cast<double>(present);
    r.macro = {r.macro.precision / n, r.macro.recall / n, r.macro.f1 / n, r.macro.f2 / n};
    if (n_classes == 2) r.positive = r.per_class[1];
    return r;
}

MetricsReport regression_metrics(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size()) {
        throw ShapeError(std::to_string(preds.size()) + " predictions for " + std::to_string(targets.size()) + " targets");
    }
    MetricsReport r;
    r.task = TaskKind::regression;
    r.tag = "regression";
    r.n_values = preds.size();
    if (preds.empty()) return r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - targets[i];
        r.mae += std::abs(d);
        r.mse += d * d;
    }
    r.mae /= static_cast<double>(preds.size());
    r.mse /= static_cast<double>(preds.size());
    return r;
}

std::string MetricsReport::to_json(int indent) const {
    using nlohmann::json;
    const auto scores = [](const ClassScores& s) {
        return json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"f2", s.f2}};
    };
    json j;
    j["tag"] = tag;
    if (task == TaskKind::classification) {
        j["task"] = "classification";
        j["n_classes"] = n_classes;
        j["confusion"] = confusion;
        j["accuracy"] = accuracy;
        j["macro"] = scores(macro);
        json per = json::array();
        for (const auto& s : per_class) per.push_back(scores(s));
        j["per_class"] = per;
        if (positive) j["positive_class"] = scores(*positive);
    } else {
        j["task"] = task == TaskKind::regression ? "regression" : "imputation";
        j["mae"] = mae;
        j["mse"] = mse;
        j["n_values"] = n_values;
        if (baseline_mae) {
            j["baseline"] = {{"name", baseline_name}, {"mae", *baseline_mae}, {"mse", *baseline_mse}};
        }
        if (task == TaskKind::imputation) j["no_missing"] = no_missing;
    }
    return j.dump(indent);
}

// ------------------------------------------------------------- fine-tuning

SplitIndices split_records(std::span<const Split> assigned) {
    SplitIndices out;
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < assigned.size(); ++i) {
        switch (assigned[i]) {
            case Split::train: out.train.push_back(i); break;
            case Split::val: out.val.push_back(i); break;
            case Split::test: out.test.push_back(i); break;
            case Split::unassigned: open.push_back(i); break;
        }
    }
    const std::size_t n = open.size();
    const std::size_t a = n * 6 / 10, b = n * 8 / 10;
    for (std::size_t k = 0; k < n; ++k) {
        (k < a ? out.train : k < b ? out.val : out.test).push_back(open[k]);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    if (out.train.empty() || out.val.empty() || out.test.empty()) {
        throw ConfigError("6:2:2 split of " + std::to_string(assigned.size()) +
                          " records leaves a split empty (need at least 3 records)");
    }
    return out;
}

std::size_t predict_class(const FomeModel& model, const Sample& sample) {
    const Tensor logits = model.head_classify_logits(model.forward(sample.grid, sample.bands));
    const auto v = logits.data();
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

FinetuneResult finetune_classify(FomeModel& model, std::span<const LabeledGrid> dataset, const TrainConfig& cfg,
                                 FinetuneMode mode) {
    cfg.validate();
    const std::size_t K = model.config().n_classes;
    if (K == 0) throw ConfigError("model has no classification head (n_classes = 0)");
    if (dataset.empty()) throw ConfigError("classification dataset is empty");
    std::vector<Split> assigned;
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].label >= K) {
            throw DataError("record " + std::to_string(i) + " has label " + std::to_string(dataset[i].label) +
                            " >= n_classes " + std::to_string(K));
        }
        assigned.push_back(dataset[i].split);
        samples.push_back(make_sample(dataset[i].grid, cfg.bands, cfg.taper));
    }
    const SplitIndices split = split_records(assigned);

    // Frozen backbone: encode once, train the head on cached features.
    std::vector<Tensor> features;
    if (mode == FinetuneMode::probe) {
        features.reserve(samples.size());
        for (const auto& s : samples) features.push_back(model.forward(s.grid, s.bands));
    }
    const auto logits_of = [&](std::size_t i, Rng* drop) {
        if (mode == FinetuneMode::probe) return model.head_classify_logits(features[i]);
        ForwardOptions opts;
        opts.training = drop != nullptr;
        opts.dropout_rng = drop;
        return model.head_classify_logits(model.forward(samples[i].grid, samples[i].bands, opts));
    };
    const auto evaluate = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::size_t> preds, labels;
        for (std::size_t i : idx) {
            const Tensor logits = logits_of(i, nullptr);
            const auto v = logits.data();
            preds.push_back(static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()));
            labels.push_back(dataset[i].label);
        }
        return classification_metrics(preds, labels, K);
    };

    Rng rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ kDropoutStream);
    AdamWState state;
    const auto names = trainable_names(model, "head.classify.", mode);
    FinetuneResult result;
    double best_val = -1.0;
    for (std::size_t step = 0; step < cfg.lr.total_steps; ++step) {
        const double lr = lr_at(step, cfg.lr);
        const double loss = accumulate_step(cfg, [&]() {
            const std::size_t i = split.train[rng.below(split.train.size())];
            return ops::cross_entropy(logits_of(i, &dropout_rng), dataset[i].label);
        });
        adamw_step(model.params(), state, lr, cfg.adamw, names);
        model.params().zero_grad();
        result.trace.push_back({step, lr, loss});
        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.lr.total_steps) {
            const double val = evaluate(split.val).accuracy;
            if (val > best_val) {
                best_val = val;
                maybe_checkpoint(model, cfg, "classify_best", nullptr);
            }
        }
        if ((step + 1) % cfg.checkpoint_every == 0) {
            maybe_checkpoint(model, cfg, "classify_step" + std::to_string(step + 1), nullptr);
        }
    }
    result.report = evaluate(split.test);
    result.report.tag = mode == FinetuneMode::probe ? "classify-probe" : "classify-full";
    return result;
}

FinetuneResult finetune_forecast(FomeModel& model, std::span<const ForecastRecord> dataset, const TrainConfig& cfg,
                                 std::size_t horizon_patches, FinetuneMode mode) {
    cfg.validate();
    const auto& mc = model.config();
    const std::size_t ctx = mc.forecast_context, L = mc.patch_len;
    if (horizon_patches == 0) throw ConfigError("horizon_patches must be >= 1");
    if (mc.forecast_horizon != horizon_patches * L) {
        throw ConfigError("model forecast_horizon " + std::to_string(mc.forecast_horizon) + " != " +
                          std::to_string(horizon_patches) + " patches x " + std::to_string(L) + " samples");
    }
    if (dataset.empty()) throw ConfigError("forecast dataset is empty");

    std::vector<Split> assigned;
    std::vector<Sample> records;
    for (const auto& r : dataset) {
        assigned.push_back(r.split);
        records.push_back(make_sample(r.grid, cfg.bands, cfg.taper));
    }
    const SplitIndices split = split_records(assigned);

    struct Window {
        Sample input;
        std::vector<double> target;      // [C, H]
        std::vector<double> persistence;  // [C, H]
        std::size_t channels;
        Tensor feature;
    };
    const auto windows_of = [&](const std::vector<std::size_t>& recs) {
        std::vector<Window> out;
        for (std::size_t r : recs) {
            const Sample& s = records[r];
            const std::size_t P = s.grid.patches(), C = s.grid.channels();
            if (P < ctx + horizon_patches) continue;
            for (std::size_t off = 0; off + ctx + horizon_patches <= P; ++off) {
                Window w{slice_sample(s, off, ctx), {}, {}, C, {}};
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t h = 0; h < horizon_patches; ++h) {
                        const auto future = s.grid.patch(c, off + ctx + h);
                        const auto last = s.grid.patch(c, off + ctx - 1);
                        w.target.insert(w.target.end(), future.begin(), future.end());
                        w.persistence.insert(w.persistence.end(), last.begin(), last.end());
                    }
                }
                if (mode == FinetuneMode::probe) w.feature = model.forward(w.input.grid, w.input.bands);
                out.push_back(std::move(w));
            }
        }
        return out;
    };
    const auto train = windows_of(split.train);
    const auto test = windows_of(split.test);
    if (train.empty() || test.empty()) {
        throw ConfigError("forecast needs records of at least " + std::to_string(ctx + horizon_patches) +
                          " patches in the train and test splits");
    }

    const auto predict = [&](const Window& w, Rng* drop) {
        if (mode == FinetuneMode::probe) return model.head_forecast(w.feature, w.channels);
        ForwardOptions opts;
        opts.training = drop != nullptr;
        opts.dropout_rng = drop;
        return model.head_forecast(model.forward(w.input.grid, w.input.bands, opts), w.channels);
    };

    Rng rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ kDropoutStream);
    AdamWState state;
    const auto names = trainable_names(model, "head.forecast.", mode);
    FinetuneResult result;
    for (std::size_t step = 0; step < cfg.lr.total_steps; ++step) {
        const double lr = lr_at(step, cfg.lr);
        const double loss = accumulate_step(cfg, [&]() {
            const Window& w = train[rng.below(train.size())];
            const Tensor pred = predict(w, &dropout_rng);
            return ops::mse(pred, Tensor(pred.shape(), w.target));
        });
        adamw_step(model.params(), state, lr, cfg.adamw, names);
        model.params().zero_grad();
        result.trace.push_back({step, lr, loss});
        if ((step + 1) % cfg.checkpoint_every == 0) {
            maybe_checkpoint(model, cfg, "forecast_step" + std::to_string(step + 1), nullptr);
        }
    }

    std::vector<double> preds, targets, persistence;
    for (const auto& w : test) {
        const Tensor pred = predict(w, nullptr);
        preds.insert(preds.end(), pred.data().begin(), pred.data().end());
        targets.insert(targets.end(), w.target.begin(), w.target.end());
        persistence.insert(persistence.end(), w.persistence.begin(), w.persistence.end());
    }
    result.report = regression_metrics(preds, targets);
    const auto base = regression_metrics(persistence, targets);
    result.report.tag = "forecast-" + std::to_string(horizon_patches);
    result.report.baseline_name = "persistence";
    result.report.baseline_mae = base.mae;
    result.report.baseline_mse = base.mse;
    return result;
}

std::vector<std::size_t> missing_slots(const ImputeRecord& rec) {
    const std::size_t L = rec.grid.patch_len(), N = rec.grid.channels() * rec.grid.patches();
    if (rec.missing.size() != N * L) {
        throw ShapeError("missing mask has " + std::to_string(rec.missing.size()) + " entries for " +
                         std::to_string(N * L) + " samples");
    }
    std::vector<std::size_t> slots;
    for (std::size_t s = 0; s < N; ++s) {
        const auto* m = rec.missing.data() + s * L;
        if (std::any_of(m, m + L, [](std::uint8_t x) { return x != 0; })) slots.push_back(s);
    }
    return slots;
}

FinetuneResult impute(FomeModel& model, std::span<const ImputeRecord> dataset, const TrainConfig& cfg) {
    if (cfg.lr.total_steps > 0) cfg.validate();
    if (dataset.empty()) throw ConfigError("imputation dataset is empty");

    std::vector<Split> assigned;
    std::vector<Sample> inputs;
    std::vector<std::vector<std::size_t>> gaps;
    for (const auto& r : dataset) {
        gaps.push_back(missing_slots(r));
        assigned.push_back(r.split);
        inputs.push_back(make_sample(PatchGrid(r.grid.channels(), r.grid.patches(), r.grid.patch_len(), r.grid.rate_hz(),
                                               zeroed_missing(r)),
                                     cfg.bands, cfg.taper));
    }
    const SplitIndices split = split_records(assigned);
    const std::size_t L = model.config().patch_len;

    Rng rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ kDropoutStream);
    AdamWState state;
    const auto names = trainable_names(model, "head.reconstruct.", FinetuneMode::full);
    FinetuneResult result;
    for (std::size_t step = 0; step < cfg.lr.total_steps; ++step) {
        const double lr = lr_at(step, cfg.lr);
        const double loss = accumulate_step(cfg, [&]() {
            const std::size_t i = split.train[rng.below(split.train.size())];
            const Sample& s = inputs[i];
            const MaskPlan drawn = MaskPlan::draw(s.grid.channels(), s.grid.patches(), cfg.mask_ratio, rng, cfg.mask_mode);
            // Genuinely missing patches are masked too but carry no target.
            std::vector<std::size_t> masked;
            std::set_union(drawn.slots.begin(), drawn.slots.end(), gaps[i].begin(), gaps[i].end(),
                           std::back_inserter(masked));
            std::vector<std::size_t> scored;
            std::set_difference(drawn.slots.begin(), drawn.slots.end(), gaps[i].begin(), gaps[i].end(),
                                std::back_inserter(scored));
            ForwardOptions opts;
            opts.mask_slots = masked;
            opts.training = true;
            opts.dropout_rng = &dropout_rng;
            const Tensor recon = model.head_reconstruct(model.forward(s.grid, s.bands, opts));
            if (scored.empty()) return ops::scale(ops::sum(recon), 0.0);
            std::vector<double> target;
            for (std::size_t slot : scored) {
                const auto* row = dataset[i].grid.values().data() + slot * L;
                target.insert(target.end(), row, row + L);
            }
            return ops::mse(ops::gather_rows(recon, scored), Tensor({scored.size(), L}, std::move(target)));
        });
        adamw_step(model.params(), state, lr, cfg.adamw, names);
        model.params().zero_grad();
        result.trace.push_back({step, lr, loss});
        if ((step + 1) % cfg.checkpoint_every == 0) {
            maybe_checkpoint(model, cfg, "impute_step" + std::to_string(step + 1), nullptr);
        }
    }

    std::vector<double> preds, targets, baseline;
    for (std::size_t i : split.test) {
        if (gaps[i].empty()) continue;
        const ImputeRecord& rec = dataset[i];
        const std::size_t C = rec.grid.channels(), P = rec.grid.patches();
        ForwardOptions opts;
        opts.mask_slots = gaps[i];
        const Tensor recon = model.head_reconstruct(model.forward(inputs[i].grid, inputs[i].bands, opts));
        std::vector<double> channel_mean(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t k = c * P * L; k < (c + 1) * P * L; ++k) {
                if (!rec.missing[k]) {
                    sum += rec.grid.values()[k];
                    ++n;
                }
            }
            channel_mean[c] = n ? sum / static_cast<double>(n) : 0.0;
        }
        for (std::size_t slot : gaps[i]) {
            const auto* truth = rec.grid.values().data() + slot * L;
            const auto* pred = recon.data().data() + slot * L;
            preds.insert(preds.end(), pred, pred + L);
            targets.insert(targets.end(), truth, truth + L);
            baseline.insert(baseline.end(), L, channel_mean[slot / P]);
        }
    }
    result.report = regression_metrics(preds, targets);
    const auto base = regression_metrics(baseline, targets);
    result.report.task = TaskKind::imputation;
    result.report.tag = "impute";
    result.report.no_missing = preds.empty();
    result.report.baseline_name = "mean-imputation";
    result.report.baseline_mae = base.mae;
    result.report.baseline_mse = base.mse;
    return result;
}

}  // namespace fome
