// Python bindings for the fome core library.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fome/checkpoint.hpp"
#include "fome/error.hpp"
#include "fome/model.hpp"
#include "fome/patch_grid.hpp"
#include "fome/preprocess.hpp"
#include "fome/recording.hpp"
#include "fome/spectral.hpp"
#include "fome/trainer.hpp"

namespace py = pybind11;
using namespace fome;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const DoubleArray& a) { return {a.data(), a.data() + a.size()}; }

DoubleArray to_array(std::span<const double> v, std::vector<py::ssize_t> shape) {
    DoubleArray out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Recording recording_from(const DoubleArray& data, double rate, std::vector<std::string> labels = {}) {
    if (data.ndim() != 2) throw ShapeError("recording array must be 2-D (channels, samples)");
    return Recording(static_cast<std::size_t>(data.shape(0)), static_cast<std::size_t>(data.shape(1)), rate,
                     to_vector(data), std::move(labels));
}

DoubleArray recording_array(const Recording& r) {
    return to_array(r.data(), {static_cast<py::ssize_t>(r.channels()), static_cast<py::ssize_t>(r.samples())});
}

PatchGrid grid_from(const DoubleArray& g, double rate) {
    if (g.ndim() != 3) throw ShapeError("patch grid array must be 3-D (channels, patches, patch_len)");
    return PatchGrid(static_cast<std::size_t>(g.shape(0)), static_cast<std::size_t>(g.shape(1)),
                     static_cast<std::size_t>(g.shape(2)), rate, to_vector(g));
}

DoubleArray grid_array(const PatchGrid& g) {
    return to_array(g.values(), {static_cast<py::ssize_t>(g.channels()), static_cast<py::ssize_t>(g.patches()),
                                 static_cast<py::ssize_t>(g.patch_len())});
}

DoubleArray tensor_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    return to_array(t.data(), shape);
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

Sample sample_from(const DoubleArray& grid, double rate) { return make_sample(grid_from(grid, rate), BandScheme::eeg_default()); }

TrainConfig train_config(std::size_t steps, std::size_t batch, std::size_t accum, double peak, double init,
                         double final_lr, std::uint64_t seed, double mask_ratio, std::size_t patches_per_sample,
                         bool loss_all, const std::string& mask_mode) {
    TrainConfig cfg;
    cfg.lr = cfg.lr.scaled_to(steps);
    if (peak > 0) cfg.lr.peak = peak;
    if (init >= 0) cfg.lr.init = init;
    if (final_lr >= 0) cfg.lr.final_lr = final_lr;
    cfg.batch_size = batch;
    cfg.grad_accum = accum;
    cfg.seed = seed;
    cfg.mask_ratio = mask_ratio;
    cfg.patches_per_sample = patches_per_sample;
    cfg.loss_scope = loss_all ? LossScope::all : LossScope::masked_only;
    if (mask_mode != "slot" && mask_mode != "column") throw ConfigError("mask_mode must be slot|column");
    cfg.mask_mode = mask_mode == "column" ? MaskMode::column : MaskMode::slot;
    cfg.eval_every = std::max<std::size_t>(1, std::min<std::size_t>(50, steps));
    cfg.validate();
    return cfg;
}

Split split_from(const std::string& s) {
    if (s.empty()) return Split::unassigned;
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("split must be train, val, test or empty");
}

#define TRAIN_ARGS                                                                                           \
    py::arg("steps"), py::arg("batch_size") = 12, py::arg("grad_accum") = 4, py::arg("lr_peak") = 0.0,        \
        py::arg("lr_init") = -1.0, py::arg("lr_final") = -1.0, py::arg("seed") = 0, py::arg("mask_ratio") = 0.4, \
        py::arg("patches_per_sample") = 15, py::arg("loss_all") = false, py::arg("mask_mode") = "slot"

}  // namespace

PYBIND11_MODULE(_fome, m) {
    m.doc() = "EEG foundation model core: preprocessing, spectra, model, training";

    auto base = py::register_exception<Error>(m, "FomeError", PyExc_RuntimeError);
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<SpecError>(m, "SpecError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<EmptyError>(m, "EmptyError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
    py::register_exception<IndexError>(m, "IndexError", base.ptr());
    py::register_exception<TrainError>(m, "TrainError", base.ptr());

    // ------------------------------------------------------------ signals
    m.def(
        "generate_synthetic",
        [](std::size_t channels, const std::vector<std::tuple<std::size_t, double, double, double>>& tones,
           double noise_std, double duration_s, double sample_rate_hz, std::uint64_t seed) {
            SyntheticSpec spec{channels, {}, noise_std, duration_s, sample_rate_hz, seed};
            for (const auto& [c, f, a, p] : tones) spec.components.push_back({c, f, a, p});
            return recording_array(generate_synthetic(spec));
        },
        "Sum of (channel, freq_hz, amplitude, phase_rad) tones plus gaussian noise, shape (C, T).",
        py::arg("channels"), py::arg("tones"), py::arg("noise_std") = 0.0, py::arg("duration_s") = 1.0,
        py::arg("sample_rate_hz") = 250.0, py::arg("seed") = 0);

    m.def(
        "write_recording",
        [](const std::filesystem::path& path, const DoubleArray& data, double rate, std::vector<std::string> labels) {
            write_recording(recording_from(data, rate, std::move(labels)), path, format_for_path(path));
        },
        "Write FEEG (or CSV for a .csv path).", py::arg("path"), py::arg("data"), py::arg("sample_rate_hz"),
        py::arg("labels") = std::vector<std::string>{});

    m.def(
        "read_recording",
        [](const std::filesystem::path& path) {
            const Recording r = read_recording(path, format_for_path(path));
            return py::make_tuple(recording_array(r), r.sample_rate_hz(), r.channel_labels());
        },
        "Read FEEG or CSV; returns (data, sample_rate_hz, labels).", py::arg("path"));

    m.def(
        "write_patch_grid",
        [](const std::filesystem::path& path, const DoubleArray& grid, double rate) {
            write_patch_grid(grid_from(grid, rate), path);
        },
        py::arg("path"), py::arg("grid"), py::arg("sample_rate_hz"));

    m.def(
        "read_patch_grid",
        [](const std::filesystem::path& path) {
            const PatchGrid g = read_patch_grid(path);
            return py::make_tuple(grid_array(g), g.rate_hz());
        },
        "Read a FEGP file; returns (grid, sample_rate_hz).", py::arg("path"));

    // ---------------------------------------------------------- preprocess
    m.def(
        "preprocess",
        [](const DoubleArray& data, double rate, double notch_hz, double band_lo_hz, double band_hi_hz,
           double target_rate_hz, std::size_t window_len_samples, std::size_t patch_len, double ema_alpha,
           unsigned threads) {
            PreprocessConfig cfg;
            cfg.notch_hz = notch_hz;
            cfg.band_lo_hz = band_lo_hz;
            cfg.band_hi_hz = band_hi_hz;
            cfg.target_rate_hz = target_rate_hz;
            cfg.window_len_samples = window_len_samples;
            cfg.patch_len = patch_len;
            cfg.ema_alpha = ema_alpha;
            cfg.threads = threads;
            cfg.validate();
            return grid_array(preprocess_pipeline(recording_from(data, rate), cfg));
        },
        "Notch, band-pass, resample, detrend, window, standardize and patch; returns (C, P, L).",
        py::arg("data"), py::arg("sample_rate_hz"), py::arg("notch_hz") = 50.0, py::arg("band_lo_hz") = 0.5,
        py::arg("band_hi_hz") = 100.5, py::arg("target_rate_hz") = 250.0, py::arg("window_len_samples") = 1500,
        py::arg("patch_len") = 0, py::arg("ema_alpha") = 0.05, py::arg("threads") = 1);

    m.def(
        "notch_filter",
        [](const DoubleArray& data, double rate, double f0, double q) {
            return recording_array(notch_filter(recording_from(data, rate), f0, q));
        },
        py::arg("data"), py::arg("sample_rate_hz"), py::arg("f0"), py::arg("q") = 35.0);
    m.def(
        "bandpass_filter",
        [](const DoubleArray& data, double rate, double lo, double hi) {
            return recording_array(bandpass_filter(recording_from(data, rate), lo, hi));
        },
        py::arg("data"), py::arg("sample_rate_hz"), py::arg("lo_hz"), py::arg("hi_hz"));
    m.def(
        "resample",
        [](const DoubleArray& data, double rate, double target) {
            return recording_array(resample(recording_from(data, rate), target));
        },
        py::arg("data"), py::arg("sample_rate_hz"), py::arg("target_hz"));
    m.def(
        "detrend", [](const DoubleArray& data, double rate) { return recording_array(detrend(recording_from(data, rate))); },
        py::arg("data"), py::arg("sample_rate_hz") = 250.0);

    // ------------------------------------------------------------ spectral
    m.def(
        "psd",
        [](const DoubleArray& patch, double rate, bool hann) {
            const auto v = to_vector(patch);
            const auto p = psd(v, rate, hann ? Taper::hann : Taper::none);
            return to_array(p, {static_cast<py::ssize_t>(p.size())});
        },
        "One-sided |X_k|^2 / T over bins 0..L/2.", py::arg("patch"), py::arg("sample_rate_hz"), py::arg("hann") = false);
    m.def(
        "band_powers",
        [](const DoubleArray& grid, double rate, bool hann) {
            const auto t = band_powers(grid_from(grid, rate), BandScheme::eeg_default(), hann ? Taper::hann : Taper::none);
            return to_array(t.values, {static_cast<py::ssize_t>(t.channels), static_cast<py::ssize_t>(t.patches),
                                       static_cast<py::ssize_t>(t.n_bands)});
        },
        "log10(band PSD sum + 1) per channel, patch and band, shape (C, P, 8).", py::arg("grid"),
        py::arg("sample_rate_hz") = 250.0, py::arg("hann") = false);
    m.def("band_names", [] {
        std::vector<std::string> names;
        for (const auto& b : BandScheme::eeg_default().bands) names.push_back(b.name);
        return names;
    });

    // --------------------------------------------------------------- model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init([](const std::string& preset) { return ModelConfig::preset_named(preset); }),
             py::arg("preset") = "tiny")
        .def_static("from_text", &ModelConfig::from_text)
        .def("to_text", &ModelConfig::to_text)
        .def("validate", &ModelConfig::validate)
        .def_readwrite("patch_len", &ModelConfig::patch_len)
        .def_readwrite("model_dim", &ModelConfig::model_dim)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
        .def_readwrite("temporal_layers", &ModelConfig::temporal_layers)
        .def_readwrite("channel_layers", &ModelConfig::channel_layers)
        .def_readwrite("max_patches", &ModelConfig::max_patches)
        .def_readwrite("dropout", &ModelConfig::dropout)
        .def_readwrite("use_freq", &ModelConfig::use_freq)
        .def_readwrite("interleave", &ModelConfig::interleave)
        .def_readwrite("n_classes", &ModelConfig::n_classes)
        .def_readwrite("forecast_context", &ModelConfig::forecast_context)
        .def_readwrite("forecast_horizon", &ModelConfig::forecast_horizon)
        .def_readwrite("init_seed", &ModelConfig::init_seed)
        .def_property(
            "conv_embed", [](const ModelConfig& c) { return c.patch_embed == PatchEmbedKind::conv; },
            [](ModelConfig& c, bool v) { c.patch_embed = v ? PatchEmbedKind::conv : PatchEmbedKind::linear; })
        .def_property(
            "scale_dk", [](const ModelConfig& c) { return c.scale == AttentionScale::head_dim; },
            [](ModelConfig& c, bool v) { c.scale = v ? AttentionScale::head_dim : AttentionScale::model_dim; })
        .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(" + c.preset + ")"; });

    py::class_<FomeModel>(m, "Model")
        .def(py::init<ModelConfig>(), py::arg("config"))
        .def_property_readonly("config", &FomeModel::config)
        .def("parameter_count", [](const FomeModel& mdl) { return mdl.params().parameter_count(); })
        .def("parameters",
             [](const FomeModel& mdl) {
                 py::dict out;
                 for (const auto& [name, t] : mdl.params().entries()) out[py::str(name)] = tensor_array(t);
                 return out;
             })
        .def(
            "encode",
            [](const FomeModel& mdl, const DoubleArray& grid, double rate, std::vector<std::size_t> mask_slots) {
                const Sample s = sample_from(grid, rate);
                ForwardOptions opts;
                opts.mask_slots = mask_slots;
                return tensor_array(mdl.forward(s.grid, s.bands, opts));
            },
            "Final token embeddings (C*P, D); masked slots use the [MASK] token.", py::arg("grid"),
            py::arg("sample_rate_hz") = 250.0, py::arg("mask_slots") = std::vector<std::size_t>{})
        .def(
            "reconstruct",
            [](const FomeModel& mdl, const DoubleArray& grid, double rate, std::vector<std::size_t> mask_slots) {
                const Sample s = sample_from(grid, rate);
                ForwardOptions opts;
                opts.mask_slots = mask_slots;
                return tensor_array(mdl.head_reconstruct(mdl.forward(s.grid, s.bands, opts)));
            },
            "Reconstructed patches (C*P, L).", py::arg("grid"), py::arg("sample_rate_hz") = 250.0,
            py::arg("mask_slots") = std::vector<std::size_t>{})
        .def(
            "classify",
            [](const FomeModel& mdl, const DoubleArray& grid, double rate) {
                const Sample s = sample_from(grid, rate);
                return tensor_array(mdl.head_classify(mdl.forward(s.grid, s.bands)));
            },
            "Class probabilities (1, n_classes).", py::arg("grid"), py::arg("sample_rate_hz") = 250.0)
        .def(
            "forecast",
            [](const FomeModel& mdl, const DoubleArray& grid, double rate) {
                const Sample s = sample_from(grid, rate);
                return tensor_array(mdl.head_forecast(mdl.forward(s.grid, s.bands), s.grid.channels()));
            },
            "Forecast samples (C, horizon).", py::arg("grid"), py::arg("sample_rate_hz") = 250.0)
        .def(
            "save",
            [](const FomeModel& mdl, const std::filesystem::path& path) {
                write_checkpoint(mdl.params(), path);
                mdl.config().save(path.string() + ".config");
            },
            "Write the checkpoint and its <path>.config sidecar.", py::arg("path"))
        .def_static(
            "load",
            [](const std::filesystem::path& path) {
                FomeModel mdl(ModelConfig::load(path.string() + ".config"));
                load_checkpoint(mdl.params(), read_checkpoint(path));
                return mdl;
            },
            py::arg("path"));

    // ------------------------------------------------------------ training
    m.def("lr_at",
          [](std::size_t step, double init, double peak, std::size_t warmup, double final_lr, std::size_t total) {
              LrSchedule s{init, peak, warmup, final_lr, total};
              s.validate();
              return lr_at(step, s);
          },
          py::arg("step"), py::arg("init") = 2e-6, py::arg("peak") = 5e-5, py::arg("warmup_steps") = 10960,
          py::arg("final_lr") = 5e-9, py::arg("total_steps") = 1096000);

    m.def(
        "mask_plan",
        [](std::size_t channels, std::size_t patches, double ratio, std::uint64_t seed, const std::string& mode) {
            Rng rng(seed);
            return MaskPlan::draw(channels, patches, ratio, rng, mode == "column" ? MaskMode::column : MaskMode::slot)
                .slots;
        },
        "Sorted masked slots (channel * P + patch).", py::arg("channels"), py::arg("patches"), py::arg("ratio") = 0.4,
        py::arg("seed") = 0, py::arg("mode") = "slot");

    m.def(
        "pretrain",
        [](FomeModel& model, const std::vector<DoubleArray>& grids, double rate, std::size_t steps,
           std::size_t batch, std::size_t accum, double peak, double init, double final_lr, std::uint64_t seed,
           double mask_ratio, std::size_t pps, bool loss_all, const std::string& mask_mode) {
            const TrainConfig cfg =
                train_config(steps, batch, accum, peak, init, final_lr, seed, mask_ratio, pps, loss_all, mask_mode);
            std::vector<PatchGrid> corpus;
            for (const auto& g : grids) corpus.push_back(grid_from(g, rate));
            py::gil_scoped_release release;
            const auto result = pretrain(model, corpus, cfg);
            std::vector<double> losses;
            for (const auto& r : result.trace) losses.push_back(r.loss);
            return losses;
        },
        "Masked-reconstruction pre-training; returns the per-step loss.", py::arg("model"), py::arg("grids"),
        py::arg("sample_rate_hz") = 250.0, TRAIN_ARGS);

    m.def(
        "finetune_classify",
        [](FomeModel& model, const std::vector<DoubleArray>& grids, const std::vector<std::size_t>& labels,
           const std::vector<std::string>& splits, const std::string& mode, double rate, std::size_t steps,
           std::size_t batch, std::size_t accum, double peak, double init, double final_lr, std::uint64_t seed,
           double mask_ratio, std::size_t pps, bool loss_all, const std::string& mask_mode) {
            if (grids.size() != labels.size()) throw ShapeError("one label per grid required");
            if (!splits.empty() && splits.size() != grids.size()) throw ShapeError("one split per grid required");
            if (mode != "probe" && mode != "full") throw ConfigError("mode must be probe|full");
            const TrainConfig cfg =
                train_config(steps, batch, accum, peak, init, final_lr, seed, mask_ratio, pps, loss_all, mask_mode);
            std::vector<LabeledGrid> data;
            for (std::size_t i = 0; i < grids.size(); ++i) {
                data.push_back({grid_from(grids[i], rate), labels[i], splits.empty() ? Split::unassigned : split_from(splits[i])});
            }
            std::string report;
            {
                py::gil_scoped_release release;
                report = finetune_classify(model, data, cfg, mode == "probe" ? FinetuneMode::probe : FinetuneMode::full)
                             .report.to_json();
            }
            return parse_json(report);
        },
        "Classification fine-tuning; returns the test-split metrics report.", py::arg("model"), py::arg("grids"),
        py::arg("labels"), py::arg("splits") = std::vector<std::string>{}, py::arg("mode") = "full",
        py::arg("sample_rate_hz") = 250.0, TRAIN_ARGS);

    m.def(
        "classification_metrics",
        [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels, std::size_t n_classes) {
            return parse_json(classification_metrics(preds, labels, n_classes).to_json());
        },
        py::arg("preds"), py::arg("labels"), py::arg("n_classes"));

    m.def(
        "regression_metrics",
        [](const std::vector<double>& preds, const std::vector<double>& targets) {
            return parse_json(regression_metrics(preds, targets).to_json());
        },
        py::arg("preds"), py::arg("targets"));
}
