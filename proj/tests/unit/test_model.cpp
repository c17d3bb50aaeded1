#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fome/error.hpp"
#include "fome/model.hpp"
#include "synthetic_corpus.hpp"

using namespace fome;

namespace {

struct Input {
    PatchGrid grid;
    BandPowerTensor bands;
};

Input make_input(std::size_t C, std::size_t P, std::size_t L, std::uint64_t seed) {
    Rng rng(seed);
    PatchGrid g = testing::multi_tone_grid(C, P, L, rng, 0.3);
    auto b = band_powers(g);
    return {std::move(g), std::move(b)};
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// x @ W + b for a [N, D] input and the named linear layer.
std::vector<double> apply_linear(const FomeModel& m, const Tensor& x, const std::string& prefix) {
    return values(ops::add(ops::matmul(x, m.params().at(prefix + ".weight")), m.params().at(prefix + ".bias")));
}

}  // namespace

TEST_CASE("presets and validation") {
    const auto tiny = ModelConfig::tiny();
    CHECK_NOTHROW(tiny.validate());
    CHECK(ModelConfig::preset_named("base").ffn_dim == 3072);
    CHECK(ModelConfig::preset_named("large").ffn_dim == 7168);
    CHECK(ModelConfig::base().temporal_layers == 12);
    CHECK(ModelConfig::base().channel_layers == 4);
    CHECK(ModelConfig::base().patch_len == 1500);
    CHECK_THROWS_AS(ModelConfig::preset_named("huge"), ConfigError);
    auto bad = tiny;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(tiny.attention_scale() == doctest::Approx(1.0 / std::sqrt(8.0)));
    bad = tiny;
    bad.scale = AttentionScale::head_dim;
    CHECK(bad.attention_scale() == doctest::Approx(0.5));
}

TEST_CASE("config text round-trip") {
    auto c = ModelConfig::tiny();
    c.n_classes = 3;
    c.forecast_context = 4;
    c.forecast_horizon = 16;
    c.use_freq = false;
    c.patch_embed = PatchEmbedKind::conv;
    c.scale = AttentionScale::head_dim;
    c.interleave = true;
    c.dropout = 0.25;
    c.init_seed = 12345;
    const auto back = ModelConfig::from_text(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(parameter_layout(back) == parameter_layout(c));
    CHECK_THROWS_AS(ModelConfig::from_text("bogus=1\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("model_dim\n"), ConfigError);
    CHECK(ModelConfig::from_text("preset=base\n").ffn_dim == 3072);
}

TEST_CASE("parameter layout and init") {
    const auto cfg = ModelConfig::tiny();
    const FomeModel m(cfg);
    CHECK(m.params().at("embed.patch.weight").shape() == Shape{8, 8});
    CHECK(m.params().at("embed.freq.weight").shape() == Shape{8, 8});
    CHECK(m.params().at("embed.pos").shape() == Shape{32, 8});
    CHECK(m.params().at("head.reconstruct.weight").shape() == Shape{8, 8});
    for (double g : m.params().at("final_norm.gamma").data()) CHECK(g == 1.0);
    for (double b : m.params().at("embed.patch.bias").data()) CHECK(b == 0.0);
    const double bound = std::sqrt(6.0 / 16.0);
    for (double w : m.params().at("embed.patch.weight").data()) CHECK(std::abs(w) <= bound);
    CHECK_FALSE(m.params().contains("head.classify.0.weight"));
    const FomeModel again(cfg);
    CHECK(values(again.params().at("embed.pos")) == values(m.params().at("embed.pos")));
    for (const auto& name : m.backbone_names()) CHECK(name.rfind("head.", 0) != 0);
}

TEST_CASE("input embedding") {
    const auto in = make_input(3, 4, 8, 1);
    FomeModel m(ModelConfig::tiny());
    SUBCASE("sum of the three parts") {
        const auto parts = m.embed_parts(in.grid, in.bands);
        const auto e = m.embed(in.grid, in.bands);
        for (std::size_t i = 0; i < e.numel(); ++i) {
            CHECK(e.data()[i] == doctest::Approx(parts.patch.data()[i] + parts.freq.data()[i] + parts.pos.data()[i]));
        }
    }
    SUBCASE("zero patch weights leave only freq + pos") {
        auto& w = m.params().at("embed.patch.weight");
        std::fill(w.data().begin(), w.data().end(), 0.0);
        const auto parts = m.embed_parts(in.grid, in.bands);
        for (double v : parts.patch.data()) CHECK(v == 0.0);
    }
    SUBCASE("positions repeat across channels") {
        const auto pos = m.embed_parts(in.grid, in.bands).pos;
        for (std::size_t d = 0; d < 8; ++d) CHECK(pos.data()[1 * 8 + d] == pos.data()[(4 + 1) * 8 + d]);
    }
    SUBCASE("frequency ablation") {
        auto cfg = ModelConfig::tiny();
        cfg.use_freq = false;
        const FomeModel a(cfg);
        CHECK_FALSE(a.params().contains("embed.freq.weight"));
        const auto parts = a.embed_parts(in.grid, in.bands);
        for (double v : parts.freq.data()) CHECK(v == 0.0);
    }
    SUBCASE("conv patch embedding") {
        auto cfg = ModelConfig::tiny();
        cfg.patch_embed = PatchEmbedKind::conv;
        const FomeModel a(cfg);
        CHECK(a.params().contains("embed.conv.weight"));
        CHECK(a.embed(in.grid, in.bands).shape() == Shape{12, 8});
    }
    SUBCASE("shape and capacity errors") {
        const auto wrong = make_input(2, 2, 6, 2);
        CHECK_THROWS_AS(m.embed(wrong.grid, wrong.bands), ShapeError);
        const auto many = make_input(1, 33, 8, 3);
        CHECK_THROWS_AS(m.embed(many.grid, many.bands), CapacityError);
    }
}

TEST_CASE("attention degenerate groups return the value projection") {
    const FomeModel m(ModelConfig::tiny());
    Rng rng(4);
    SUBCASE("P = 1 temporal") {
        const auto in = make_input(3, 1, 8, 5);
        const Tensor x = m.embed(in.grid, in.bands);
        const auto out = values(m.multi_head_attention(x, 0, EncoderAxis::time, 3, 1));
        const Tensor v = ops::add(ops::matmul(x, m.params().at("temporal.0.attn.v.weight")),
                                  m.params().at("temporal.0.attn.v.bias"));
        const auto expect = apply_linear(m, v, "temporal.0.attn.out");
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
    SUBCASE("C = 1 channel") {
        const auto in = make_input(1, 4, 8, 6);
        const Tensor x = m.embed(in.grid, in.bands);
        const auto out = values(m.multi_head_attention(x, 0, EncoderAxis::channel, 1, 4));
        const Tensor v = ops::add(ops::matmul(x, m.params().at("channel.0.attn.v.weight")),
                                  m.params().at("channel.0.attn.v.bias"));
        const auto expect = apply_linear(m, v, "channel.0.attn.out");
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("attention matrices are row-stochastic") {
    const FomeModel m(ModelConfig::tiny());
    const auto in = make_input(3, 5, 8, 7);
    std::vector<AttentionCapture> cap;
    ForwardOptions opts;
    opts.capture = &cap;
    m.forward(in.grid, in.bands, opts);
    REQUIRE(cap.size() == 2);
    CHECK(cap[0].axis == EncoderAxis::time);
    CHECK(cap[0].members == 5);
    CHECK(cap[1].members == 3);
    for (const auto& c : cap) {
        for (std::size_t row = 0; row < c.probs.size() / c.members; ++row) {
            double total = 0;
            for (std::size_t j = 0; j < c.members; ++j) {
                const double p = c.probs[row * c.members + j];
                CHECK(p >= 0.0);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("masking") {
    const FomeModel m(ModelConfig::tiny());
    const auto a = make_input(2, 3, 8, 8);
    const auto b = make_input(2, 3, 8, 9);
    SUBCASE("all slots masked: the input no longer matters") {
        const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
        ForwardOptions opts;
        opts.mask_slots = all;
        CHECK(values(m.forward(a.grid, a.bands, opts)) == values(m.forward(b.grid, b.bands, opts)));
    }
    SUBCASE("masking a slot changes the output") {
        const std::vector<std::size_t> one{2};
        ForwardOptions opts;
        opts.mask_slots = one;
        CHECK(values(m.forward(a.grid, a.bands, opts)) != values(m.forward(a.grid, a.bands)));
    }
    SUBCASE("out-of-range slot") {
        const std::vector<std::size_t> bad{6};
        ForwardOptions opts;
        opts.mask_slots = bad;
        CHECK_THROWS_AS(m.forward(a.grid, a.bands, opts), IndexError);
    }
}

TEST_CASE("heads") {
    auto cfg = ModelConfig::tiny();
    cfg.n_classes = 3;
    const FomeModel m(cfg);
    const auto in = make_input(2, 4, 8, 10);
    const Tensor e = m.forward(in.grid, in.bands);
    CHECK(e.shape() == Shape{8, 8});
    CHECK(m.head_reconstruct(e).shape() == Shape{8, 8});
    const Tensor probs = m.head_classify(e);
    CHECK(probs.shape() == Shape{1, 3});
    double total = 0;
    for (double p : probs.data()) total += p;
    CHECK(total == doctest::Approx(1.0));
    CHECK(m.params().at("head.classify.0.weight").shape() == Shape{8, 4});
    CHECK(m.params().at("head.classify.1.weight").shape() == Shape{4, 2});
    CHECK_THROWS_AS(m.head_forecast(e, 2), ConfigError);

    auto one = ModelConfig::tiny();
    one.n_classes = 1;
    const FomeModel single(one);
    CHECK(single.head_classify(single.forward(in.grid, in.bands)).data()[0] == doctest::Approx(1.0));
}

TEST_CASE("forecast head at full patch length") {
    for (std::size_t horizon : {3000, 7500}) {
        auto cfg = ModelConfig::tiny();
        cfg.patch_len = 1500;
        cfg.forecast_context = 2;
        cfg.forecast_horizon = horizon;
        const FomeModel m(cfg);
        const auto in = make_input(2, 2, 1500, 11);
        const Tensor out = m.head_forecast(m.forward(in.grid, in.bands), 2);
        CHECK(out.shape() == Shape{2, horizon});
        const auto longer = make_input(2, 3, 1500, 12);
        CHECK_THROWS_AS(m.head_forecast(m.forward(longer.grid, longer.bands), 2), ShapeError);
    }
}

TEST_CASE("architecture variants run") {
    const auto in = make_input(2, 3, 8, 13);
    auto interleaved = ModelConfig::tiny();
    interleaved.temporal_layers = 2;
    interleaved.channel_layers = 2;
    interleaved.interleave = true;
    CHECK(FomeModel(interleaved).forward(in.grid, in.bands).shape() == Shape{6, 8});
    auto no_temporal = ModelConfig::tiny();
    no_temporal.temporal_layers = 0;
    CHECK_FALSE(FomeModel(no_temporal).params().contains("temporal.0.attn.q.weight"));
    CHECK(FomeModel(no_temporal).forward(in.grid, in.bands).shape() == Shape{6, 8});
    auto wide_heads = ModelConfig::tiny();
    wide_heads.head_dim_k = 3;
    wide_heads.head_dim_v = 5;
    const FomeModel w(wide_heads);
    CHECK(w.params().at("temporal.0.attn.q.weight").shape() == Shape{8, 6});
    CHECK(w.params().at("temporal.0.attn.out.weight").shape() == Shape{10, 8});
    CHECK(w.forward(in.grid, in.bands).shape() == Shape{6, 8});
}

TEST_CASE("dropout only acts in training") {
    auto cfg = ModelConfig::tiny();
    cfg.dropout = 0.5;
    const FomeModel m(cfg);
    const auto in = make_input(2, 3, 8, 14);
    Rng r1(1), r2(1);
    ForwardOptions train;
    train.training = true;
    train.dropout_rng = &r1;
    const auto eval = values(m.forward(in.grid, in.bands));
    CHECK(values(m.forward(in.grid, in.bands)) == eval);
    const auto t1 = values(m.forward(in.grid, in.bands, train));
    train.dropout_rng = &r2;
    CHECK(values(m.forward(in.grid, in.bands, train)) == t1);
    CHECK(t1 != eval);
}
