#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "tijepa/checkpoint.hpp"
#include "tijepa/dataprep.hpp"
#include "tijepa/gradcheck.hpp"
#include "tijepa/trainer.hpp"

using namespace tijepa;

namespace {

TiJepaConfig tiny_config() {
    TiJepaConfig c;
    c.image_size = 16;
    c.image_encoder = {4, 8, 1, 2, 8, 2, true};
    c.text_encoder = {4, 8, 1, 2, 8, 2, true};
    c.fusion = {1, 2, 8, 2};
    c.predictor = {1, 2, 8, 2};
    c.masking.num_targets = 2;
    c.steps = 4;
    c.batch_size = 2;
    c.log_every = 2;
    return c;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("tijepa_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

} // namespace

TEST(AdamW, MatchesReferenceUpdate) {
    const AdamWOptions opts{0.1, 0.9, 0.999, 1e-8, 0.01};
    DTensor p({2}, {1.0, -2.0}, true);
    AdamW<double> opt(opts, {{"p", p}});
    const std::vector<std::vector<double>> grads = {{0.5, -1.0}, {0.25, 0.0}, {-0.75, 2.0}};

    std::vector<double> ref = {1.0, -2.0}, m(2, 0.0), v(2, 0.0);
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        opt.zero_grad();
        for (std::size_t i = 0; i < 2; ++i) p.mutable_grad()[i] = grads[t - 1][i];
        opt.step();
        for (std::size_t i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            ref[i] -= opts.lr * opts.weight_decay * ref[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= opts.lr * mh / (std::sqrt(vh) + opts.eps);
            EXPECT_NEAR(p[i], ref[i], 1e-12);
        }
    }
    EXPECT_EQ(opt.step_count(), 3u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    DTensor p({1}, {1.0}, true);
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.0}, {{"p", p}});
    opt.zero_grad();
    p.mutable_grad()[0] = 0.5;
    opt.step();
    EXPECT_NEAR(p[0], 0.9, 1e-7);
}

TEST(AdamW, DecayAppliesWithZeroGradient) {
    DTensor p({1}, {2.0}, true);
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.5}, {{"p", p}});
    opt.zero_grad();
    opt.step();
    EXPECT_DOUBLE_EQ(p[0], 2.0 * (1 - 0.05));
}

TEST(AdamW, NonFiniteGradientThrows) {
    DTensor p({1}, {1.0}, true);
    AdamW<double> opt({}, {{"p", p}});
    opt.zero_grad();
    p.mutable_grad()[0] = NAN;
    EXPECT_THROW(opt.step(), NumericalError);
}

TEST(Ema, MomentumSchedule) {
    const EmaSchedule s{0.996, 1.0, 100};
    EXPECT_EQ(momentum_at(0, s), 0.996);
    EXPECT_EQ(momentum_at(100, s), 1.0);
    EXPECT_NEAR(momentum_at(50, s), 0.998, 1e-15);
    EXPECT_EQ(momentum_at(-5, s), 0.996);
    EXPECT_EQ(momentum_at(250, s), 1.0);
    for (int t = 1; t <= 100; ++t) EXPECT_GE(momentum_at(t, s), momentum_at(t - 1, s));
}

TEST(Ema, UpdateRule) {
    Rng rng(1);
    Linear<double> online(2, 2, rng, 1.0), target(2, 2, rng, 1.0);
    const auto before = std::vector<double>(target.weight.data().begin(), target.weight.data().end());
    ema_update(target, online, 0.996);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(target.weight[i], 0.996 * before[i] + 0.004 * online.weight[i], 1e-15);

    ema_update(target, online, 0.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(target.weight[i], online.weight[i]);

    Linear<double> frozen(2, 2, rng, 1.0);
    const auto snap = std::vector<double>(frozen.weight.data().begin(), frozen.weight.data().end());
    ema_update(frozen, online, 1.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(frozen.weight[i], snap[i]);

    Linear<double> wrong(3, 2, rng, 1.0);
    EXPECT_THROW(ema_update(wrong, online, 0.5), ShapeError);
}

TEST(Collapse, ClosedForms) {
    const Tensor same({2, 3}, {1, 2, 3, 1, 2, 3});
    EXPECT_EQ(collapse_metric<float>({same, same}), 0.0);
    // one dimension at ±1, the rest constant: std 1 in 1 of d dims
    const std::size_t d = 4;
    Tensor a({1, d}, {1, 0, 0, 0}), b({1, d}, {-1, 0, 0, 0});
    EXPECT_DOUBLE_EQ(collapse_metric<float>({a, b}), 1.0 / d);
    Tensor a2({1, d}, {11, 10, 10, 10}), b2({1, d}, {9, 10, 10, 10});
    EXPECT_DOUBLE_EQ(collapse_metric<float>({a2, b2}), 1.0 / d);
    EXPECT_THROW(collapse_metric<float>({a}), ConfigError);
}

TEST(Trainer, ZeroLearningRateLeavesOnlineUnchanged) {
    auto cfg = tiny_config();
    cfg.lr = 0.0;
    Trainer t(cfg);
    const auto data = synth_generate(8, 1, 16);
    const auto before = parameter_hash(t.model().online);
    t.train_step(data);
    t.train_step(data);
    EXPECT_EQ(parameter_hash(t.model().online), before);
}

TEST(Trainer, FrozenEncodersDoNotMove) {
    Trainer t(tiny_config());
    const auto data = synth_generate(8, 2, 16);
    const auto img = parameter_hash(t.model().image_encoder);
    const auto txt = parameter_hash(t.model().text_encoder);
    const auto on = parameter_hash(t.model().online);
    t.run(data);
    EXPECT_EQ(t.step(), 4u);
    EXPECT_EQ(parameter_hash(t.model().image_encoder), img);
    EXPECT_EQ(parameter_hash(t.model().text_encoder), txt);
    EXPECT_NE(parameter_hash(t.model().online), on);
}

TEST(Trainer, MetricsLoggedEveryInterval) {
    Trainer t(tiny_config());
    std::ostringstream os;
    const auto hist = t.run(synth_generate(8, 3, 16), &os);
    ASSERT_EQ(hist.size(), 4u);
    EXPECT_FALSE(hist[0].logged);
    EXPECT_TRUE(hist[1].logged);
    EXPECT_TRUE(hist[3].logged);
    std::size_t lines = 0;
    std::string line;
    std::istringstream in(os.str());
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 2u);
    EXPECT_EQ(os.str().substr(0, 2), "2\t");
}

TEST(Trainer, EpochPermutationCoversDataset) {
    auto cfg = tiny_config();
    cfg.batch_size = 3;
    Trainer t(cfg);
    std::vector<int> seen(7, 0);
    for (std::uint64_t b = 0; b < 7; ++b) {
        const auto [epoch, idx] = t.example_slot(b / 3, b % 3, 7);
        EXPECT_EQ(epoch, 0u);
        ++seen[idx];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Trainer, SizeMismatchIsRejected) {
    Trainer t(tiny_config());
    EXPECT_THROW(t.train_step(synth_generate(4, 1, 32)), ShapeError);
    EXPECT_THROW(t.train_step({}), ConfigError);
}

TEST(Checkpoint, RoundTripAndErrors) {
    const auto dir = temp_dir("ckpt");
    TensorTable table;
    table.put("b", Tensor({2}, {1.5f, -2.f}));
    table.put("a", Tensor({1, 1}, {3.f}));
    table.put_u64("meta.counters", {1, 2, 3});
    table.put_bytes("meta.config", "seed = 1\n");
    table.save(dir / "x.tijp");
    const auto back = TensorTable::load(dir / "x.tijp");
    EXPECT_EQ(back, table);
    EXPECT_EQ(back.get("b")[1], -2.f);
    EXPECT_EQ(back.get_u64("meta.counters"), (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_THROW(back.get("missing"), FormatError);
    EXPECT_THROW(back.get("meta.counters"), FormatError);

    const auto bytes = table.encode();
    EXPECT_EQ(bytes.substr(0, 4), "TIJP");
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(TensorTable::decode(bad_magic), FormatError);
    std::string bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_THROW(TensorTable::decode(bad_version), FormatError);
    EXPECT_THROW(TensorTable::decode(bytes.substr(0, bytes.size() - 3)), FormatError);
    EXPECT_THROW(TensorTable::decode(bytes.substr(0, 10)), FormatError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(TensorTable::decode(flipped), FormatError);
    EXPECT_THROW(TensorTable::load(dir / "none.tijp"), FormatError);
}

TEST(Checkpoint, CrcMatchesKnownCheckValue) {
    // CRC-64/XZ check value for "123456789"
    EXPECT_EQ(crc64("123456789"), 0x995DC9BBDF1939FAull);
}

TEST(Checkpoint, TrainerStateRoundTrip) {
    Trainer t(tiny_config());
    const auto data = synth_generate(8, 4, 16);
    t.train_step(data);
    const auto state = t.export_state();
    auto restored = Trainer::from_state(state);
    EXPECT_EQ(restored.step(), 1u);
    EXPECT_EQ(restored.export_state().encode(), state.encode());

    TensorTable extra = state;
    extra.put("not.a.parameter", Tensor({1}, {0.f}));
    EXPECT_THROW(Trainer::from_state(extra), FormatError);

    TensorTable wrong = state;
    wrong.put("fusion_online.layers.0.mlp.fc1.bias", Tensor({3}, {0.f, 0.f, 0.f}));
    EXPECT_THROW(Trainer::from_state(wrong), FormatError);
}

TEST(Config, ParseSerializeRoundTrip) {
    auto cfg = parse_config("# comment\nseed = 7\nimage_size = 32\nlr = 0.0005\nloss = l1\nhead_input = target\n");
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.image_size, 32u);
    EXPECT_EQ(cfg.lr, 0.0005);
    EXPECT_EQ(cfg.loss, LossKind::l1);
    EXPECT_EQ(cfg.head_input, HeadInput::target);
    const auto text = serialize_config(cfg);
    EXPECT_EQ(serialize_config(parse_config(text)), text);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config("no_such_key = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("seed\n"), ConfigError);
    EXPECT_THROW(parse_config("seed = abc\n"), ConfigError);
    EXPECT_THROW(parse_config("loss = l3\n"), ConfigError);
    EXPECT_THROW(parse_config("image_size = 60\n"), ShapeError);
    EXPECT_THROW(parse_config("ema_start = 1.5\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.txt"), ConfigError);
    TiJepaConfig c;
    EXPECT_THROW(apply_override(c, "steps"), ConfigError);
    apply_override(c, "steps=12");
    EXPECT_EQ(c.steps, 12u);
}
