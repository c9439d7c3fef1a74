#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "tijepa/gradcheck.hpp"
#include "tijepa/pipeline.hpp"

using namespace tijepa;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const DTensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

std::vector<double> linear(const std::vector<double>& x, const Linear<double>& l) {
    std::vector<double> y(l.out_features());
    for (std::size_t j = 0; j < y.size(); ++j) {
        double acc = l.bias[j];
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * l.weight.at(i, j);
        y[j] = acc;
    }
    return y;
}

std::vector<double> norm(const std::vector<double>& x, const LayerNorm<double>& ln) {
    const double mu = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= x.size();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + ln.eps) * ln.gain[i] + ln.bias[i];
    return y;
}

double gelu_ref(double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x))); }

std::vector<double> plus(std::vector<double> a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

DTensor rand_t(Shape s, Rng& rng) { return normal_tensor<double>(std::move(s), rng, 1.0); }

} // namespace

TEST(Fusion, SinglePatchSingleTokenMatchesHandOracle) {
    Rng rng(1);
    FusionModule<double> fusion({1, 2, 8, 2}, 8, 8, rng, 0.5, 1e-6);
    ASSERT_FALSE(fusion.in_proj);
    ASSERT_FALSE(fusion.text_proj);
    const auto x = rand_t({1, 8}, rng);
    const auto t = rand_t({1, 8}, rng);
    const auto out = fusion(x, t);

    // One key per attention: softmax weight 1, output is the projected value.
    const auto& L = fusion.layers[0];
    auto y = to_mat(x)[0];
    y = plus(y, linear(linear(norm(y, L.norm1), L.self_attn.v), L.self_attn.out));
    y = plus(y, linear(linear(to_mat(t)[0], L.cross_attn.v), L.cross_attn.out));
    auto h = linear(norm(y, L.norm3), L.mlp.fc1);
    for (auto& v : h) v = gelu_ref(v);
    y = plus(y, linear(h, L.mlp.fc2));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out.at(0, i), y[i], 1e-12);
}

TEST(Fusion, ZeroOutputProjectionsGiveIdentity) {
    Rng rng(2);
    FusionModule<double> fusion({2, 2, 8, 2}, 8, 8, rng, 0.5, 1e-6);
    for (auto& L : fusion.layers)
        for (auto* t : {&L.self_attn.out.weight, &L.self_attn.out.bias, &L.cross_attn.out.weight,
                        &L.cross_attn.out.bias, &L.mlp.fc2.weight, &L.mlp.fc2.bias})
            std::fill(t->storage().begin(), t->storage().end(), 0.0);
    const auto x = rand_t({5, 8}, rng);
    const auto out = fusion(x, rand_t({3, 8}, rng));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out[i], x[i]);
}

TEST(Fusion, AdaptersOnlyWhenWidthsDiffer) {
    Rng rng(3);
    FusionModule<double> same({1, 2, 8, 2}, 8, 8, rng, 0.1);
    FusionModule<double> diff({1, 2, 8, 2}, 12, 6, rng, 0.1);
    EXPECT_FALSE(same.in_proj || same.out_proj || same.text_proj);
    EXPECT_TRUE(diff.in_proj && diff.out_proj && diff.text_proj);
    EXPECT_EQ(diff(rand_t({4, 12}, rng), rand_t({2, 6}, rng)).shape(), (Shape{4, 12}));
    EXPECT_THROW(diff(rand_t({4, 8}, rng), rand_t({2, 6}, rng)), ShapeError);
    EXPECT_THROW(diff(rand_t({4, 12}, rng), rand_t({2, 8}, rng)), ShapeError);
}

TEST(Fusion, PatchRowPermutationEquivariance) {
    Rng rng(4);
    FusionModule<double> fusion({2, 2, 8, 2}, 8, 8, rng, 0.4);
    const auto x = rand_t({4, 8}, rng);
    const auto t = rand_t({3, 8}, rng);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    const auto a = gather_rows(fusion(x, t), perm);
    const auto b = fusion(gather_rows(x, perm), t);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Fusion, ParamCountClosedForm) {
    Rng rng(5);
    for (CrossAttnConfig c : {CrossAttnConfig{1, 2, 8, 2}, CrossAttnConfig{2, 2, 8, 4}, CrossAttnConfig{3, 4, 16, 4}}) {
        for (auto [di, dt] : {std::pair<std::size_t, std::size_t>{8, 8}, {12, 6}, {16, 16}}) {
            FusionModule<float> m(c, di, dt, rng, 0.1);
            EXPECT_EQ(count_parameters(m), param_count(c, di, dt));
        }
    }
    // adapters add exactly their weights and biases
    const CrossAttnConfig c{1, 2, 8, 2};
    EXPECT_EQ(param_count(c, 12, 6) - param_count(c, 8, 8), 12u * 8 + 8 + 8 * 12 + 12 + 6 * 8 + 8);
    EXPECT_THROW(FusionModule<float>({0, 2, 8, 2}, 8, 8, rng, 0.1), ConfigError);
    EXPECT_THROW(FusionModule<float>({1, 3, 8, 2}, 8, 8, rng, 0.1), ConfigError);
}

TEST(Predictor, ShapesAndErrors) {
    Rng rng(6);
    Predictor<double> p({1, 2, 8, 2}, 6, rng, 0.3);
    const GridSize g{4, 4};
    const auto s_x = rand_t({3, 6}, rng);
    const std::vector<std::size_t> ctx = {0, 1, 2};
    EXPECT_EQ(p(s_x, ctx, {5, 6, 9, 10}, g).shape(), (Shape{4, 6}));
    EXPECT_THROW(p(s_x, ctx, {2}, g), ShapeError);
    EXPECT_THROW(p(s_x, ctx, {16}, g), ShapeError);
    EXPECT_THROW(p(s_x, ctx, {}, g), ShapeError);
    EXPECT_THROW(p(s_x, {0, 1}, {5}, g), ShapeError);
}

TEST(Predictor, DepthZeroIgnoresContext) {
    Rng rng(7);
    Predictor<double> p({0, 2, 8, 2}, 6, rng, 0.3);
    const GridSize g{4, 4};
    const std::vector<std::size_t> ctx = {0, 1}, tgt = {7, 12};
    const auto a = p(rand_t({2, 6}, rng), ctx, tgt, g);
    const auto b = p(rand_t({2, 6}, rng), ctx, tgt, g);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);

    // out_proj(mask_token + pos_j)
    const auto pos = to_mat(sincos_pos_2d<double>(4, 4, 8));
    for (std::size_t r = 0; r < tgt.size(); ++r) {
        std::vector<double> m(p.mask_token.data().begin(), p.mask_token.data().end());
        const auto y = linear(plus(m, pos[tgt[r]]), p.out_proj);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(a.at(r, c), y[c], 1e-12);
    }
}

TEST(Predictor, DependsOnContextAndTargetPosition) {
    Rng rng(8);
    Predictor<double> p({1, 2, 8, 2}, 6, rng, 0.5);
    const GridSize g{4, 4};
    const auto s_x = rand_t({2, 6}, rng);
    const auto a = p(s_x, {0, 1}, {7}, g);
    const auto b = p(rand_t({2, 6}, rng), {0, 1}, {7}, g);
    const auto c = p(s_x, {0, 1}, {8}, g);
    double dab = 0, dac = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dab += std::abs(a[i] - b[i]);
        dac += std::abs(a[i] - c[i]);
    }
    EXPECT_GT(dab, 1e-6);
    EXPECT_GT(dac, 1e-6);
}

TEST(Loss, HandCases) {
    const DTensor zero({1, 2}, {0, 0});
    const DTensor p34({1, 2}, {3, 4});
    EXPECT_EQ(prediction_loss<double>({p34}, {p34}).item(), 0.0);
    EXPECT_EQ(prediction_loss<double>({p34}, {zero}).item(), 25.0);
    const DTensor p2({1, 2}, {2, 0});
    const DTensor p1({2, 1}, {1, 0});
    const DTensor z1({2, 1}, {0, 0});
    EXPECT_EQ(prediction_loss<double>({p2, p1}, {zero, z1}).item(), 2.5);
    // L1: (1/M) Σ mean |diff|
    EXPECT_EQ(prediction_loss<double>({p34}, {zero}, LossKind::l1).item(), 3.5);
}

TEST(Loss, ShapeMismatchThrows) {
    const DTensor a({1, 2}, {0, 0});
    const DTensor b({2, 1}, {0, 0});
    EXPECT_THROW(prediction_loss<double>({a}, {b}), ShapeError);
    EXPECT_THROW(prediction_loss<double>({a}, {a, a}), ShapeError);
    EXPECT_THROW(prediction_loss<double>({}, {}), ShapeError);
}

TEST(Loss, GradientStopsAtTargets) {
    DTensor pred({1, 3}, {1, 2, 3}, true);
    DTensor target({1, 3}, {0, 1, 1}, true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = prediction_loss<double>({pred}, {target});
    tape.backward(loss);
    EXPECT_FALSE(target.has_grad());
    ASSERT_TRUE(pred.has_grad());
    EXPECT_EQ(pred.grad()[0], 2.0);
    EXPECT_EQ(pred.grad()[1], 2.0);
    EXPECT_EQ(pred.grad()[2], 4.0);
}

namespace {

TiJepaConfig small_model_config() {
    TiJepaConfig c;
    c.image_size = 16;
    c.image_encoder = {4, 8, 1, 2, 8, 2, true};
    c.text_encoder = {4, 12, 1, 2, 8, 2, true};
    c.fusion = {1, 2, 8, 2};
    c.predictor = {1, 2, 8, 2};
    c.masking.num_targets = 2;
    c.init_std = 0.3;
    return c;
}

Image test_image(std::uint64_t seed) {
    Rng rng(seed);
    Image img(16, 16);
    for (auto& v : img.values) v = static_cast<float>(rng.uniform());
    return img;
}

} // namespace

TEST(Pipeline, TargetsAreRowsOfTheFullTargetFusion) {
    TiJepaModel<float> m(small_model_config());
    const auto img = test_image(9);
    const auto ids = m.tokenize("green circle");
    Rng rng(10);
    const auto masks = sample_masks(m.grid(), m.cfg.masking, rng);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto targets = make_targets(m, img, ids, masks);
    EXPECT_TRUE(tape.empty());
    const auto full = m.target(m.image_encoder(img), m.text_encoder(ids));
    ASSERT_EQ(targets.size(), masks.targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        EXPECT_FALSE(targets[i].requires_grad());
        const auto idx = masks.targets[i].indices();
        ASSERT_EQ(targets[i].rows(), idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(targets[i].at(r, c), full.at(idx[r], c));
    }
}

TEST(Pipeline, ContextFollowsContextRows) {
    TiJepaModel<float> m(small_model_config());
    const auto img = test_image(11);
    const auto ids = m.tokenize("red square");
    Rng rng(12);
    const auto masks = sample_masks(m.grid(), m.cfg.masking, rng);
    const auto s_x = make_context(m, img, ids, masks);
    EXPECT_EQ(s_x.shape(), (Shape{masks.context.size(), 8}));
    const auto direct = m.online(m.image_encoder(img, masks.context), m.text_encoder(ids));
    for (std::size_t i = 0; i < s_x.size(); ++i) EXPECT_EQ(s_x[i], direct[i]);
    MaskSet empty = masks;
    empty.context.clear();
    EXPECT_THROW(make_context(m, img, ids, empty), ShapeError);
}

TEST(Pipeline, TargetTwinStartsAsCopyAndReceivesNoGradient) {
    TiJepaModel<double> m(small_model_config());
    std::vector<double> online, target;
    m.online.visit("", [&](const std::string&, DTensor& t) { online.insert(online.end(), t.data().begin(), t.data().end()); });
    m.target.visit("", [&](const std::string&, DTensor& t) {
        EXPECT_FALSE(t.requires_grad());
        target.insert(target.end(), t.data().begin(), t.data().end());
    });
    EXPECT_EQ(online, target);
    EXPECT_FALSE(m.online.layers[0].mlp.fc1.weight.same_storage(m.target.layers[0].mlp.fc1.weight));

    const auto img = test_image(13);
    const auto ids = m.tokenize("blue square");
    Rng rng(14);
    const auto masks = sample_masks(m.grid(), m.cfg.masking, rng);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = example_loss(m, img, ids, masks);
    tape.backward(loss);
    m.target.visit("", [](const std::string&, DTensor& t) { EXPECT_FALSE(t.has_grad()); });
    m.image_encoder.visit("", [](const std::string&, DTensor& t) { EXPECT_FALSE(t.has_grad()); });
    m.text_encoder.visit("", [](const std::string&, DTensor& t) { EXPECT_FALSE(t.has_grad()); });
    EXPECT_TRUE(m.online.layers[0].mlp.fc1.weight.has_grad());
    EXPECT_TRUE(m.predictor.mask_token.has_grad());
}

TEST(Pipeline, CaptionChangesTheLoss) {
    TiJepaModel<float> m(small_model_config());
    const auto img = test_image(15);
    const auto ids = m.tokenize("red square at top-left");
    const auto other = m.tokenize("blue circle at bottom-right");
    Rng rng(16);
    const auto masks = sample_masks(m.grid(), m.cfg.masking, rng);
    NoGradScope<float> ng;
    const float a = example_loss(m, img, ids, masks).item();
    const float b = example_loss(m, img, ids, masks, &other).item();
    EXPECT_GE(a, 0.f);
    EXPECT_NE(a, b);
}
