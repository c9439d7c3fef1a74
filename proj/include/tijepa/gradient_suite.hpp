#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/gradcheck.hpp"
#include "tijepa/layers.hpp"
#include "tijepa/masking.hpp"
#include "tijepa/model.hpp"
#include "tijepa/pipeline.hpp"

namespace tijepa {

namespace detail {

inline DTensor random_input(Shape shape, Rng& rng, double stddev = 1.0) {
    return normal_tensor<double>(std::move(shape), rng, stddev);
}

// Values bounded away from zero so |x| is differentiable at every entry.
inline DTensor away_from_zero(Shape shape, Rng& rng) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.5);
    return DTensor(std::move(shape), std::move(v), true);
}

// Collects every trainable tensor of a module as gradcheck inputs. The
// handles share storage, so perturbing them perturbs the module.
template <typename M>
std::vector<DTensor> module_inputs(M& module) {
    std::vector<DTensor> out;
    module.visit("", [&out](const std::string&, DTensor& t) {
        if (t.requires_grad()) out.push_back(t);
    });
    return out;
}

} // namespace detail

// Tiny double-precision configuration used for the composed L_P check.
inline TiJepaConfig gradient_suite_config() {
    TiJepaConfig c;
    c.image_size = 16;
    c.image_encoder = {4, 8, 1, 2, 8, 2, true};
    c.text_encoder = {4, 12, 1, 2, 8, 2, true};
    c.fusion = {1, 2, 8, 2};
    c.predictor = {1, 2, 8, 2};
    c.masking.num_targets = 2;
    c.init_std = 0.3;
    c.ln_eps = 1e-5;
    return c;
}

// Finite-difference checks of every differentiable op, the attention and
// block layers, the fusion module, and the full prediction loss.
inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 0) {
    using detail::away_from_zero;
    using detail::random_input;
    Rng rng = Rng::derive({seed, 0x9cad});
    std::vector<GradCheckResult> results;
    auto weights = [&rng](Shape s) {
        auto w = random_input(std::move(s), rng);
        w.set_requires_grad(false);
        return w;
    };

    {
        auto w = weights({3, 4});
        results.push_back(check_gradients("matmul", {random_input({3, 5}, rng), random_input({5, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(matmul(in[0], in[1]), w); }));
    }
    {
        auto w = weights({5, 3});
        results.push_back(check_gradients("transpose", {random_input({3, 5}, rng)},
                                          [w](const auto& in) { return weighted_sum(transpose(in[0]), w); }));
    }
    {
        auto w = weights({2, 6});
        results.push_back(check_gradients("reshape", {random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(reshape(in[0], {2, 6}), w); }));
    }
    {
        auto w = weights({3, 4});
        results.push_back(check_gradients("add", {random_input({3, 4}, rng), random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(add(in[0], in[1]), w); }));
        results.push_back(check_gradients("sub", {random_input({3, 4}, rng), random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(sub(in[0], in[1]), w); }));
        results.push_back(check_gradients("mul", {random_input({3, 4}, rng), random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(mul(in[0], in[1]), w); }));
        results.push_back(check_gradients("scale", {random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(scale(in[0], -1.7), w); }));
        results.push_back(check_gradients("add_bias", {random_input({3, 4}, rng), random_input({4}, rng)},
                                          [w](const auto& in) { return weighted_sum(add_bias(in[0], in[1]), w); }));
        results.push_back(check_gradients("abs", {away_from_zero({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(abs(in[0]), w); }));
        results.push_back(check_gradients("gelu", {random_input({3, 4}, rng, 2.0)},
                                          [w](const auto& in) { return weighted_sum(gelu(in[0]), w); }));
        results.push_back(check_gradients("softmax(axis=1)", {random_input({3, 4}, rng, 2.0)},
                                          [w](const auto& in) { return weighted_sum(softmax(in[0], 1), w); }));
        results.push_back(check_gradients("softmax(axis=0)", {random_input({3, 4}, rng, 2.0)},
                                          [w](const auto& in) { return weighted_sum(softmax(in[0], 0), w); }));
        results.push_back(check_gradients(
            "layer_norm", {random_input({3, 4}, rng, 2.0), random_input({4}, rng), random_input({4}, rng)},
            [w](const auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2], 1e-5), w); }));
    }
    results.push_back(check_gradients("sum", {random_input({3, 4}, rng)},
                                      [](const auto& in) { return scale(sum(in[0]), 0.7); }));
    results.push_back(check_gradients("mean", {random_input({3, 4}, rng)},
                                      [](const auto& in) { return mul(mean(in[0]), mean(in[0])); }));
    {
        auto w = weights({4, 3});
        const std::vector<std::size_t> idx = {2, 0, 2, 4};
        results.push_back(check_gradients("gather_rows", {random_input({5, 3}, rng)},
                                          [w, idx](const auto& in) { return weighted_sum(gather_rows(in[0], idx), w); }));
    }
    {
        auto w = weights({5, 3});
        results.push_back(check_gradients(
            "concat_rows", {random_input({2, 3}, rng), random_input({3, 3}, rng)}, [w](const auto& in) {
                return weighted_sum(concat_rows(std::vector<DTensor>{in[0], in[1]}), w);
            }));
    }
    {
        auto w = weights({3, 2});
        results.push_back(check_gradients("slice_cols", {random_input({3, 5}, rng)},
                                          [w](const auto& in) { return weighted_sum(slice_cols(in[0], 1, 3), w); }));
    }
    {
        auto w = weights({3, 5});
        results.push_back(check_gradients(
            "concat_cols", {random_input({3, 2}, rng), random_input({3, 3}, rng)}, [w](const auto& in) {
                return weighted_sum(concat_cols(std::vector<DTensor>{in[0], in[1]}), w);
            }));
    }
    {
        auto w = weights({1, 4});
        results.push_back(check_gradients("mean_rows", {random_input({3, 4}, rng)},
                                          [w](const auto& in) { return weighted_sum(mean_rows(in[0]), w); }));
    }
    results.push_back(check_gradients("cross_entropy", {random_input({1, 3}, rng, 2.0)},
                                      [](const auto& in) { return cross_entropy(in[0], 1); }));

    {
        AttentionParams<double> p(8, 2, rng, 0.5);
        auto inputs = detail::module_inputs(p);
        inputs.push_back(random_input({3, 8}, rng));
        inputs.push_back(random_input({5, 8}, rng));
        auto w = weights({3, 8});
        const std::size_t n = inputs.size();
        results.push_back(check_gradients("attention", inputs, [p, w, n](const auto& in) {
            return weighted_sum(attention(in[n - 2], in[n - 1], p), w);
        }));
    }
    {
        TransformerBlock<double> block(8, 2, 2, rng, 0.5, 1e-5);
        auto inputs = detail::module_inputs(block);
        inputs.push_back(random_input({4, 8}, rng));
        auto w = weights({4, 8});
        results.push_back(check_gradients("transformer_block", inputs,
                                          [block, w](const auto& in) { return weighted_sum(block(in.back()), w); }));
    }
    {
        FusionModule<double> fusion({1, 2, 8, 2}, 12, 6, rng, 0.4, 1e-5);
        auto inputs = detail::module_inputs(fusion);
        inputs.push_back(random_input({4, 12}, rng));
        inputs.push_back(random_input({3, 6}, rng));
        auto w = weights({4, 12});
        const std::size_t n = inputs.size();
        results.push_back(check_gradients("fusion", inputs, [fusion, w, n](const auto& in) {
            return weighted_sum(fusion(in[n - 2], in[n - 1]), w);
        }));
    }
    {
        // Composed L_P through f_I, f_T, X, X̃ and the predictor; only X and
        // the predictor carry gradients.
        TiJepaModel<double> model(gradient_suite_config());
        Image image(16, 16);
        for (auto& v : image.values) v = static_cast<float>(rng.uniform());
        const auto ids = model.tokenize("blue square at top-left");
        Rng mask_rng = Rng::derive({seed, 0x1a5c});
        const MaskSet masks = sample_masks(model.grid(), model.cfg.masking, mask_rng);
        auto inputs = detail::module_inputs(model.online);
        for (auto& t : detail::module_inputs(model.predictor)) inputs.push_back(t);
        results.push_back(check_gradients("loss_LP", inputs, [&model, &image, &ids, &masks](const auto&) {
            return example_loss(model, image, ids, masks);
        }));
    }
    return results;
}

} // namespace tijepa
