#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/layers.hpp"
#include "tijepa/masking.hpp"

namespace tijepa {

// Width/depth of one text-to-image fusion module.
struct CrossAttnConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t hidden = 64;
    std::size_t mlp_ratio = 4;

    void validate() const {
        if (layers == 0) throw ConfigError("fusion needs at least one layer");
        if (heads == 0 || hidden % heads != 0) throw ConfigError("fusion hidden size must be divisible by heads");
    }
};

// Published module sizes.
inline constexpr CrossAttnConfig kFusionSmall{4, 8, 768, 4};
inline constexpr CrossAttnConfig kFusionMedium{6, 10, 768, 4};
inline constexpr CrossAttnConfig kFusionLarge{8, 12, 1024, 4};

// Image/text encoder widths at full scale (ViT-H and gte-base).
inline constexpr std::size_t kFullImageDim = 1280;
inline constexpr std::size_t kFullTextDim = 768;

// Self-attention over patches, cross-attention from patches (queries) to
// text (keys/values), MLP; each pre-normed with a residual connection.
template <typename T>
struct FusionLayer {
    using scalar_type = T;

    LayerNorm<T> norm1;
    AttentionParams<T> self_attn;
    LayerNorm<T> norm2;
    AttentionParams<T> cross_attn;
    LayerNorm<T> norm3;
    Mlp<T> mlp;

    FusionLayer() = default;
    FusionLayer(const CrossAttnConfig& c, Rng& rng, double init_std, T eps)
        : norm1(c.hidden, eps), self_attn(c.hidden, c.heads, rng, init_std), norm2(c.hidden, eps),
          cross_attn(c.hidden, c.heads, rng, init_std), norm3(c.hidden, eps),
          mlp(c.hidden, c.hidden * c.mlp_ratio, rng, init_std) {}

    BasicTensor<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& text) const {
        const auto h1 = norm1(x);
        auto y = add(x, attention(h1, h1, self_attn));
        y = add(y, attention(norm2(y), text, cross_attn));
        return add(y, mlp(norm3(y)));
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        norm1.visit(prefix + ".norm1", f);
        self_attn.visit(prefix + ".self_attn", f);
        norm2.visit(prefix + ".norm2", f);
        cross_attn.visit(prefix + ".cross_attn", f);
        norm3.visit(prefix + ".norm3", f);
        mlp.visit(prefix + ".mlp", f);
    }
};

// Text-to-image fusion module. Linear adapters are added only where an
// encoder width differs from the hidden size.
template <typename T>
struct FusionModule {
    using scalar_type = T;

    CrossAttnConfig cfg;
    std::size_t image_dim = 0;
    std::size_t text_dim = 0;
    std::optional<Linear<T>> in_proj;   // image_dim -> hidden
    std::optional<Linear<T>> out_proj;  // hidden -> image_dim
    std::optional<Linear<T>> text_proj; // text_dim -> hidden
    std::vector<FusionLayer<T>> layers;

    FusionModule() = default;
    FusionModule(const CrossAttnConfig& c, std::size_t image_dim_, std::size_t text_dim_, Rng& rng, double init_std,
                 T eps = T(1e-6))
        : cfg(c), image_dim(image_dim_), text_dim(text_dim_) {
        cfg.validate();
        if (image_dim != cfg.hidden) {
            in_proj.emplace(image_dim, cfg.hidden, rng, init_std);
            out_proj.emplace(cfg.hidden, image_dim, rng, init_std);
        }
        if (text_dim != cfg.hidden) text_proj.emplace(text_dim, cfg.hidden, rng, init_std);
        for (std::size_t i = 0; i < cfg.layers; ++i) layers.emplace_back(cfg, rng, init_std, eps);
    }

    // patch_reps [P × image_dim], text_reps [L × text_dim] -> [P × image_dim]
    BasicTensor<T> operator()(const BasicTensor<T>& patch_reps, const BasicTensor<T>& text_reps) const {
        if (patch_reps.rank() != 2 || patch_reps.cols() != image_dim) {
            throw ShapeError("fuse: patch representations " + shape_str(patch_reps.shape()) + " expected width " +
                             std::to_string(image_dim));
        }
        if (text_reps.rank() != 2 || text_reps.cols() != text_dim) {
            throw ShapeError("fuse: text representations " + shape_str(text_reps.shape()) + " expected width " +
                             std::to_string(text_dim));
        }
        auto x = in_proj ? (*in_proj)(patch_reps) : patch_reps;
        const auto text = text_proj ? (*text_proj)(text_reps) : text_reps;
        for (const auto& layer : layers) x = layer(x, text);
        return out_proj ? (*out_proj)(x) : x;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        if (in_proj) in_proj->visit(prefix + ".in_proj", f);
        if (out_proj) out_proj->visit(prefix + ".out_proj", f);
        if (text_proj) text_proj->visit(prefix + ".text_proj", f);
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layers." + std::to_string(i), f);
    }
};

// Closed-form learned-parameter count of one FusionModule.
inline std::size_t param_count(const CrossAttnConfig& c, std::size_t image_dim, std::size_t text_dim) {
    const std::size_t h = c.hidden;
    const std::size_t attn = 4 * (h * h + h);
    const std::size_t mlp = (h * h * c.mlp_ratio + h * c.mlp_ratio) + (h * c.mlp_ratio * h + h);
    const std::size_t norms = 3 * 2 * h;
    std::size_t total = c.layers * (2 * attn + mlp + norms);
    if (image_dim != h) total += (image_dim * h + h) + (h * image_dim + image_dim);
    if (text_dim != h) total += text_dim * h + h;
    return total;
}

struct PredictorConfig {
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t width = 64;
    std::size_t mlp_ratio = 4;
};

// Narrow transformer that reads projected context tokens plus one shared
// mask token per target position and returns predictions at those slots.
template <typename T>
struct Predictor {
    using scalar_type = T;

    PredictorConfig cfg;
    std::size_t io_dim = 0;
    Linear<T> in_proj;
    BasicTensor<T> mask_token; // [width]
    std::vector<TransformerBlock<T>> blocks;
    Linear<T> out_proj;

    Predictor() = default;
    Predictor(const PredictorConfig& c, std::size_t io_dim_, Rng& rng, double init_std, T eps = T(1e-6))
        : cfg(c), io_dim(io_dim_) {
        if (cfg.width % 4 != 0) throw ConfigError("predictor width must be divisible by 4");
        if (cfg.heads == 0 || cfg.width % cfg.heads != 0) throw ConfigError("predictor width must be divisible by heads");
        in_proj = Linear<T>(io_dim, cfg.width, rng, init_std);
        mask_token = normal_tensor<T>({cfg.width}, rng, init_std);
        for (std::size_t i = 0; i < cfg.depth; ++i)
            blocks.emplace_back(cfg.width, cfg.heads, cfg.mlp_ratio, rng, init_std, eps);
        out_proj = Linear<T>(cfg.width, io_dim, rng, init_std);
    }

    // s_x rows correspond to context_positions; returns one row per target position.
    BasicTensor<T> operator()(const BasicTensor<T>& s_x, const std::vector<std::size_t>& context_positions,
                              const std::vector<std::size_t>& target_positions, GridSize grid) const {
        if (s_x.rank() != 2 || s_x.rows() != context_positions.size() || s_x.cols() != io_dim) {
            throw ShapeError("predict: context representations " + shape_str(s_x.shape()) + " do not match " +
                             std::to_string(context_positions.size()) + " positions of width " + std::to_string(io_dim));
        }
        if (target_positions.empty()) throw ShapeError("predict: empty target block");
        for (auto j : target_positions) {
            if (j >= grid.count()) throw ShapeError("predict: target position out of range");
            if (std::find(context_positions.begin(), context_positions.end(), j) != context_positions.end()) {
                throw ShapeError("predict: target position " + std::to_string(j) + " overlaps the context");
            }
        }
        const auto pos = sincos_pos_2d<T>(grid.rows, grid.cols, cfg.width);
        const auto ctx = add(in_proj(s_x), gather_rows(pos, context_positions));
        const auto token_rows =
            gather_rows(reshape(mask_token, {1, cfg.width}), std::vector<std::size_t>(target_positions.size(), 0));
        const auto masks = add(token_rows, gather_rows(pos, target_positions));
        auto x = concat_rows(std::vector<BasicTensor<T>>{ctx, masks});
        for (const auto& b : blocks) x = b(x);
        std::vector<std::size_t> slots(target_positions.size());
        for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = context_positions.size() + i;
        return out_proj(gather_rows(x, slots));
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        in_proj.visit(prefix + ".in_proj", f);
        f(prefix + ".mask_token", mask_token);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
        out_proj.visit(prefix + ".out_proj", f);
    }
};

enum class LossKind { l2, l1 };

template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& t) {
    if (!t.requires_grad()) return t;
    auto c = t.clone();
    c.set_requires_grad(false);
    return c;
}

// (1/M) Σ_i Σ_{j∈B_i} ||pred_j - target_j||², gradients flow to predictions
// only. LossKind::l1 gives (1/M) Σ_i mean |pred - target| instead.
template <typename T>
BasicTensor<T> prediction_loss(const std::vector<BasicTensor<T>>& predictions,
                               const std::vector<BasicTensor<T>>& targets, LossKind kind = LossKind::l2) {
    if (predictions.empty() || predictions.size() != targets.size()) {
        throw ShapeError("prediction_loss: " + std::to_string(predictions.size()) + " prediction blocks vs " +
                         std::to_string(targets.size()) + " target blocks");
    }
    std::optional<BasicTensor<T>> total;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].shape() != targets[i].shape()) {
            throw ShapeError("prediction_loss: block " + std::to_string(i) + " shape " +
                             shape_str(predictions[i].shape()) + " vs " + shape_str(targets[i].shape()));
        }
        const auto diff = sub(predictions[i], detach(targets[i]));
        auto term = kind == LossKind::l2 ? sum(mul(diff, diff)) : mean(abs(diff));
        total = total ? add(*total, term) : term;
    }
    return scale(*total, T(1) / static_cast<T>(predictions.size()));
}

// Replaces every parameter with an independent copy.
template <typename M>
M deep_copy(const M& m) {
    M c = m;
    c.visit("", [](const std::string&, auto& t) { t = t.clone(); });
    return c;
}

} // namespace tijepa
