#pragma once

#include <string>
#include <vector>

#include "tijepa/config.hpp"
#include "tijepa/encoders.hpp"
#include "tijepa/masking.hpp"
#include "tijepa/model.hpp"

namespace tijepa {

// Encoders f_I, f_T, online fusion X, its EMA twin X̃, and the predictor.
template <typename T>
struct TiJepaModel {
    using scalar_type = T;

    TiJepaConfig cfg;
    ImageEncoder<T> image_encoder;
    TextEncoder<T> text_encoder;
    FusionModule<T> online;
    FusionModule<T> target;
    Predictor<T> predictor;

    TiJepaModel() = default;
    explicit TiJepaModel(const TiJepaConfig& c) : cfg(c) {
        cfg.validate();
        const T eps = static_cast<T>(cfg.ln_eps);
        Rng image_rng = Rng::derive({cfg.seed, 1});
        Rng text_rng = Rng::derive({cfg.seed, 2});
        Rng fusion_rng = Rng::derive({cfg.seed, 3});
        Rng pred_rng = Rng::derive({cfg.seed, 4});
        image_encoder = ImageEncoder<T>(cfg.image_encoder, image_rng, cfg.init_std, eps);
        text_encoder = TextEncoder<T>(cfg.text_encoder, text_rng, cfg.init_std, eps);
        online = FusionModule<T>(cfg.fusion, cfg.image_encoder.embed_dim, cfg.text_encoder.embed_dim, fusion_rng,
                                 cfg.init_std, eps);
        target = deep_copy(online);
        predictor = Predictor<T>(cfg.predictor, cfg.image_encoder.embed_dim, pred_rng, cfg.init_std, eps);
        apply_freeze_policy();
    }

    // X̃ never trains; encoders and predictor follow their config flags.
    void apply_freeze_policy() {
        set_trainable(image_encoder, !cfg.image_encoder.frozen);
        set_trainable(text_encoder, !cfg.text_encoder.frozen);
        set_trainable(online, true);
        set_trainable(target, false);
        set_trainable(predictor, !cfg.freeze_predictor);
    }

    GridSize grid() const { return cfg.grid(); }

    TokenIds tokenize(const std::string& caption) const {
        return tokenize_text(caption, cfg.text_encoder.max_text_len);
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        image_encoder.visit(prefix + "image_encoder", f);
        text_encoder.visit(prefix + "text_encoder", f);
        online.visit(prefix + "fusion_online", f);
        target.visit(prefix + "fusion_target", f);
        predictor.visit(prefix + "predictor", f);
    }
};

// s_y(i) for every target block: full-image and text encodings fused by
// X̃, rows picked at B_i. Entirely outside gradient flow.
template <typename T>
std::vector<BasicTensor<T>> make_targets(const TiJepaModel<T>& m, const Image& image, const TokenIds& ids,
                                         const MaskSet& masks) {
    NoGradScope<T> no_grad;
    const auto s_image = m.image_encoder(image);
    const auto s_text = m.text_encoder(ids);
    const auto s_y = m.target(s_image, s_text);
    std::vector<BasicTensor<T>> out;
    out.reserve(masks.targets.size());
    for (const auto& block : masks.targets) out.push_back(gather_rows(s_y, block.indices()));
    return out;
}

// s_x: the visible context patches encoded by f_I and fused by X with the
// caption. Rows follow masks.context.
template <typename T>
BasicTensor<T> make_context(const TiJepaModel<T>& m, const Image& image, const TokenIds& ids, const MaskSet& masks) {
    if (masks.context.empty()) throw ShapeError("make_context: empty context");
    const auto s_image = m.image_encoder(image, masks.context);
    const auto s_text = m.text_encoder(ids);
    return m.online(s_image, s_text);
}

template <typename T>
BasicTensor<T> predict(const TiJepaModel<T>& m, const BasicTensor<T>& s_x, const std::vector<std::size_t>& context,
                       const BlockMask& target_block) {
    return m.predictor(s_x, context, target_block.indices(), m.grid());
}

// One example's L_P. `context_ids` lets evaluation feed a different caption
// to the context path while targets keep the true one.
template <typename T>
BasicTensor<T> example_loss(const TiJepaModel<T>& m, const Image& image, const TokenIds& ids, const MaskSet& masks,
                            const TokenIds* context_ids = nullptr) {
    const auto targets = make_targets(m, image, ids, masks);
    const auto s_x = make_context(m, image, context_ids ? *context_ids : ids, masks);
    std::vector<BasicTensor<T>> preds;
    preds.reserve(masks.targets.size());
    for (const auto& block : masks.targets) preds.push_back(predict(m, s_x, masks.context, block));
    return prediction_loss(preds, targets, m.cfg.loss);
}

} // namespace tijepa
