#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tijepa/layers.hpp"

namespace tijepa {

// Planar RGB image, values in [0, 1], stored channel-major (C, H, W).
struct Image {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), values(3 * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

    bool operator==(const Image&) const = default;
};

struct GridSize {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t count() const { return rows * cols; }
    bool operator==(const GridSize&) const = default;
};

inline GridSize patch_grid(std::size_t height, std::size_t width, std::size_t patch) {
    if (patch == 0) throw ConfigError("patch size must be at least 1");
    if (height % patch != 0 || width % patch != 0) {
        throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch size " + std::to_string(patch));
    }
    return {height / patch, width / patch};
}

// Splits the image into non-overlapping p×p patches. Row k is patch k in
// row-major grid order, flattened as (channel, y, x).
template <typename T = float>
BasicTensor<T> patchify(const Image& img, std::size_t p) {
    if (img.channels != 3) throw ShapeError("patchify expects 3 channels");
    const auto grid = patch_grid(img.height, img.width, p);
    const std::size_t len = img.channels * p * p;
    std::vector<T> out(grid.count() * len);
    for (std::size_t gr = 0; gr < grid.rows; ++gr) {
        for (std::size_t gc = 0; gc < grid.cols; ++gc) {
            T* dst = out.data() + (gr * grid.cols + gc) * len;
            for (std::size_t c = 0; c < img.channels; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        *dst++ = static_cast<T>(img.at(c, gr * p + y, gc * p + x));
        }
    }
    return BasicTensor<T>({grid.count(), len}, std::move(out));
}

inline Image unpatchify(const Tensor& patches, std::size_t p, std::size_t height, std::size_t width) {
    const auto grid = patch_grid(height, width, p);
    if (patches.rank() != 2 || patches.rows() != grid.count() || patches.cols() != 3 * p * p) {
        throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " does not match image geometry");
    }
    Image img(height, width);
    const auto src = patches.data();
    std::size_t i = 0;
    for (std::size_t gr = 0; gr < grid.rows; ++gr)
        for (std::size_t gc = 0; gc < grid.cols; ++gc)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) img.at(c, gr * p + y, gc * p + x) = src[i++];
    return img;
}

namespace detail {

// Fills out[0..dim) with [sin(pos·ω_0..), cos(pos·ω_0..)], ω_i = 10000^(-i/(dim/2)).
inline void sincos_1d(double pos, std::size_t dim, double* out) {
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(pos * omega);
        out[half + i] = std::cos(pos * omega);
    }
}

} // namespace detail

// Fixed 2-D sine-cosine positions: the first dim/2 columns encode the grid
// row, the remaining dim/2 the grid column.
template <typename T = float>
BasicTensor<T> sincos_pos_2d(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
    if (dim == 0 || dim % 4 != 0) throw ConfigError("2-D positional encoding needs dim divisible by 4");
    std::vector<double> buf(dim);
    std::vector<T> out;
    out.reserve(grid_h * grid_w * dim);
    for (std::size_t r = 0; r < grid_h; ++r) {
        for (std::size_t c = 0; c < grid_w; ++c) {
            detail::sincos_1d(static_cast<double>(r), dim / 2, buf.data());
            detail::sincos_1d(static_cast<double>(c), dim / 2, buf.data() + dim / 2);
            for (double v : buf) out.push_back(static_cast<T>(v));
        }
    }
    return BasicTensor<T>({grid_h * grid_w, dim}, std::move(out));
}

template <typename T = float>
BasicTensor<T> sincos_pos_1d(std::size_t length, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("1-D positional encoding needs an even dim");
    std::vector<double> buf(dim);
    std::vector<T> out;
    out.reserve(length * dim);
    for (std::size_t i = 0; i < length; ++i) {
        detail::sincos_1d(static_cast<double>(i), dim, buf.data());
        for (double v : buf) out.push_back(static_cast<T>(v));
    }
    return BasicTensor<T>({length, dim}, std::move(out));
}

// ---- byte-level tokenizer ------------------------------------------------

inline constexpr std::uint32_t kBos = 256;
inline constexpr std::uint32_t kEos = 257;
inline constexpr std::size_t kVocabSize = 258;

using TokenIds = std::vector<std::uint32_t>;

inline TokenIds tokenize_text(std::string_view caption, std::size_t max_len) {
    TokenIds ids;
    ids.reserve(caption.size() + 2);
    ids.push_back(kBos);
    for (unsigned char ch : caption) ids.push_back(ch);
    ids.push_back(kEos);
    if (ids.size() > max_len) ids.resize(max_len);
    return ids;
}

inline std::string detokenize_text(const TokenIds& ids) {
    std::string out;
    for (auto id : ids) {
        if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

// ---- encoders ------------------------------------------------------------

struct EncoderConfig {
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t max_text_len = 32;
    std::size_t mlp_ratio = 4;
    bool frozen = true;

    void validate() const {
        if (patch_size == 0) throw ConfigError("patch_size must be >= 1");
        if (heads == 0 || embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
        if (max_text_len < 2) throw ConfigError("max_text_len must be >= 2");
    }
};

// Linear patch embedding + fixed 2-D positions + transformer blocks.
template <typename T>
struct ImageEncoder {
    using scalar_type = T;

    EncoderConfig cfg;
    Linear<T> patch_embed;
    std::vector<TransformerBlock<T>> blocks;

    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& c, Rng& rng, double init_std, T eps = T(1e-6)) : cfg(c) {
        cfg.validate();
        if (cfg.embed_dim % 4 != 0) throw ConfigError("image embed_dim must be divisible by 4");
        // fan-in scaled so pixel content is not swamped by the unit-scale positions
        const std::size_t fan_in = 3 * cfg.patch_size * cfg.patch_size;
        patch_embed = Linear<T>(fan_in, cfg.embed_dim, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < cfg.depth; ++i)
            blocks.emplace_back(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng, init_std, eps);
    }

    // Encodes only the visible patches (all when omitted). Rows follow
    // ascending patch index.
    BasicTensor<T> operator()(const Image& img, const std::optional<std::vector<std::size_t>>& visible = {}) const {
        const auto grid = patch_grid(img.height, img.width, cfg.patch_size);
        const auto patches = patchify<T>(img, cfg.patch_size);
        const auto pos = sincos_pos_2d<T>(grid.rows, grid.cols, cfg.embed_dim);
        std::vector<std::size_t> idx;
        if (visible) {
            idx = *visible;
            std::sort(idx.begin(), idx.end());
            idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
            if (idx.empty()) throw ShapeError("encode_image: empty visible set");
            if (idx.back() >= grid.count()) {
                throw ShapeError("encode_image: patch index " + std::to_string(idx.back()) + " out of range [0, " +
                                 std::to_string(grid.count()) + ")");
            }
        } else {
            idx.resize(grid.count());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        }
        auto x = add(patch_embed(gather_rows(patches, idx)), gather_rows(pos, idx));
        for (const auto& b : blocks) x = b(x);
        return x;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        patch_embed.visit(prefix + ".patch_embed", f);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
    }
};

// Byte-token embedding + fixed 1-D positions + transformer blocks.
template <typename T>
struct TextEncoder {
    using scalar_type = T;

    EncoderConfig cfg;
    BasicTensor<T> token_embed; // [vocab × dim]
    std::vector<TransformerBlock<T>> blocks;

    TextEncoder() = default;
    TextEncoder(const EncoderConfig& c, Rng& rng, double init_std, T eps = T(1e-6)) : cfg(c) {
        cfg.validate();
        if (cfg.embed_dim % 2 != 0) throw ConfigError("text embed_dim must be even");
        token_embed = normal_tensor<T>({kVocabSize, cfg.embed_dim}, rng, 1.0);
        for (std::size_t i = 0; i < cfg.depth; ++i)
            blocks.emplace_back(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng, init_std, eps);
    }

    BasicTensor<T> operator()(const TokenIds& ids) const {
        if (ids.empty()) throw ShapeError("encode_text: empty token list");
        std::vector<std::size_t> rows;
        rows.reserve(ids.size());
        for (auto id : ids) {
            if (id >= kVocabSize) throw ShapeError("encode_text: token id " + std::to_string(id) + " out of vocabulary");
            rows.push_back(id);
        }
        auto x = add(gather_rows(token_embed, rows), sincos_pos_1d<T>(ids.size(), cfg.embed_dim));
        for (const auto& b : blocks) x = b(x);
        return x;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".token_embed", token_embed);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
    }
};

} // namespace tijepa
