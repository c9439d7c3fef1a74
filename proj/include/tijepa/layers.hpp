#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tijepa/ops.hpp"
#include "tijepa/rng.hpp"

namespace tijepa {

template <typename T>
BasicTensor<T> normal_tensor(Shape shape, Rng& rng, double stddev) {
    std::vector<T> v(shape_size(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return BasicTensor<T>(std::move(shape), std::move(v), true);
}

// y = x·W + b with W stored [in × out].
template <typename T>
struct Linear {
    using scalar_type = T;

    BasicTensor<T> weight;
    BasicTensor<T> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double init_std)
        : weight(normal_tensor<T>({in, out}, rng, init_std)), bias(BasicTensor<T>::zeros({out}, true)) {}

    std::size_t in_features() const { return weight.rows(); }
    std::size_t out_features() const { return weight.cols(); }

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_bias(matmul(x, weight), bias); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }
};

template <typename T>
struct LayerNorm {
    using scalar_type = T;

    BasicTensor<T> gain;
    BasicTensor<T> bias;
    T eps = T(1e-6);

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim, T eps_ = T(1e-6))
        : gain(BasicTensor<T>::full({dim}, T(1), true)), bias(BasicTensor<T>::zeros({dim}, true)), eps(eps_) {}

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias, eps); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gain", gain);
        f(prefix + ".bias", bias);
    }
};

template <typename T>
struct Mlp {
    using scalar_type = T;

    Linear<T> fc1;
    Linear<T> fc2;

    Mlp() = default;
    Mlp(std::size_t dim, std::size_t hidden, Rng& rng, double init_std)
        : fc1(dim, hidden, rng, init_std), fc2(hidden, dim, rng, init_std) {}

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return fc2(gelu(fc1(x))); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        fc1.visit(prefix + ".fc1", f);
        fc2.visit(prefix + ".fc2", f);
    }
};

// Learned Q/K/V/output projections for multi-head attention.
template <typename T>
struct AttentionParams {
    using scalar_type = T;

    Linear<T> q, k, v, out;
    std::size_t heads = 1;

    AttentionParams() = default;
    AttentionParams(std::size_t dim, std::size_t heads_, Rng& rng, double init_std)
        : q(dim, dim, rng, init_std), k(dim, dim, rng, init_std), v(dim, dim, rng, init_std),
          out(dim, dim, rng, init_std), heads(heads_) {
        if (heads == 0 || dim % heads != 0) {
            throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
    }

    std::size_t dim() const { return q.in_features(); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        q.visit(prefix + ".q", f);
        k.visit(prefix + ".k", f);
        v.visit(prefix + ".v", f);
        out.visit(prefix + ".out", f);
    }
};

// Multi-head scaled dot-product attention. Queries come from q_src and
// keys/values from kv_src: self-attention when they are the same tensor,
// cross-attention otherwise. Output keeps q_src's row count.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q_src, const BasicTensor<T>& kv_src, const AttentionParams<T>& p) {
    detail::require_rank2(q_src, "attention");
    detail::require_rank2(kv_src, "attention");
    const std::size_t d = p.dim();
    if (q_src.cols() != d || kv_src.cols() != d) {
        throw ShapeError("attention: inputs " + shape_str(q_src.shape()) + " / " + shape_str(kv_src.shape()) +
                         " do not match width " + std::to_string(d));
    }
    if (p.heads == 0 || d % p.heads != 0) throw ShapeError("attention: width not divisible by heads");
    const std::size_t dh = d / p.heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    const auto q = p.q(q_src);
    const auto k = p.k(kv_src);
    const auto v = p.v(kv_src);
    if (p.heads == 1) {
        const auto w = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
        return p.out(matmul(w, v));
    }
    std::vector<BasicTensor<T>> per_head;
    per_head.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        const auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        const auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        const auto w = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
        per_head.push_back(matmul(w, vh));
    }
    return p.out(concat_cols(per_head));
}

// Pre-norm transformer encoder block: x + Attn(LN x), then x + MLP(LN x).
template <typename T>
struct TransformerBlock {
    using scalar_type = T;

    LayerNorm<T> norm1;
    AttentionParams<T> attn;
    LayerNorm<T> norm2;
    Mlp<T> mlp;

    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng, double init_std, T eps)
        : norm1(dim, eps), attn(dim, heads, rng, init_std), norm2(dim, eps), mlp(dim, dim * mlp_ratio, rng, init_std) {}

    BasicTensor<T> operator()(const BasicTensor<T>& x) const {
        const auto h = norm1(x);
        auto y = add(x, attention(h, h, attn));
        return add(y, mlp(norm2(y)));
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        norm1.visit(prefix + ".norm1", f);
        attn.visit(prefix + ".attn", f);
        norm2.visit(prefix + ".norm2", f);
        mlp.visit(prefix + ".mlp", f);
    }
};

// Visits every parameter of `module` and toggles its gradient tracking.
template <typename M>
void set_trainable(M& module, bool on) {
    module.visit("", [on](const std::string&, auto& t) { t.set_requires_grad(on); });
}

template <typename M>
std::size_t count_parameters(M& module) {
    std::size_t n = 0;
    module.visit("", [&n](const std::string&, auto& t) { n += t.size(); });
    return n;
}

} // namespace tijepa
