#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <string>
#include <vector>

#include "tijepa/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is active and any input requires grad, records a closure that
// accumulates into the inputs' gradient buffers.
namespace tijepa {

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
    if (!active_tape<T>()) return false;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
BasicTensor<T> make_output(Shape shape, std::vector<T> data, bool track, const char* op) {
    for (const T& v : data) {
        if (!std::isfinite(v)) throw NumericalError(std::string(op) + " produced a non-finite value");
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = track;
    if (track) node->grad.assign(node->data.size(), T(0));
    return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
void prepare_grad(const BasicTensor<T>& t) {
    auto& n = *t.node();
    if (n.requires_grad && n.grad.empty()) n.grad.assign(n.data.size(), T(0));
}

template <typename T>
void require_rank2(const BasicTensor<T>& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// c[m×n] += a[m×k] · b[k×n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T* bp = b + p * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            c[i * k + p] += acc;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

template <typename T>
T gelu_scalar(T x) {
    constexpr T k = T(0.7978845608028654); // sqrt(2/pi)
    const T u = k * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_derivative(T x) {
    constexpr T k = T(0.7978845608028654);
    const T u = k * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = k * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

} // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n, T(0));
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    const bool track = detail::should_record({&a, &b});
    auto c = detail::make_output({m, n}, std::move(out), track, "matmul");
    if (track) {
        detail::prepare_grad(a);
        detail::prepare_grad(b);
        active_tape<T>()->record([an = a.node(), bn = b.node(), cn = c.node(), m, k, n] {
            if (an->requires_grad) detail::gemm_nt(cn->grad.data(), bn->data.data(), an->grad.data(), m, n, k);
            if (bn->requires_grad) detail::gemm_tn(an->data.data(), cn->grad.data(), bn->grad.data(), m, k, n);
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    const bool track = detail::should_record({&a});
    auto c = detail::make_output({n, m}, std::move(out), track, "transpose");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node(), m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += cn->grad[j * m + i];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    const bool track = detail::should_record({&a});
    auto c = detail::make_output(std::move(shape), std::move(out), track, "reshape");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node()] {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += cn->grad[i];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    const bool track = detail::should_record({&a, &b});
    auto c = detail::make_output(a.shape(), std::move(out), track, "add");
    if (track) {
        detail::prepare_grad(a);
        detail::prepare_grad(b);
        active_tape<T>()->record([an = a.node(), bn = b.node(), cn = c.node()] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) an->grad[i] += cn->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) bn->grad[i] += cn->grad[i];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    const bool track = detail::should_record({&a, &b});
    auto c = detail::make_output(a.shape(), std::move(out), track, "sub");
    if (track) {
        detail::prepare_grad(a);
        detail::prepare_grad(b);
        active_tape<T>()->record([an = a.node(), bn = b.node(), cn = c.node()] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) an->grad[i] += cn->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) bn->grad[i] -= cn->grad[i];
        });
    }
    return c;
}

// Elementwise product.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    const bool track = detail::should_record({&a, &b});
    auto c = detail::make_output(a.shape(), std::move(out), track, "mul");
    if (track) {
        detail::prepare_grad(a);
        detail::prepare_grad(b);
        active_tape<T>()->record([an = a.node(), bn = b.node(), cn = c.node()] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) an->grad[i] += cn->grad[i] * bn->data[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) bn->grad[i] += cn->grad[i] * an->data[i];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    const bool track = detail::should_record({&a});
    auto c = detail::make_output(a.shape(), std::move(out), track, "scale");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node(), s] {
            for (std::size_t i = 0; i < cn->grad.size(); ++i) an->grad[i] += cn->grad[i] * s;
        });
    }
    return c;
}

// a[m×n] + bias[n], the bias repeated over the leading axis.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
    detail::require_rank2(a, "add_bias");
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.size() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
    const bool track = detail::should_record({&a, &bias});
    auto c = detail::make_output(a.shape(), std::move(out), track, "add_bias");
    if (track) {
        detail::prepare_grad(a);
        detail::prepare_grad(bias);
        active_tape<T>()->record([an = a.node(), bn = bias.node(), cn = c.node(), m, n] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < cn->grad.size(); ++i) an->grad[i] += cn->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bn->grad[j] += cn->grad[i * n + j];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    const bool track = detail::should_record({&a});
    auto c = detail::make_output<T>({1}, {acc}, track, "sum");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node()] {
            const T g = cn->grad[0];
            for (auto& v : an->grad) v += g;
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
    const bool track = detail::should_record({&a});
    auto c = detail::make_output(a.shape(), std::move(out), track, "abs");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node()] {
            for (std::size_t i = 0; i < cn->grad.size(); ++i) {
                const T x = an->data[i];
                const T sgn = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                an->grad[i] += cn->grad[i] * sgn;
            }
        });
    }
    return c;
}

// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    std::vector<T> out(x.size());
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t q = 0; q < inner; ++q) {
            const std::size_t base = o * len * inner + q;
            T mx = in[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
            T total = T(0);
            for (std::size_t j = 0; j < len; ++j) {
                const T e = std::exp(in[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    const bool track = detail::should_record({&x});
    auto y = detail::make_output(x.shape(), std::move(out), track, "softmax");
    if (track) {
        detail::prepare_grad(x);
        active_tape<T>()->record([xn = x.node(), yn = y.node(), outer, inner, len] {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t q = 0; q < inner; ++q) {
                    const std::size_t base = o * len * inner + q;
                    T dot = T(0);
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        dot += yn->grad[idx] * yn->data[idx];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        xn->grad[idx] += yn->data[idx] * (yn->grad[idx] - dot);
                    }
                }
            }
        });
    }
    return y;
}

// Normalizes each row over the last axis, then applies gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm on rank-0 tensor");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    if (gain.size() != n || bias.size() != n) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
    }
    if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
    std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = in.data() + r * n;
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(n);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (row[j] - mu) * rstd[r];
            xhat[r * n + j] = h;
            out[r * n + j] = h * gain[j] + bias[j];
        }
    }
    const bool track = detail::should_record({&x, &gain, &bias});
    auto y = detail::make_output(x.shape(), std::move(out), track, "layer_norm");
    if (track) {
        detail::prepare_grad(x);
        detail::prepare_grad(gain);
        detail::prepare_grad(bias);
        active_tape<T>()->record([xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node(),
                                  xhat = std::move(xhat), rstd = std::move(rstd), rows, n] {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* dy = yn->grad.data() + r * n;
                const T* h = xhat.data() + r * n;
                if (gn->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) gn->grad[j] += dy[j] * h[j];
                if (bn->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) bn->grad[j] += dy[j];
                if (xn->requires_grad) {
                    T mean_dh = T(0), mean_dh_h = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dh = dy[j] * gn->data[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh /= static_cast<T>(n);
                    mean_dh_h /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dh = dy[j] * gn->data[j];
                        xn->grad[r * n + j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return y;
}

// Tanh-approximation GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_scalar(x[i]);
    const bool track = detail::should_record({&x});
    auto y = detail::make_output(x.shape(), std::move(out), track, "gelu");
    if (track) {
        detail::prepare_grad(x);
        active_tape<T>()->record([xn = x.node(), yn = y.node()] {
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                xn->grad[i] += yn->grad[i] * detail::gelu_derivative(xn->data[i]);
        });
    }
    return y;
}

// Selects rows of a 2-D tensor; indices may repeat.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& a, const std::vector<std::size_t>& idx) {
    detail::require_rank2(a, "gather_rows");
    const std::size_t n = a.cols();
    if (idx.empty()) throw ShapeError("gather_rows: empty index list");
    std::vector<T> out(idx.size() * n);
    const auto src = a.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                             std::to_string(a.rows()) + " rows");
        }
        std::copy_n(src.data() + idx[r] * n, n, out.data() + r * n);
    }
    const bool track = detail::should_record({&a});
    auto c = detail::make_output({idx.size(), n}, std::move(out), track, "gather_rows");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node(), idx, n] {
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < n; ++j) an->grad[idx[r] * n + j] += cn->grad[r * n + j];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
        total += p.rows();
        track = track || detail::should_record({&p});
    }
    std::vector<T> out;
    out.reserve(total * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto c = detail::make_output({total, n}, std::move(out), track, "concat_rows");
    if (track) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts) {
            detail::prepare_grad(p);
            nodes.push_back(p.node());
        }
        active_tape<T>()->record([nodes = std::move(nodes), cn = c.node()] {
            std::size_t off = 0;
            for (const auto& pn : nodes) {
                if (pn->requires_grad)
                    for (std::size_t i = 0; i < pn->data.size(); ++i) pn->grad[i] += cn->grad[off + i];
                off += pn->data.size();
            }
        });
    }
    return c;
}

// Columns [begin, end) of a 2-D tensor.
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    detail::require_rank2(a, "slice_cols");
    if (begin >= end || end > a.cols()) throw ShapeError("slice_cols: invalid column range");
    const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
    std::vector<T> out(m * w);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(src.data() + i * n + begin, w, out.data() + i * w);
    const bool track = detail::should_record({&a});
    auto c = detail::make_output({m, w}, std::move(out), track, "slice_cols");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node(), m, n, w, begin] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) an->grad[i * n + begin + j] += cn->grad[i * w + j];
        });
    }
    return c;
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
        total += p.cols();
        track = track || detail::should_record({&p});
    }
    std::vector<T> out(m * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(p.data().data() + i * w, w, out.data() + i * total + off);
        off += w;
    }
    auto c = detail::make_output({m, total}, std::move(out), track, "concat_cols");
    if (track) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts) {
            detail::prepare_grad(p);
            nodes.push_back(p.node());
        }
        active_tape<T>()->record([nodes = std::move(nodes), cn = c.node(), m, total] {
            std::size_t off = 0;
            for (const auto& pn : nodes) {
                const std::size_t w = pn->shape[1];
                if (pn->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) pn->grad[i * w + j] += cn->grad[i * total + off + j];
                off += w;
            }
        });
    }
    return c;
}

// Mean over rows: [m×n] -> [1×n].
template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a) {
    detail::require_rank2(a, "mean_rows");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.at(i, j);
    for (auto& v : out) v /= static_cast<T>(m);
    const bool track = detail::should_record({&a});
    auto c = detail::make_output({1, n}, std::move(out), track, "mean_rows");
    if (track) {
        detail::prepare_grad(a);
        active_tape<T>()->record([an = a.node(), cn = c.node(), m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += cn->grad[j] / static_cast<T>(m);
        });
    }
    return c;
}

// -log softmax(logits)[label], computed through log-sum-exp.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::size_t label) {
    const std::size_t k = logits.size();
    if (label >= k) {
        throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(k) + " classes");
    }
    const auto z = logits.data();
    const T mx = *std::max_element(z.begin(), z.end());
    T total = T(0);
    for (T v : z) total += std::exp(v - mx);
    const T lse = mx + std::log(total);
    const bool track = detail::should_record({&logits});
    auto c = detail::make_output<T>({1}, {lse - z[label]}, track, "cross_entropy");
    if (track) {
        detail::prepare_grad(logits);
        active_tape<T>()->record([ln = logits.node(), cn = c.node(), lse, label] {
            const T g = cn->grad[0];
            for (std::size_t i = 0; i < ln->data.size(); ++i) {
                const T p = std::exp(ln->data[i] - lse);
                ln->grad[i] += g * (p - (i == label ? T(1) : T(0)));
            }
        });
    }
    return c;
}

} // namespace tijepa
