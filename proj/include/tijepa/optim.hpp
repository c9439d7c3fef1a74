#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tijepa/log.hpp"
#include "tijepa/tensor.hpp"

namespace tijepa {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05; // decoupled; 0 gives plain Adam
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, BasicTensor<T>>>;

// Collects the parameters of a module that currently require grad.
template <typename M>
NamedParams<typename M::scalar_type> trainable_parameters(M& module) {
    NamedParams<typename M::scalar_type> out;
    module.visit("", [&out](const std::string& name, auto& t) {
        if (t.requires_grad()) out.emplace_back(name, t);
    });
    return out;
}

// Bias-corrected AdamW with decoupled weight decay.
template <typename T>
class AdamW {
public:
    struct Slot {
        std::string name;
        BasicTensor<T> param;
        std::vector<T> m;
        std::vector<T> v;
    };

    AdamW() = default;
    AdamW(const AdamWOptions& opts, const NamedParams<T>& params) : opts_(opts) {
        for (const auto& [name, p] : params) {
            slots_.push_back({name, p, std::vector<T>(p.size(), T(0)), std::vector<T>(p.size(), T(0))});
        }
    }

    void step() {
        for (auto& s : slots_) {
            if (!s.param.has_grad()) continue;
            for (T g : s.param.grad()) {
                if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + s.name);
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        const T lr = static_cast<T>(opts_.lr);
        const T decay = static_cast<T>(1.0 - opts_.lr * opts_.weight_decay);
        const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        const T eps = static_cast<T>(opts_.eps);
        for (auto& s : slots_) {
            auto p = s.param.mutable_data();
            const bool has_grad = s.param.has_grad();
            const auto g = s.param.grad();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T gi = has_grad ? g[i] : T(0);
                if (opts_.weight_decay != 0.0) p[i] *= decay;
                s.m[i] = b1 * s.m[i] + (T(1) - b1) * gi;
                s.v[i] = b2 * s.v[i] + (T(1) - b2) * gi * gi;
                const T mhat = static_cast<T>(s.m[i] / bc1);
                const T vhat = static_cast<T>(s.v[i] / bc2);
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) {
            s.param.ensure_grad();
            s.param.zero_grad();
        }
    }

    std::uint64_t step_count() const { return step_; }
    void set_step_count(std::uint64_t s) { step_ = s; }
    const AdamWOptions& options() const { return opts_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    AdamWOptions opts_;
    std::vector<Slot> slots_;
    std::uint64_t step_ = 0;
};

struct EmaSchedule {
    double m_start = 0.996;
    double m_end = 1.0;
    std::uint64_t total_steps = 1;
};

// Linear ramp from m_start to m_end; steps outside [0, total] are clamped.
inline double momentum_at(std::int64_t step, const EmaSchedule& sched) {
    const auto total = static_cast<std::int64_t>(sched.total_steps);
    if (step < 0 || step > total) {
        log::warn("momentum_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) +
                  "], clamping");
        step = std::clamp<std::int64_t>(step, 0, total);
    }
    if (total == 0 || step == total) return sched.m_end;
    if (step == 0) return sched.m_start;
    return sched.m_start + (sched.m_end - sched.m_start) * static_cast<double>(step) / static_cast<double>(total);
}

// θ̃ ← m·θ̃ + (1−m)·θ over two structurally identical modules.
template <typename M>
void ema_update(M& target, M& online, double m) {
    using T = typename M::scalar_type;
    std::vector<BasicTensor<T>> tgt, src;
    target.visit("", [&](const std::string&, auto& t) { tgt.push_back(t); });
    online.visit("", [&](const std::string&, auto& t) { src.push_back(t); });
    if (tgt.size() != src.size()) throw ShapeError("ema_update: modules have different parameter lists");
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (tgt[i].shape() != src[i].shape()) throw ShapeError("ema_update: parameter shape mismatch");
    }
    if (m == 1.0) return;
    const T one_minus = static_cast<T>(1.0 - m);
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        auto dst = tgt[i].mutable_data();
        const auto s = src[i].data();
        if (m == 0.0) {
            std::copy(s.begin(), s.end(), dst.begin());
        } else {
            // Same value as m·θ̃ + (1−m)·θ, but exact when θ̃ == θ.
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += one_minus * (s[j] - dst[j]);
        }
    }
}

// Mean over feature dimensions of the (population) standard deviation of
// every token across a batch: 0 when all tokens coincide.
template <typename T>
double collapse_metric(const std::vector<BasicTensor<T>>& batch) {
    if (batch.size() < 2) throw ConfigError("collapse_metric needs a batch of at least 2");
    const std::size_t d = batch.front().cols();
    std::vector<double> s1(d, 0.0), s2(d, 0.0);
    std::size_t count = 0;
    for (const auto& reps : batch) {
        if (reps.rank() != 2 || reps.cols() != d) throw ShapeError("collapse_metric: inconsistent widths");
        for (std::size_t r = 0; r < reps.rows(); ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                s1[j] += reps.at(r, j);
            }
            ++count;
        }
    }
    std::vector<double> mu(d);
    for (std::size_t j = 0; j < d; ++j) mu[j] = s1[j] / static_cast<double>(count);
    for (const auto& reps : batch)
        for (std::size_t r = 0; r < reps.rows(); ++r)
            for (std::size_t j = 0; j < d; ++j) {
                const double c = reps.at(r, j) - mu[j];
                s2[j] += c * c;
            }
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) total += std::sqrt(s2[j] / static_cast<double>(count));
    return total / static_cast<double>(d);
}

} // namespace tijepa
