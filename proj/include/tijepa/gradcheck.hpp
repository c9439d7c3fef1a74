#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tijepa/ops.hpp"

namespace tijepa {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0; // number of scalar entries compared
    bool passed = false;
};

using DTensor = BasicTensor<double>;
using ScalarFn = std::function<DTensor(const std::vector<DTensor>&)>;

// Compares tape gradients of a scalar function with central differences,
// all in double precision. The error of each input is
//   ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor)
// and the reported value is the maximum over inputs that require grad. The
// floor keeps inputs whose true gradient is exactly zero (a key bias under
// softmax, say) from dividing rounding noise by rounding noise.
inline GradCheckResult check_gradients(std::string name, std::vector<DTensor> inputs, const ScalarFn& fn,
                                       double h = 1e-4, double tol = 1e-4, double floor = 1e-5) {
    GradCheckResult res;
    res.name = std::move(name);

    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        for (auto& in : inputs) in.zero_grad();
        auto loss = fn(inputs);
        tape.backward(loss);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!inputs[i].requires_grad()) continue;
            if (inputs[i].has_grad()) {
                analytic[i].assign(inputs[i].grad().begin(), inputs[i].grad().end());
            } else {
                analytic[i].assign(inputs[i].size(), 0.0);
            }
        }
    }

    NoGradScope<double> no_grad;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto values = inputs[i].mutable_data();
        double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
        for (std::size_t e = 0; e < values.size(); ++e) {
            const double orig = values[e];
            values[e] = orig + h;
            const double fp = fn(inputs).item();
            values[e] = orig - h;
            const double fm = fn(inputs).item();
            values[e] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][e];
            diff2 += (a - numeric) * (a - numeric);
            an2 += a * a;
            nu2 += numeric * numeric;
            ++res.checked;
        }
        const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), floor});
        res.max_rel_error = std::max(res.max_rel_error, std::sqrt(diff2) / denom);
    }
    res.passed = res.max_rel_error < tol;
    return res;
}

// Reduces a tensor-valued op to a scalar with a fixed random weighting so
// every output element contributes a distinct coefficient.
inline DTensor weighted_sum(const DTensor& y, const DTensor& weights) { return sum(mul(y, weights)); }

} // namespace tijepa
