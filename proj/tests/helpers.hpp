#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qres/common.hpp"
#include "qres/tensor.hpp"

namespace qres::testing {

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0,
                            bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = scale * (2.0 * rng.uniform() - 1.0);
    return t;
}

// Projects `out` onto fixed random weights so the loss is scalar, then
// compares reverse-mode grads of every input against central differences.
// Returns the worst relative error over all input elements.
struct GradCheck {
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;
    double fd_step = 1e-5;

    double max_error = 0.0;

    // fn must recompute the output from the current input values each call.
    bool run(std::vector<Tensor> inputs, const std::function<Tensor()>& fn, Rng& rng) {
        Tensor out = fn();
        std::vector<double> proj(static_cast<size_t>(out.numel()));
        for (auto& v : proj) v = 2.0 * rng.uniform() - 1.0;

        auto scalar_loss = [&](const Tensor& o) {
            double s = 0.0;
            const double* p = o.data();
            for (int64_t i = 0; i < o.numel(); ++i) s += p[i] * proj[static_cast<size_t>(i)];
            return s;
        };

        // Analytic pass: loss = sum(out * proj) via tensor ops.
        Tensor weights = Tensor::from_data(out.shape(), proj);
        Tensor loss = sum(mul(out, weights));
        for (Tensor& t : inputs) t.zero_grad();
        backward(loss);

        max_error = 0.0;
        bool ok = true;
        for (Tensor& t : inputs) {
            if (!t.requires_grad()) continue;
            const double* g = t.has_grad() ? t.grad() : nullptr;
            for (int64_t i = 0; i < t.numel(); ++i) {
                double saved = t.data()[i];
                t.data()[i] = saved + fd_step;
                double up = scalar_loss(fn());
                t.data()[i] = saved - fd_step;
                double down = scalar_loss(fn());
                t.data()[i] = saved;
                double numeric = (up - down) / (2.0 * fd_step);
                double analytic = g ? g[i] : 0.0;
                double err = std::fabs(analytic - numeric);
                double denom = std::max(std::max(std::fabs(analytic), std::fabs(numeric)), 1.0);
                double rel = err / denom;
                max_error = std::max(max_error, rel);
                if (err > abs_tol + rel_tol * denom) ok = false;
            }
        }
        return ok;
    }
};

}  // namespace qres::testing
