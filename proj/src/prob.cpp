#include "qres/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qres/gaussian.hpp"

namespace qres {

using detail::make_op_output;
using detail::TensorImpl;

int QuantizedPmf::find(uint32_t value) const {
    auto it = std::upper_bound(cdf.begin(), cdf.end(), value);
    int idx = static_cast<int>(it - cdf.begin()) - 1;
    if (idx < 0 || idx >= alphabet_size()) throw DecodeError("QuantizedPmf::find: value out of range");
    return idx;
}

Tensor posterior_sample_train(const PosteriorStats& post, Rng& rng) {
    const Tensor& mu = post.mu;
    Tensor noise = Tensor::zeros(mu.shape());
    double* pn = noise.data();
    for (int64_t i = 0; i < noise.numel(); ++i) pn[i] = rng.uniform_centered();
    return add(mu, noise);
}

namespace {

// Shared fused kernel: out_i = log(max(mass_i, kPmfFloor)). Gradients use
// the floored mass in the denominator, which bounds them instead of letting
// 1/mass blow up when the window lands deep in a tail.
Tensor window_logpdf_impl(const Tensor& values, const Tensor& mean, const Tensor& sigma,
                          bool values_get_grad, double lattice_lo, double lattice_hi) {
    if (values.shape() != mean.shape() || values.shape() != sigma.shape())
        throw ShapeError("logpdf: shape mismatch");
    int64_t n = values.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pv = values.data();
    const double* pm = mean.data();
    const double* ps = sigma.data();
    bool bounded = lattice_lo <= lattice_hi;
    for (int64_t i = 0; i < n; ++i) {
        double delta = pv[i] - pm[i];
        bool fold_lo = bounded && pv[i] <= lattice_lo;
        bool fold_hi = bounded && pv[i] >= lattice_hi;
        double m = gauss_window_mass(delta, ps[i], fold_lo, fold_hi);
        out[static_cast<size_t>(i)] = std::log(std::max(m, kPmfFloor));
    }
    auto vi = values.impl(), mi = mean.impl(), si = sigma.impl();
    return make_op_output(
        values.shape(), std::move(out), {values, mean, sigma},
        [vi, mi, si, n, values_get_grad, bounded, lattice_lo, lattice_hi](TensorImpl& self) {
            bool want_v = values_get_grad && vi->requires_grad;
            bool want_m = mi->requires_grad;
            bool want_s = si->requires_grad;
            if (want_v) vi->ensure_grad();
            if (want_m) mi->ensure_grad();
            if (want_s) si->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                double v = vi->data[i];
                double delta = v - mi->data[i];
                bool fold_lo = bounded && v <= lattice_lo;
                bool fold_hi = bounded && v >= lattice_hi;
                WindowMassGrad wg =
                    gauss_window_mass_grad(delta, si->data[i], fold_lo, fold_hi);
                double inv_p = 1.0 / std::max(wg.mass, kPmfFloor);
                double g = self.grad[i];
                if (want_v) vi->grad[i] += g * wg.d_delta * inv_p;
                if (want_m) mi->grad[i] -= g * wg.d_delta * inv_p;
                if (want_s) si->grad[i] += g * wg.d_sigma * inv_p;
            }
        });
}

}  // namespace

Tensor prior_logpdf(const Tensor& z, const PriorStats& prior) {
    return window_logpdf_impl(z, prior.mu_hat, prior.sigma_hat, true, 1.0, 0.0);
}

Tensor lattice_logpdf(const Tensor& values, const Tensor& mean, const Tensor& sigma,
                      double lattice_lo, double lattice_hi) {
    if (lattice_lo > lattice_hi) throw ContractError("lattice_logpdf: bad lattice bounds");
    return window_logpdf_impl(values, mean, sigma, false, lattice_lo, lattice_hi);
}

Tensor prior_sample(const PriorStats& prior, double t, Rng& rng) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("prior_sample: t must be in [0, 1]");
    const Tensor& mu = prior.mu_hat;
    if (mu.shape() != prior.sigma_hat.shape()) throw ShapeError("prior_sample: shape mismatch");
    if (t == 0.0) return mu.detach();
    Tensor out = Tensor::zeros(mu.shape());
    double* po = out.data();
    const double* pm = mu.data();
    const double* ps = prior.sigma_hat.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        double w = rng.normal();
        double u = rng.uniform_centered();
        po[i] = pm[i] + t * (ps[i] * w + u);
    }
    return out;
}

Tensor residual_round(const PosteriorStats& post, const Tensor& mu_hat) {
    const Tensor& mu = post.mu;
    if (mu.shape() != mu_hat.shape()) throw ShapeError("residual_round: shape mismatch");
    Tensor out = Tensor::zeros(mu.shape());
    double* po = out.data();
    const double* pm = mu.data();
    const double* ph = mu_hat.data();
    for (int64_t i = 0; i < out.numel(); ++i)
        po[i] = ph[i] + round_half_even(pm[i] - ph[i]);
    return out;
}

double pmf_real_mass(int n, double sigma_hat) {
    return gauss_window_mass(static_cast<double>(n), sigma_hat);
}

namespace {

// Largest-remainder apportionment to exactly `total`, then lift zero
// entries to 1 by taking units from the largest entries.
std::vector<uint32_t> quantize_masses(const std::vector<double>& masses, uint32_t total) {
    size_t k = masses.size();
    std::vector<uint32_t> q(k);
    std::vector<double> remainder(k);
    uint64_t assigned = 0;
    for (size_t i = 0; i < k; ++i) {
        double ideal = masses[i] * static_cast<double>(total);
        double base = std::floor(ideal);
        q[i] = static_cast<uint32_t>(base);
        remainder[i] = ideal - base;
        assigned += q[i];
    }
    if (assigned > total) throw ContractError("quantize_masses: mass exceeds 1");
    uint64_t leftover = total - assigned;
    std::vector<size_t> idx(k);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
    for (size_t j = 0; leftover > 0; j = (j + 1) % k) {
        ++q[idx[j]];
        --leftover;
    }
    // Enforce the 1-unit floor, stealing from the current maximum.
    for (size_t i = 0; i < k; ++i) {
        while (q[i] == 0) {
            size_t donor = static_cast<size_t>(
                std::max_element(q.begin(), q.end()) - q.begin());
            if (q[donor] < 2) throw ContractError("quantize_masses: alphabet too large for total");
            --q[donor];
            ++q[i];
        }
    }
    return q;
}

QuantizedPmf pmf_from_masses(std::vector<double> masses, int32_t offset) {
    QuantizedPmf pmf;
    pmf.offset = offset;
    std::vector<uint32_t> q = quantize_masses(masses, kCdfTotal);
    pmf.cdf.resize(q.size() + 1);
    pmf.cdf[0] = 0;
    for (size_t i = 0; i < q.size(); ++i) pmf.cdf[i + 1] = pmf.cdf[i] + q[i];
    return pmf;
}

}  // namespace

QuantizedPmf build_pmf(double /*mu_hat*/, double sigma_hat) {
    double s = std::min(std::max(sigma_hat, kSigmaMin), kSigmaMax);
    int radius = static_cast<int>(std::ceil(kTailSigmas * s)) + 1;
    std::vector<double> masses(static_cast<size_t>(2 * radius + 1));
    for (int n = -radius; n <= radius; ++n) {
        bool fold_lo = n == -radius;
        bool fold_hi = n == radius;
        masses[static_cast<size_t>(n + radius)] =
            gauss_window_mass(static_cast<double>(n), s, fold_lo, fold_hi);
    }
    return pmf_from_masses(std::move(masses), -radius);
}

QuantizedPmf build_pixel_pmf(double mean, double sigma) {
    double s = std::min(std::max(sigma, kSigmaMin), 256.0);
    std::vector<double> masses(256);
    for (int v = 0; v < 256; ++v)
        masses[static_cast<size_t>(v)] =
            gauss_window_mass(static_cast<double>(v) - mean, s, v == 0, v == 255);
    return pmf_from_masses(std::move(masses), 0);
}

Tensor rate_term(const Tensor& z, const PriorStats& prior) {
    return neg(sum(prior_logpdf(z, prior)));
}

double estimated_bits(const Tensor& z, const PriorStats& prior) {
    if (z.shape() != prior.mu_hat.shape() || z.shape() != prior.sigma_hat.shape())
        throw ShapeError("estimated_bits: shape mismatch");
    const double* pz = z.data();
    const double* pm = prior.mu_hat.data();
    const double* ps = prior.sigma_hat.data();
    constexpr double inv_ln2 = 1.4426950408889634074;
    double bits = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
        double delta = pz[i] - pm[i];
        double n = round_half_even(delta);
        if (std::fabs(delta - n) > 1e-6 * std::max(1.0, std::fabs(pz[i])))
            throw ContractError("estimated_bits: z is off the mu_hat lattice");
        double m = std::max(gauss_window_mass(n, ps[i]), kPmfFloor);
        bits -= std::log(m) * inv_ln2;
    }
    return bits;
}

}  // namespace qres
