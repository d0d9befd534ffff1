#pragma once

#include <cstdint>
#include <vector>

#include "qres/common.hpp"
#include "qres/tensor.hpp"

namespace qres {

// Probability-model constants. The 16-bit CDF precision is the contract
// between PMF construction and the entropy coder.
constexpr double kSigmaMin = 0.11;
constexpr double kSigmaMax = 64.0;
constexpr double kPmfFloor = 5.9604644775390625e-08;  // 2^-24
constexpr double kTailSigmas = 6.0;
constexpr int kCdfPrecisionBits = 16;
constexpr uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

// Grid of posterior means mu_i, one per latent element.
struct PosteriorStats {
    Tensor mu;
};

// Grids of prior means and (clamped) prior scales.
struct PriorStats {
    Tensor mu_hat;
    Tensor sigma_hat;
};

// Integer CDF over a bounded symbol alphabet: cdf[0] = 0, cdf.back() = 2^16,
// strictly increasing. Symbol values run offset .. offset + alphabet - 1.
struct QuantizedPmf {
    int32_t offset = 0;
    std::vector<uint32_t> cdf;

    int alphabet_size() const { return static_cast<int>(cdf.size()) - 1; }
    uint32_t freq(int index) const { return cdf[index + 1] - cdf[index]; }
    uint32_t cum(int index) const { return cdf[index]; }
    // Index of the unique symbol whose [cum, cum+freq) contains `value`.
    int find(uint32_t value) const;
};

// z = mu + u with u ~ U(-1/2, 1/2) i.i.d.; differentiable w.r.t. mu.
Tensor posterior_sample_train(const PosteriorStats& post, Rng& rng);

// Elementwise log of the Gaussian-convolved-uniform prior density,
// log[Phi((z-mu+1/2)/sigma) - Phi((z-mu-1/2)/sigma)], floored at
// log(kPmfFloor). Differentiable w.r.t. z, mu_hat and sigma_hat.
Tensor prior_logpdf(const Tensor& z, const PriorStats& prior);

// Same density on an arbitrary integer lattice with folded edges; used by
// the lossless pixel likelihood. `values` holds lattice points in
// [lattice_lo, lattice_hi] and does not receive gradients.
Tensor lattice_logpdf(const Tensor& values, const Tensor& mean, const Tensor& sigma,
                      double lattice_lo, double lattice_hi);

// z = mu_hat + t * (sigma_hat * w + u); t = 0 returns mu_hat bitwise.
Tensor prior_sample(const PriorStats& prior, double t, Rng& rng);

// z = mu_hat + round(mu - mu_hat), ties to even.
Tensor residual_round(const PosteriorStats& post, const Tensor& mu_hat);

// Discretized Gaussian over integer offsets n from the mu_hat lattice,
// |n| <= ceil(kTailSigmas * sigma) + 1, tails folded into the edge symbols,
// quantized to a total of exactly 2^16 with a 1-unit floor per symbol.
QuantizedPmf build_pmf(double mu_hat, double sigma_hat);

// Discretized Gaussian over the 256-level pixel lattice (symbols 0..255).
QuantizedPmf build_pixel_pmf(double mean, double sigma);

// Sum over elements of -prior_logpdf(z); scalar, gradient-capable.
Tensor rate_term(const Tensor& z, const PriorStats& prior);

// Ideal code length in bits of lattice symbols z under the real-valued
// (pre-quantization) discretized Gaussian, with the same kPmfFloor floor as
// prior_logpdf. z must lie on the mu_hat + Z lattice.
double estimated_bits(const Tensor& z, const PriorStats& prior);

// Real-valued mass that build_pmf quantizes; exposed for tests/oracles.
double pmf_real_mass(int n, double sigma_hat);

}  // namespace qres
