#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "qres/gaussian.hpp"
#include "qres/prob.hpp"

using namespace qres;
using qres::testing::GradCheck;
using qres::testing::random_tensor;

namespace {

PriorStats make_prior(std::vector<int64_t> shape, double mu, double sigma) {
    return {Tensor::full(shape, mu), Tensor::full(std::move(shape), sigma)};
}

}  // namespace

TEST_CASE("posterior_sample_train stays within the uniform support") {
    Rng rng(1);
    PosteriorStats post{random_tensor({2, 3, 4, 4}, rng, 5.0, false)};
    Rng noise(7);
    Tensor z = posterior_sample_train(post, noise);
    for (int64_t i = 0; i < z.numel(); ++i)
        CHECK(std::fabs(z.data()[i] - post.mu.data()[i]) <= 0.5);

    Rng noise2(7);
    Tensor z2 = posterior_sample_train(post, noise2);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == z2.data()[i]);
}

TEST_CASE("posterior noise has zero empirical mean") {
    Rng noise(123);
    PosteriorStats post{Tensor::zeros({1000000})};
    Tensor z = posterior_sample_train(post, noise);
    double sum = pairwise_sum(z.data(), z.numel());
    double mean = sum / static_cast<double>(z.numel());
    double stderr_bound = 3.0 * std::sqrt(1.0 / 12.0) / 1000.0;  // 3 sigma / sqrt(n)
    CHECK(std::fabs(mean) < stderr_bound);
}

TEST_CASE("posterior sampling is differentiable w.r.t. mu") {
    Rng rng(2);
    Tensor mu = random_tensor({2, 3}, rng);
    Rng noise(5);
    Tensor z = posterior_sample_train({mu}, noise);
    backward(sum(z));
    for (int64_t i = 0; i < mu.numel(); ++i) CHECK(mu.grad()[i] == 1.0);
}

TEST_CASE("prior_logpdf at the mean with sigma 1/2") {
    PriorStats prior = make_prior({1}, 0.0, 0.5);
    Tensor z = Tensor::zeros({1});
    double expect = std::log(std::erf(1.0 / std::sqrt(2.0)));  // log(Phi(1) - Phi(-1))
    CHECK(prior_logpdf(z, prior).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("prior_logpdf wide-sigma density limit") {
    PriorStats prior = make_prior({1}, 0.0, kSigmaMax);
    Tensor z = Tensor::zeros({1});
    double p = std::exp(prior_logpdf(z, prior).item());
    double density = 1.0 / (kSigmaMax * std::sqrt(2.0 * 3.14159265358979323846));
    CHECK(p == doctest::Approx(density).epsilon(0.01));
}

TEST_CASE("prior_logpdf is exactly symmetric around mu_hat") {
    for (double a : {0.25, 1.0, 3.5, 17.0}) {
        PriorStats prior = make_prior({1}, 1.5, 0.8);
        Tensor zp = Tensor::full({1}, 1.5 + a);
        Tensor zm = Tensor::full({1}, 1.5 - a);
        CHECK(prior_logpdf(zp, prior).item() == prior_logpdf(zm, prior).item());
    }
}

TEST_CASE("prior_logpdf floors at log(2^-24)") {
    PriorStats prior = make_prior({1}, 0.0, kSigmaMin);
    Tensor z = Tensor::full({1}, 1000.0);
    CHECK(prior_logpdf(z, prior).item() == std::log(kPmfFloor));
}

TEST_CASE("prior_logpdf gradients match finite differences") {
    // Inputs stay above the probability floor; the floored region uses a
    // deliberately damped gradient that a finite difference cannot see.
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        GradCheck gc;
        Tensor z = random_tensor({2, 4}, rng, 1.2);
        Tensor mu = random_tensor({2, 4}, rng, 1.2);
        Tensor sigma = random_tensor({2, 4}, rng, 0.5);
        for (int64_t i = 0; i < sigma.numel(); ++i)
            sigma.data()[i] = 0.5 + std::fabs(sigma.data()[i]);
        CHECK(gc.run({z, mu, sigma}, [&] { return prior_logpdf(z, {mu, sigma}); }, rng));
    }
}

TEST_CASE("floored prior_logpdf keeps a bounded, correctly signed gradient") {
    Tensor z = Tensor::full({1}, 1.2);
    Tensor mu = Tensor::zeros({1}, true);
    Tensor sigma = Tensor::full({1}, kSigmaMin).set_requires_grad(true);
    Tensor lp = prior_logpdf(z, {mu, sigma});
    CHECK(lp.item() == std::log(kPmfFloor));
    backward(sum(lp));
    // Raising mu toward z raises the probability.
    CHECK(mu.grad()[0] > 0.0);
    CHECK(std::isfinite(mu.grad()[0]));
    // Widening sigma raises the tail probability.
    CHECK(sigma.grad()[0] > 0.0);
    CHECK(std::isfinite(sigma.grad()[0]));
}

TEST_CASE("prior_sample at t=0 returns mu_hat bitwise") {
    Rng rng(3);
    PriorStats prior{random_tensor({3, 5}, rng, 4.0, false),
                     random_tensor({3, 5}, rng, 1.0, false)};
    for (int64_t i = 0; i < prior.sigma_hat.numel(); ++i)
        prior.sigma_hat.data()[i] = std::fabs(prior.sigma_hat.data()[i]) + kSigmaMin;
    Rng noise(9);
    Tensor z = prior_sample(prior, 0.0, noise);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == prior.mu_hat.data()[i]);

    CHECK_THROWS_AS(prior_sample(prior, 1.5, noise), ContractError);
    CHECK_THROWS_AS(prior_sample(prior, -0.1, noise), ContractError);
}

TEST_CASE("prior_sample variance at t=1 is sigma^2 + 1/12") {
    PriorStats prior = make_prior({1000000}, 0.0, kSigmaMin);
    Rng noise(31);
    Tensor z = prior_sample(prior, 1.0, noise);
    double mean = pairwise_sum(z.data(), z.numel()) / static_cast<double>(z.numel());
    double var = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
        double d = z.data()[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(z.numel());
    double expect = kSigmaMin * kSigmaMin + 1.0 / 12.0;
    CHECK(var == doctest::Approx(expect).epsilon(0.02));

    Rng noise2(31);
    Tensor z2 = prior_sample(prior, 1.0, noise2);
    CHECK(z2.data()[0] == z.data()[0]);  // reproducible
}

TEST_CASE("residual_round examples") {
    auto round_one = [](double mu, double mu_hat) {
        PosteriorStats post{Tensor::full({1}, mu)};
        return residual_round(post, Tensor::full({1}, mu_hat)).item();
    };
    CHECK(round_one(2.3, 0.0) == 2.0);
    CHECK(round_one(1.5, 0.0) == 2.0);   // half to even
    CHECK(round_one(2.5, 0.0) == 2.0);   // half to even
    CHECK(round_one(-1.5, 0.0) == -2.0);
    CHECK(round_one(1.7, 0.2) == doctest::Approx(2.2).epsilon(1e-15));  // 0.2 + round(1.5)
}

TEST_CASE("residual_round properties") {
    Rng rng(17);
    PosteriorStats post{random_tensor({4, 7}, rng, 20.0, false)};
    Tensor mu_hat = random_tensor({4, 7}, rng, 20.0, false);
    Tensor z = residual_round(post, mu_hat);
    for (int64_t i = 0; i < z.numel(); ++i) {
        double n = round_half_even(z.data()[i] - mu_hat.data()[i]);
        // z is the fp sum mu_hat + n for an exact integer n
        CHECK(z.data()[i] == mu_hat.data()[i] + n);
        CHECK(std::fabs(z.data()[i] - post.mu.data()[i]) <= 0.5 + 1e-9);
    }
}

TEST_CASE("build_pmf concentrates mass at sigma_min") {
    QuantizedPmf pmf = build_pmf(0.0, kSigmaMin);
    int center = -pmf.offset;
    CHECK(pmf.freq(center) >= static_cast<uint32_t>(0.97 * kCdfTotal));
}

TEST_CASE("build_pmf totals exactly 2^16 with a 1-unit floor") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        double sigma = kSigmaMin + rng.uniform() * (kSigmaMax - kSigmaMin);
        QuantizedPmf pmf = build_pmf(rng.uniform() * 10.0 - 5.0, sigma);
        CHECK(pmf.cdf.front() == 0);
        CHECK(pmf.cdf.back() == kCdfTotal);
        for (int i = 0; i < pmf.alphabet_size(); ++i) CHECK(pmf.freq(i) >= 1);
        // alphabet covers ceil(6 sigma) + 1 both sides
        CHECK(-pmf.offset == static_cast<int>(std::ceil(kTailSigmas * sigma)) + 1);
    }
}

TEST_CASE("pmf real masses match prior_logpdf at integer offsets") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        double sigma = kSigmaMin + rng.uniform() * 3.0;
        int radius = static_cast<int>(std::ceil(kTailSigmas * sigma)) + 1;
        for (int n = -radius + 1; n < radius; ++n) {  // interior symbols (no folding)
            double mass = pmf_real_mass(n, sigma);
            if (mass < kPmfFloor) continue;  // logpdf floors below this
            PriorStats prior = make_prior({1}, 0.0, sigma);
            double logp = prior_logpdf(Tensor::full({1}, static_cast<double>(n)), prior).item();
            CHECK(mass == doctest::Approx(std::exp(logp)).epsilon(1e-12));
        }
    }
}

TEST_CASE("untruncated lattice mass telescopes to 1") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        double sigma = kSigmaMin + rng.uniform() * (kSigmaMax - kSigmaMin);
        int reach = static_cast<int>(std::ceil(8.0 * sigma)) + 4;
        double total = 0.0;
        for (int n = -reach; n <= reach; ++n) total += pmf_real_mass(n, sigma);
        CHECK(total >= 1.0 - 1e-9);
        CHECK(total <= 1.0 + 1e-9);
    }
}

TEST_CASE("decoding any cumulative value maps to exactly one symbol") {
    QuantizedPmf pmf = build_pmf(0.0, 0.7);
    for (uint32_t v = 0; v < kCdfTotal; v += 97) {
        int idx = pmf.find(v);
        CHECK(pmf.cum(idx) <= v);
        CHECK(v < pmf.cum(idx) + pmf.freq(idx));
    }
    CHECK(pmf.find(0) == 0);
    CHECK(pmf.find(kCdfTotal - 1) == pmf.alphabet_size() - 1);
}

TEST_CASE("rate_term at a perfect prior match") {
    PriorStats prior = make_prior({1}, 0.0, kSigmaMin);
    Tensor z = Tensor::zeros({1});
    double expect = -std::log(std::erf(0.5 / kSigmaMin / std::sqrt(2.0)));
    CHECK(rate_term(z, prior).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rate_term is nonnegative (probabilities never exceed 1)") {
    Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor z = random_tensor({3, 4}, rng, 3.0, false);
        Tensor mu = random_tensor({3, 4}, rng, 3.0, false);
        Tensor sigma = random_tensor({3, 4}, rng, 10.0, false);
        for (int64_t i = 0; i < sigma.numel(); ++i)
            sigma.data()[i] = kSigmaMin + std::fabs(sigma.data()[i]);
        CHECK(rate_term(z, {mu, sigma}).item() >= 0.0);
    }
}

TEST_CASE("rate_term gradient w.r.t. mu_hat matches finite differences") {
    Rng rng(41);
    GradCheck gc;
    gc.rel_tol = 1e-4;
    Tensor z = random_tensor({2, 3}, rng, 1.0, false);
    Tensor mu = random_tensor({2, 3}, rng, 1.0);
    Tensor sigma = Tensor::full({2, 3}, 0.9).set_requires_grad(true);
    CHECK(gc.run({mu, sigma}, [&] { return rate_term(z, {mu, sigma}); }, rng));
}

TEST_CASE("estimated_bits single element") {
    PriorStats prior = make_prior({1}, 0.0, 0.5);
    Tensor z = Tensor::zeros({1});
    double expect = -std::log2(std::erf(1.0 / std::sqrt(2.0)));
    CHECK(estimated_bits(z, prior) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(expect == doctest::Approx(0.5507).epsilon(1e-3));
}

TEST_CASE("estimated_bits is permutation invariant and rejects off-lattice z") {
    Tensor mu = Tensor::zeros({6});
    Tensor sigma = Tensor::full({6}, 1.3);
    Tensor z = Tensor::from_data({6}, {0.0, 1.0, -2.0, 3.0, -1.0, 5.0});
    Tensor z_perm = Tensor::from_data({6}, {5.0, -1.0, 3.0, -2.0, 1.0, 0.0});
    double a = estimated_bits(z, {mu, sigma});
    double b = estimated_bits(z_perm, {mu, sigma});
    CHECK(a == doctest::Approx(b).epsilon(1e-12));

    Tensor bad = Tensor::from_data({6}, {0.0, 1.25, -2.0, 3.0, -1.0, 5.0});
    CHECK_THROWS_AS(estimated_bits(bad, {mu, sigma}), ContractError);
}

TEST_CASE("rate_term equals estimated_bits * ln2 on rounded latents") {
    Rng rng(47);
    PosteriorStats post{random_tensor({3, 5}, rng, 4.0, false)};
    Tensor mu_hat = random_tensor({3, 5}, rng, 4.0, false);
    Tensor sigma = random_tensor({3, 5}, rng, 1.0, false);
    for (int64_t i = 0; i < sigma.numel(); ++i)
        sigma.data()[i] = kSigmaMin + std::fabs(sigma.data()[i]);
    Tensor z = residual_round(post, mu_hat);
    double nats = rate_term(z, {mu_hat, sigma}).item();
    double bits = estimated_bits(z, {mu_hat, sigma});
    CHECK(nats == doctest::Approx(bits * std::log(2.0)).epsilon(1e-9));
}
