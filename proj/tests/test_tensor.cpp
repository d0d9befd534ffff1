#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "qres/tensor.hpp"

using namespace qres;
using qres::testing::GradCheck;
using qres::testing::random_tensor;

namespace {

// Direct six-nested-loop convolution oracle (zero padding, cross-correlation).
std::vector<double> conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& b,
                                 int64_t stride, int64_t pad, int64_t groups) {
    int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int64_t cig = Ci / groups, cog = Co / groups;
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo), 0.0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co) {
            int64_t g = co / cog;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = b.defined() ? b.data()[co] : 0.0;
                    for (int64_t ci = 0; ci < cig; ++ci)
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                int64_t iy = oy * stride + ky - pad;
                                int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.data()[((n * Ci + g * cig + ci) * H + iy) * W + ix] *
                                       w.data()[((co * cig + ci) * kh + ky) * kw + kx];
                            }
                    out[static_cast<size_t>(((n * Co + co) * Ho + oy) * Wo + ox)] = acc;
                }
        }
    return out;
}

}  // namespace

TEST_CASE("conv2d all-ones 2x2 stride 2") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor out = conv2d(x, w, Tensor(), 2, 0, 1);
    CHECK(out.shape() == std::vector<int64_t>{1, 1, 1, 1});
    CHECK(out.item() == 4.0);
}

TEST_CASE("conv2d identity 1x1 kernel") {
    Rng rng(1);
    Tensor x = random_tensor({2, 3, 5, 4}, rng, 1.0, false);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
    Tensor out = conv2d(x, w, Tensor(), 1, 0, 1);
    REQUIRE(out.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches the naive loop oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        int64_t stride = 1 + trial % 2;
        int64_t pad = trial % 3;
        Tensor x = random_tensor({1, 3, 8, 8}, rng, 1.0, false);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, 1.0, false);
        Tensor b = random_tensor({4}, rng, 1.0, false);
        Tensor out = conv2d(x, w, b, stride, pad, 1);
        auto expect = conv2d_naive(x, w, b, stride, pad, 1);
        REQUIRE(out.numel() == static_cast<int64_t>(expect.size()));
        for (size_t i = 0; i < expect.size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("depthwise conv equals per-channel correlation") {
    Rng rng(11);
    Tensor x = random_tensor({2, 4, 6, 6}, rng, 1.0, false);
    Tensor w = random_tensor({4, 1, 3, 3}, rng, 1.0, false);
    Tensor b = random_tensor({4}, rng, 1.0, false);
    Tensor out = conv2d(x, w, b, 1, 1, 4);
    auto expect = conv2d_naive(x, w, b, 1, 1, 4);
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("conv2d shape errors") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor w = Tensor::zeros({4, 2, 3, 3});  // wrong in-channels
    CHECK_THROWS_AS(conv2d(x, w, Tensor(), 1, 0, 1), ShapeError);
    Tensor w2 = Tensor::zeros({4, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w2, Tensor::zeros({5}), 1, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 1, 0, 2), ShapeError);
}

TEST_CASE("pixel_shuffle shape law and index oracle") {
    Rng rng(3);
    Tensor x = random_tensor({1, 4, 2, 2}, rng, 1.0, false);
    Tensor out = pixel_shuffle(x, 2);
    CHECK(out.shape() == std::vector<int64_t>{1, 1, 4, 4});
    // out[c][h][w] == in[c*r^2 + (h%r)*r + (w%r)][h/r][w/r]
    int64_t r = 2, H = 2, W = 2;
    for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 4; ++w) {
            int64_t ci = (h % r) * r + (w % r);
            CHECK(out.data()[h * 4 + w] == x.data()[(ci * H + h / r) * W + w / r]);
        }
}

TEST_CASE("pixel_shuffle inverts pixel_unshuffle for r in 2..4") {
    Rng rng(4);
    for (int64_t r : {2, 3, 4}) {
        Tensor x = random_tensor({2, 3, 2 * r, 3 * r}, rng, 1.0, false);
        Tensor back = pixel_shuffle(pixel_unshuffle(x, r), r);
        REQUIRE(back.shape() == x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
        // and the other composition order
        Tensor y = random_tensor({1, 5 * r * r, 3, 2}, rng, 1.0, false);
        Tensor back2 = pixel_unshuffle(pixel_shuffle(y, r), r);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(back2.data()[i] == y.data()[i]);
    }
    CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({1, 3, 2, 2}), 2), ShapeError);
}

TEST_CASE("layer_norm basics") {
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});

    SUBCASE("constant input collapses to zero") {
        Tensor x = Tensor::full({1, 4, 2, 2}, 3.25);
        Tensor out = layer_norm(x, gamma, beta, 1e-6);
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
    }

    SUBCASE("two-channel symmetry") {
        Tensor x = Tensor::from_data({1, 2, 1, 1}, {1.0, 3.0});
        Tensor g2 = Tensor::full({2}, 1.0);
        Tensor b2 = Tensor::zeros({2});
        Tensor out = layer_norm(x, g2, b2, 1e-12);
        CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
        CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-5));
    }

    SUBCASE("random input has unit statistics per position") {
        Rng rng(5);
        Tensor x = random_tensor({2, 4, 3, 3}, rng, 2.0, false);
        Tensor out = layer_norm(x, gamma, beta, 1e-10);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t s = 0; s < 9; ++s) {
                double m = 0.0, v = 0.0;
                for (int64_t c = 0; c < 4; ++c) m += out.data()[(n * 4 + c) * 9 + s];
                m /= 4.0;
                for (int64_t c = 0; c < 4; ++c) {
                    double d = out.data()[(n * 4 + c) * 9 + s] - m;
                    v += d * d;
                }
                v /= 4.0;
                CHECK(std::fabs(m) < 1e-10);
                CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("gelu, linear, concat basics") {
    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    // exact Gaussian-CDF form at x = 1: 1 * Phi(1)
    CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-12));

    Rng rng(6);
    Tensor x = random_tensor({1, 3, 2, 2}, rng, 1.0, false);
    Tensor w = Tensor::zeros({3, 3});
    for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
    Tensor out = linear(x, w, Tensor::zeros({3}));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);

    Tensor a = random_tensor({2, 3, 4, 4}, rng, 1.0, false);
    Tensor b = random_tensor({2, 5, 4, 4}, rng, 1.0, false);
    CHECK(concat_channels(a, b).shape() == std::vector<int64_t>{2, 8, 4, 4});
    CHECK_THROWS_AS(concat_channels(a, random_tensor({2, 5, 3, 4}, rng)), ShapeError);
}

TEST_CASE("backward on sum and mse") {
    Rng rng(8);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor loss = sum(x);
    backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);

    Tensor y = random_tensor({2, 3}, rng, 1.0, false);
    x.zero_grad();
    Tensor diff = sub(x, y);
    Tensor mse = mean(mul(diff, diff));
    backward(mse);
    for (int64_t i = 0; i < x.numel(); ++i) {
        double expect = 2.0 * (x.data()[i] - y.data()[i]) / 6.0;
        CHECK(x.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    CHECK_THROWS_AS(backward(x), ContractError);  // non-scalar
}

TEST_CASE("gradients match finite differences for every op") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 7919 + 1);
        GradCheck gc;

        {
            Tensor a = random_tensor({2, 5}, rng);
            Tensor b = random_tensor({2, 5}, rng);
            CHECK_MESSAGE(gc.run({a, b}, [&] { return add(a, b); }, rng), "add");
            CHECK_MESSAGE(gc.run({a, b}, [&] { return sub(a, b); }, rng), "sub");
            CHECK_MESSAGE(gc.run({a, b}, [&] { return mul(a, b); }, rng), "mul");
        }
        {
            Tensor a = random_tensor({2, 4}, rng);
            Tensor b = random_tensor({2, 4}, rng, 0.4);
            double* pb = b.data();
            for (int64_t i = 0; i < b.numel(); ++i) pb[i] += pb[i] >= 0 ? 0.6 : -0.6;
            CHECK_MESSAGE(gc.run({a, b}, [&] { return div(a, b); }, rng), "div");
        }
        {
            Tensor a = random_tensor({3, 4}, rng, 2.0);
            CHECK_MESSAGE(gc.run({a}, [&] { return gelu(a); }, rng), "gelu");
            CHECK_MESSAGE(gc.run({a}, [&] { return softplus(a); }, rng), "softplus");
            CHECK_MESSAGE(gc.run({a}, [&] { return mul_scalar(a, -1.7); }, rng), "mul_scalar");
            CHECK_MESSAGE(gc.run({a}, [&] { return add_scalar(a, 0.3); }, rng), "add_scalar");
            CHECK_MESSAGE(gc.run({a}, [&] { return sum(a); }, rng), "sum");
            CHECK_MESSAGE(gc.run({a}, [&] { return mean(a); }, rng), "mean");
        }
        {
            // In-range clamp is the identity; FD only applies there (the
            // out-of-range rule is one-sided by design, checked separately).
            Tensor a = random_tensor({3, 3}, rng, 0.9);
            CHECK_MESSAGE(gc.run({a}, [&] { return clamp(a, -1.0, 1.0); }, rng), "clamp");
        }
        {
            Tensor a = random_tensor({2, 3}, rng, 0.5);
            for (int64_t i = 0; i < a.numel(); ++i) a.data()[i] = std::fabs(a.data()[i]) + 0.5;
            CHECK_MESSAGE(gc.run({a}, [&] { return pow_scalar(a, 0.37); }, rng), "pow_scalar");
        }
        {
            Tensor x = random_tensor({2, 3, 5, 5}, rng);
            Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.5);
            Tensor b = random_tensor({4}, rng, 0.5);
            CHECK_MESSAGE(gc.run({x, w, b}, [&] { return conv2d(x, w, b, 2, 1, 1); }, rng),
                          "conv2d");
        }
        {
            Tensor x = random_tensor({1, 4, 4, 4}, rng);
            Tensor w = random_tensor({4, 1, 3, 3}, rng, 0.5);
            Tensor b = random_tensor({4}, rng, 0.5);
            CHECK_MESSAGE(gc.run({x, w, b}, [&] { return conv2d(x, w, b, 1, 1, 4); }, rng),
                          "depthwise conv2d");
        }
        {
            Tensor x = random_tensor({2, 3, 2, 2}, rng);
            Tensor w = random_tensor({5, 3}, rng, 0.5);
            Tensor b = random_tensor({5}, rng, 0.5);
            CHECK_MESSAGE(gc.run({x, w, b}, [&] { return linear(x, w, b); }, rng), "linear");
        }
        {
            Tensor x = random_tensor({2, 4, 2, 2}, rng);
            Tensor g = random_tensor({4}, rng, 0.5);
            Tensor b = random_tensor({4}, rng, 0.5);
            for (int64_t i = 0; i < g.numel(); ++i) g.data()[i] += 1.0;
            CHECK_MESSAGE(gc.run({x, g, b}, [&] { return layer_norm(x, g, b, 1e-5); }, rng),
                          "layer_norm");
        }
        {
            Tensor x = random_tensor({1, 8, 2, 2}, rng);
            CHECK_MESSAGE(gc.run({x}, [&] { return pixel_shuffle(x, 2); }, rng),
                          "pixel_shuffle");
            Tensor y = random_tensor({1, 2, 4, 4}, rng);
            CHECK_MESSAGE(gc.run({y}, [&] { return pixel_unshuffle(y, 2); }, rng),
                          "pixel_unshuffle");
            CHECK_MESSAGE(gc.run({y}, [&] { return avg_pool2d_2x2(y); }, rng), "avg_pool");
            Tensor o = random_tensor({1, 2, 5, 3}, rng);  // odd sides
            CHECK_MESSAGE(gc.run({o}, [&] { return avg_pool2d_2x2(o); }, rng), "avg_pool odd");
        }
        {
            Tensor a = random_tensor({1, 2, 3, 3}, rng);
            Tensor b = random_tensor({1, 3, 3, 3}, rng);
            CHECK_MESSAGE(gc.run({a, b}, [&] { return concat_channels(a, b); }, rng), "concat");
            CHECK_MESSAGE(gc.run({b}, [&] { return slice_channels(b, 1, 3); }, rng), "slice");
        }
        {
            Tensor c = random_tensor({1, 3, 1, 1}, rng);
            CHECK_MESSAGE(gc.run({c}, [&] { return tile_spatial(c, 3, 4); }, rng), "tile");
            CHECK_MESSAGE(gc.run({c}, [&] { return broadcast_batch(c, 3); }, rng), "broadcast");
        }
    }
}

TEST_CASE("forward passes are deterministic") {
    Rng rng1(42), rng2(42);
    Tensor x1 = random_tensor({2, 3, 6, 6}, rng1, 1.0, false);
    Tensor x2 = random_tensor({2, 3, 6, 6}, rng2, 1.0, false);
    Tensor w1 = random_tensor({4, 3, 3, 3}, rng1, 1.0, false);
    Tensor w2 = random_tensor({4, 3, 3, 3}, rng2, 1.0, false);
    Tensor o1 = conv2d(x1, w1, Tensor(), 1, 1, 1);
    Tensor o2 = conv2d(x2, w2, Tensor(), 1, 1, 1);
    for (int64_t i = 0; i < o1.numel(); ++i) CHECK(o1.data()[i] == o2.data()[i]);
}

TEST_CASE("grad mode guard stops recording") {
    Rng rng(9);
    Tensor x = random_tensor({2, 2}, rng);
    {
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y = mul(x, x);
    CHECK(y.requires_grad());
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
    Tensor x = Tensor::from_data({1}, {3.0}, true);
    Tensor y = mul(x, x);  // d/dx = 2x
    backward(sum(y));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("clamp passes gradient out of range only when it points inward") {
    Tensor x = Tensor::from_data({4}, {-2.0, 0.5, 2.0, 2.0}, true);
    Tensor y = clamp(x, -1.0, 1.0);
    // loss = w . y with signs chosen per element
    Tensor w = Tensor::from_data({4}, {-1.0, 1.0, 1.0, -1.0});
    backward(sum(mul(y, w)));
    // x0 = -2 (below lo), g = -1: descent raises x toward the range, passes
    CHECK(x.grad()[0] == -1.0);
    // x1 in range: passes
    CHECK(x.grad()[1] == 1.0);
    // x2 = 2 (above hi), g = +1: descent lowers x toward the range, passes
    CHECK(x.grad()[2] == 1.0);
    // x3 = 2 (above hi), g = -1: would push x further out, blocked
    CHECK(x.grad()[3] == 0.0);
}
