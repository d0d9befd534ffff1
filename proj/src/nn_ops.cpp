#include <algorithm>
#include <cmath>
#include <vector>

#include "qres/tensor.hpp"

namespace qres {

namespace {

using detail::make_op_output;
using detail::TensorImpl;

// C[M x N] += A[M x K] * B[K x N], all row-major. Fixed ikj order keeps the
// summation sequence identical on every run.
void matmul_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* a_row = A + i * K;
        double* c_row = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            double a = a_row[k];
            if (a == 0.0) continue;
            const double* b_row = B + k * N;
            for (int64_t j = 0; j < N; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[M x N] += A^T where A is [K x M], B is [K x N].
void matmul_at_b_acc(const double* A, const double* B, double* C, int64_t K, int64_t M,
                     int64_t N) {
    for (int64_t k = 0; k < K; ++k) {
        const double* a_row = A + k * M;
        const double* b_row = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            double a = a_row[i];
            if (a == 0.0) continue;
            double* c_row = C + i * N;
            for (int64_t j = 0; j < N; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[M x N] += A[M x K] * B^T where B is [N x K].
void matmul_a_bt_acc(const double* A, const double* B, double* C, int64_t M, int64_t K,
                     int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* a_row = A + i * K;
        double* c_row = C + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const double* b_row = B + j * K;
            double s = 0.0;
            for (int64_t k = 0; k < K; ++k) s += a_row[k] * b_row[k];
            c_row[j] += s;
        }
    }
}

struct ConvDims {
    int64_t N, Ci, H, W, Co, kh, kw, Ho, Wo, groups, cig, cog;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int64_t stride, int64_t padding,
                   int64_t groups) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW");
    if (weight.rank() != 4) throw ShapeError("conv2d: weight must be OIHW");
    if (stride < 1 || padding < 0 || groups < 1) throw ShapeError("conv2d: bad stride/pad/groups");
    ConvDims d;
    d.N = input.dim(0);
    d.Ci = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.Co = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.groups = groups;
    if (d.Ci % groups != 0 || d.Co % groups != 0)
        throw ShapeError("conv2d: channels not divisible by groups");
    d.cig = d.Ci / groups;
    d.cog = d.Co / groups;
    if (weight.dim(1) != d.cig) throw ShapeError("conv2d: weight inconsistent with groups");
    d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
    if (d.H + 2 * padding < d.kh || d.W + 2 * padding < d.kw)
        throw ShapeError("conv2d: kernel larger than padded input");
    return d;
}

// Lays out one sample/group as a (cig*kh*kw) x (Ho*Wo) patch matrix.
void im2col(const double* x, const ConvDims& d, int64_t stride, int64_t padding, double* col) {
    int64_t cols = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.cig; ++c)
        for (int64_t ky = 0; ky < d.kh; ++ky)
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                double* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    int64_t iy = oy * stride + ky - padding;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        int64_t ix = ox * stride + kx - padding;
                        bool in = iy >= 0 && iy < d.H && ix >= 0 && ix < d.W;
                        row[oy * d.Wo + ox] = in ? x[(c * d.H + iy) * d.W + ix] : 0.0;
                    }
                }
            }
}

// Scatter-add of the patch matrix back into the (cig, H, W) image.
void col2im_acc(const double* col, const ConvDims& d, int64_t stride, int64_t padding,
                double* x) {
    int64_t cols = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.cig; ++c)
        for (int64_t ky = 0; ky < d.kh; ++ky)
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                const double* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    int64_t iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= d.H) continue;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        int64_t ix = ox * stride + kx - padding;
                        if (ix < 0 || ix >= d.W) continue;
                        x[(c * d.H + iy) * d.W + ix] += row[oy * d.Wo + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int64_t stride,
              int64_t padding, int64_t groups) {
    ConvDims d = conv_dims(input, weight, stride, padding, groups);
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != d.Co))
        throw ShapeError("conv2d: bias must have Co elements");

    int64_t cols = d.Ho * d.Wo;
    int64_t K = d.cig * d.kh * d.kw;
    std::vector<double> out(static_cast<size_t>(d.N * d.Co * cols), 0.0);
    std::vector<double> col(static_cast<size_t>(K * cols));

    const double* px = input.data();
    const double* pw = weight.data();
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t g = 0; g < d.groups; ++g) {
            im2col(px + (n * d.Ci + g * d.cig) * d.H * d.W, d, stride, padding, col.data());
            matmul_acc(pw + g * d.cog * K, col.data(),
                       out.data() + (n * d.Co + g * d.cog) * cols, d.cog, K, cols);
        }
    if (has_bias) {
        const double* pb = bias.data();
        for (int64_t n = 0; n < d.N; ++n)
            for (int64_t c = 0; c < d.Co; ++c) {
                double b = pb[c];
                double* dst = out.data() + (n * d.Co + c) * cols;
                for (int64_t i = 0; i < cols; ++i) dst[i] += b;
            }
    }

    auto xi = input.impl(), wi = weight.impl();
    auto bi = has_bias ? bias.impl() : nullptr;
    std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{input, weight, bias}
                                           : std::vector<Tensor>{input, weight};
    return make_op_output(
        {d.N, d.Co, d.Ho, d.Wo}, std::move(out), std::move(parents),
        [xi, wi, bi, d, stride, padding, K, cols](TensorImpl& self) {
            std::vector<double> col(static_cast<size_t>(K * cols));
            std::vector<double> dcol(static_cast<size_t>(K * cols));
            bool want_x = xi->requires_grad;
            bool want_w = wi->requires_grad;
            if (want_x) xi->ensure_grad();
            if (want_w) wi->ensure_grad();
            for (int64_t n = 0; n < d.N; ++n)
                for (int64_t g = 0; g < d.groups; ++g) {
                    const double* gout = self.grad.data() + (n * d.Co + g * d.cog) * cols;
                    if (want_w) {
                        im2col(xi->data.data() + (n * d.Ci + g * d.cig) * d.H * d.W, d, stride,
                               padding, col.data());
                        // dW[cog x K] += gout[cog x cols] * col^T
                        matmul_a_bt_acc(gout, col.data(), wi->grad.data() + g * d.cog * K, d.cog,
                                        cols, K);
                    }
                    if (want_x) {
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        // dcol[K x cols] += W^T[K x cog] * gout[cog x cols]
                        matmul_at_b_acc(wi->data.data() + g * d.cog * K, gout, dcol.data(), d.cog,
                                        K, cols);
                        col2im_acc(dcol.data(), d, stride, padding,
                                   xi->grad.data() + (n * d.Ci + g * d.cig) * d.H * d.W);
                    }
                }
            if (bi && bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t n = 0; n < d.N; ++n)
                    for (int64_t c = 0; c < d.Co; ++c)
                        bi->grad[c] +=
                            pairwise_sum(self.grad.data() + (n * d.Co + c) * cols, cols);
            }
        });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 4) throw ShapeError("linear: input must be NCHW");
    if (weight.rank() != 2) throw ShapeError("linear: weight must be (Co, Ci)");
    int64_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
    int64_t Co = weight.dim(0);
    if (weight.dim(1) != Ci) throw ShapeError("linear: weight/input channel mismatch");
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != Co))
        throw ShapeError("linear: bias must have Co elements");

    int64_t hw = H * W;
    std::vector<double> out(static_cast<size_t>(N * Co * hw), 0.0);
    for (int64_t n = 0; n < N; ++n)
        matmul_acc(weight.data(), input.data() + n * Ci * hw, out.data() + n * Co * hw, Co, Ci,
                   hw);
    if (has_bias) {
        const double* pb = bias.data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Co; ++c) {
                double b = pb[c];
                double* dst = out.data() + (n * Co + c) * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] += b;
            }
    }

    auto xi = input.impl(), wi = weight.impl();
    auto bi = has_bias ? bias.impl() : nullptr;
    std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{input, weight, bias}
                                           : std::vector<Tensor>{input, weight};
    return make_op_output(
        {N, Co, H, W}, std::move(out), std::move(parents),
        [xi, wi, bi, N, Ci, Co, hw](TensorImpl& self) {
            if (wi->requires_grad) {
                wi->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    matmul_a_bt_acc(self.grad.data() + n * Co * hw, xi->data.data() + n * Ci * hw,
                                    wi->grad.data(), Co, hw, Ci);
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    matmul_at_b_acc(wi->data.data(), self.grad.data() + n * Co * hw,
                                    xi->grad.data() + n * Ci * hw, Co, Ci, hw);
            }
            if (bi && bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Co; ++c)
                        bi->grad[c] += pairwise_sum(self.grad.data() + (n * Co + c) * hw, hw);
            }
        });
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
    if (input.rank() != 4) throw ShapeError("layer_norm: input must be NCHW");
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("layer_norm: gamma/beta must have C elements");

    int64_t hw = H * W;
    int64_t positions = N * hw;
    std::vector<double> out(static_cast<size_t>(input.numel()));
    std::vector<double> inv_std(static_cast<size_t>(positions));
    std::vector<double> means(static_cast<size_t>(positions));
    const double* px = input.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t s = 0; s < hw; ++s) {
            const double* base = px + n * C * hw + s;
            double m = 0.0;
            for (int64_t c = 0; c < C; ++c) m += base[c * hw];
            m /= static_cast<double>(C);
            double v = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                double dvi = base[c * hw] - m;
                v += dvi * dvi;
            }
            v /= static_cast<double>(C);
            double is = 1.0 / std::sqrt(v + eps);
            int64_t pos = n * hw + s;
            means[pos] = m;
            inv_std[pos] = is;
            double* ob = out.data() + n * C * hw + s;
            for (int64_t c = 0; c < C; ++c)
                ob[c * hw] = (base[c * hw] - m) * is * pg[c] + pb[c];
        }

    auto xi = input.impl(), gi = gamma.impl(), bi = beta.impl();
    return make_op_output(
        input.shape(), std::move(out), {input, gamma, beta},
        [xi, gi, bi, N, C, hw, means = std::move(means),
         inv_std = std::move(inv_std)](TensorImpl& self) {
            bool want_x = xi->requires_grad;
            bool want_g = gi->requires_grad;
            bool want_b = bi->requires_grad;
            if (want_x) xi->ensure_grad();
            if (want_g) gi->ensure_grad();
            if (want_b) bi->ensure_grad();
            std::vector<double> xhat(static_cast<size_t>(C));
            std::vector<double> gy(static_cast<size_t>(C));
            for (int64_t n = 0; n < N; ++n)
                for (int64_t s = 0; s < hw; ++s) {
                    int64_t pos = n * hw + s;
                    double m = means[pos];
                    double is = inv_std[pos];
                    const double* base = xi->data.data() + n * C * hw + s;
                    const double* gout = self.grad.data() + n * C * hw + s;
                    double sum_gy = 0.0, sum_gy_xhat = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        xhat[c] = (base[c * hw] - m) * is;
                        gy[c] = gout[c * hw] * gi->data[c];
                        sum_gy += gy[c];
                        sum_gy_xhat += gy[c] * xhat[c];
                    }
                    if (want_x) {
                        double invC = 1.0 / static_cast<double>(C);
                        for (int64_t c = 0; c < C; ++c)
                            xi->grad[n * C * hw + c * hw + s] +=
                                is * (gy[c] - sum_gy * invC - xhat[c] * sum_gy_xhat * invC);
                    }
                    if (want_g)
                        for (int64_t c = 0; c < C; ++c)
                            gi->grad[c] += gout[c * hw] * xhat[c];
                    if (want_b)
                        for (int64_t c = 0; c < C; ++c) bi->grad[c] += gout[c * hw];
                }
        });
}

Tensor avg_pool2d_2x2(const Tensor& input) {
    if (input.rank() != 4) throw ShapeError("avg_pool2d_2x2: input must be NCHW");
    int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo));
    const double* px = input.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = px + nc * H * W;
        double* dst = out.data() + nc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
            int64_t y0 = 2 * oy, y1 = std::min<int64_t>(2 * oy + 1, H - 1);
            for (int64_t ox = 0; ox < Wo; ++ox) {
                int64_t x0 = 2 * ox, x1 = std::min<int64_t>(2 * ox + 1, W - 1);
                dst[oy * Wo + ox] = 0.25 * (src[y0 * W + x0] + src[y0 * W + x1] +
                                            src[y1 * W + x0] + src[y1 * W + x1]);
            }
        }
    }
    auto xi = input.impl();
    return make_op_output({N, C, Ho, Wo}, std::move(out), {input},
                          [xi, N, C, H, W, Ho, Wo](TensorImpl& self) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (int64_t nc = 0; nc < N * C; ++nc) {
                                  double* dx = xi->grad.data() + nc * H * W;
                                  const double* g = self.grad.data() + nc * Ho * Wo;
                                  for (int64_t oy = 0; oy < Ho; ++oy) {
                                      int64_t y0 = 2 * oy, y1 = std::min<int64_t>(2 * oy + 1, H - 1);
                                      for (int64_t ox = 0; ox < Wo; ++ox) {
                                          int64_t x0 = 2 * ox,
                                                  x1 = std::min<int64_t>(2 * ox + 1, W - 1);
                                          double gv = 0.25 * g[oy * Wo + ox];
                                          dx[y0 * W + x0] += gv;
                                          dx[y0 * W + x1] += gv;
                                          dx[y1 * W + x0] += gv;
                                          dx[y1 * W + x1] += gv;
                                      }
                                  }
                              }
                          });
}

}  // namespace qres
