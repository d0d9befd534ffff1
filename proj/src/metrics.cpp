#include "qres/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace qres {

double image_mse(const ImageU8& a, const ImageU8& b) {
    if (a.width != b.width || a.height != b.height)
        throw ContractError("image_mse: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = (static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i])) / 255.0;
        acc += d * d;
    }
    return acc / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return 99.0;
    return std::min(-10.0 * std::log10(mse), 99.0);
}

double psnr(const ImageU8& a, const ImageU8& b) { return psnr_from_mse(image_mse(a, b)); }

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

// Depthwise 11x11 Gaussian filter, valid padding.
Tensor gaussian_filter(const Tensor& x) {
    static const std::vector<double> window = [] {
        std::array<double, kWindow> g1;
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            double d = i - (kWindow - 1) / 2.0;
            g1[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
            sum += g1[static_cast<size_t>(i)];
        }
        for (auto& v : g1) v /= sum;
        std::vector<double> g2(kWindow * kWindow);
        for (int i = 0; i < kWindow; ++i)
            for (int j = 0; j < kWindow; ++j)
                g2[static_cast<size_t>(i * kWindow + j)] =
                    g1[static_cast<size_t>(i)] * g1[static_cast<size_t>(j)];
        return g2;
    }();
    int64_t C = x.dim(1);
    std::vector<double> wdata;
    wdata.reserve(static_cast<size_t>(C) * window.size());
    for (int64_t c = 0; c < C; ++c) wdata.insert(wdata.end(), window.begin(), window.end());
    Tensor w = Tensor::from_data({C, 1, kWindow, kWindow}, std::move(wdata));
    return conv2d(x, w, Tensor(), 1, 0, C);
}

// Returns (mean cs, mean ssim) of one scale.
std::pair<Tensor, Tensor> ssim_scale(const Tensor& x, const Tensor& y) {
    Tensor mx = gaussian_filter(x);
    Tensor my = gaussian_filter(y);
    Tensor mxx = gaussian_filter(mul(x, x));
    Tensor myy = gaussian_filter(mul(y, y));
    Tensor mxy = gaussian_filter(mul(x, y));
    Tensor vx = sub(mxx, mul(mx, mx));
    Tensor vy = sub(myy, mul(my, my));
    Tensor cxy = sub(mxy, mul(mx, my));
    Tensor cs_num = add_scalar(mul_scalar(cxy, 2.0), kC2);
    Tensor cs_den = add_scalar(add(vx, vy), kC2);
    Tensor cs = div(cs_num, cs_den);
    Tensor l_num = add_scalar(mul_scalar(mul(mx, my), 2.0), kC1);
    Tensor l_den = add_scalar(add(mul(mx, mx), mul(my, my)), kC1);
    Tensor ssim = mul(div(l_num, l_den), cs);
    return {mean(cs), mean(ssim)};
}

}  // namespace

Tensor ms_ssim_tensor(const Tensor& x, const Tensor& y, int* scales_used) {
    if (x.shape() != y.shape()) throw ContractError("ms_ssim: shape mismatch");
    if (x.rank() != 4) throw ShapeError("ms_ssim: expected NCHW");
    int64_t side = std::min(x.dim(2), x.dim(3));
    if (side < kWindow) throw ContractError("ms_ssim: image smaller than the 11x11 window");
    int scales = 1;
    while (scales < 5) {
        side = (side + 1) / 2;
        if (side < kWindow) break;
        ++scales;
    }
    if (scales_used) *scales_used = scales;
    double weight_sum = 0.0;
    for (int s = 0; s < scales; ++s) weight_sum += kScaleWeights[static_cast<size_t>(s)];

    Tensor cur_x = x, cur_y = y;
    Tensor result = Tensor::scalar(1.0);
    for (int s = 0; s < scales; ++s) {
        auto [mcs, mssim] = ssim_scale(cur_x, cur_y);
        Tensor term = s + 1 < scales ? mcs : mssim;
        // Negative structure terms would break the weighted geometric mean.
        term = clamp(term, 1e-6, 2.0);
        result = mul(result, pow_scalar(term, kScaleWeights[static_cast<size_t>(s)] / weight_sum));
        if (s + 1 < scales) {
            cur_x = avg_pool2d_2x2(cur_x);
            cur_y = avg_pool2d_2x2(cur_y);
        }
    }
    return result;
}

double ms_ssim(const ImageU8& a, const ImageU8& b, int* scales_used) {
    if (a.width != b.width || a.height != b.height) throw ContractError("ms_ssim: size mismatch");
    NoGradGuard guard;
    return ms_ssim_tensor(image_to_tensor(a), image_to_tensor(b), scales_used).item();
}

namespace {

// Least-squares cubic fit of y(x); returns 4 coefficients (constant first).
std::array<double, 4> cubic_fit(const std::vector<double>& x, const std::vector<double>& y) {
    // Normal equations A^T A c = A^T y for the Vandermonde design matrix.
    std::array<std::array<double, 5>, 4> m{};  // augmented [4x4 | rhs]
    std::array<double, 7> xakk{};
    for (double v : x) {
        double p = 1.0;
        for (int k = 0; k <= 6; ++k) {
            xakk[static_cast<size_t>(k)] += p;
            p *= v;
        }
    }
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m[static_cast<size_t>(r)][static_cast<size_t>(c)] =
            xakk[static_cast<size_t>(r + c)];
    for (size_t i = 0; i < x.size(); ++i) {
        double p = 1.0;
        for (int r = 0; r < 4; ++r) {
            m[static_cast<size_t>(r)][4] += p * y[i];
            p *= x[i];
        }
    }
    // Gaussian elimination with partial pivoting.
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::fabs(m[static_cast<size_t>(r)][static_cast<size_t>(col)]) >
                std::fabs(m[static_cast<size_t>(pivot)][static_cast<size_t>(col)]))
                pivot = r;
        std::swap(m[static_cast<size_t>(col)], m[static_cast<size_t>(pivot)]);
        double d = m[static_cast<size_t>(col)][static_cast<size_t>(col)];
        if (std::fabs(d) < 1e-12) throw ContractError("bd_rate: degenerate curve fit");
        for (int c = col; c < 5; ++c) m[static_cast<size_t>(col)][static_cast<size_t>(c)] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            double f = m[static_cast<size_t>(r)][static_cast<size_t>(col)];
            for (int c = col; c < 5; ++c)
                m[static_cast<size_t>(r)][static_cast<size_t>(c)] -=
                    f * m[static_cast<size_t>(col)][static_cast<size_t>(c)];
        }
    }
    return {m[0][4], m[1][4], m[2][4], m[3][4]};
}

double poly_integral(const std::array<double, 4>& c, double lo, double hi) {
    auto antideriv = [&](double v) {
        return c[0] * v + c[1] * v * v / 2.0 + c[2] * v * v * v / 3.0 +
               c[3] * v * v * v * v / 4.0;
    };
    return antideriv(hi) - antideriv(lo);
}

}  // namespace

double bd_rate(const std::vector<RDPoint>& curve_a, const std::vector<RDPoint>& curve_b) {
    if (curve_a.size() < 4 || curve_b.size() < 4)
        throw ContractError("bd_rate: need at least 4 points per curve");
    auto extract = [](const std::vector<RDPoint>& curve, std::vector<double>& p,
                      std::vector<double>& lr) {
        for (const RDPoint& pt : curve) {
            if (!(pt.bpp_actual > 0.0)) throw ContractError("bd_rate: nonpositive rate");
            if (!std::isfinite(pt.psnr)) throw ContractError("bd_rate: non-finite psnr");
            p.push_back(pt.psnr);
            lr.push_back(std::log10(pt.bpp_actual));
        }
    };
    std::vector<double> pa, la, pb, lb;
    extract(curve_a, pa, la);
    extract(curve_b, pb, lb);
    double lo = std::max(*std::min_element(pa.begin(), pa.end()),
                         *std::min_element(pb.begin(), pb.end()));
    double hi = std::min(*std::max_element(pa.begin(), pa.end()),
                         *std::max_element(pb.begin(), pb.end()));
    if (!(hi > lo)) throw ContractError("bd_rate: PSNR ranges do not overlap");
    std::array<double, 4> ca = cubic_fit(pa, la);
    std::array<double, 4> cb = cubic_fit(pb, lb);
    std::array<double, 4> diff;
    for (int i = 0; i < 4; ++i)
        diff[static_cast<size_t>(i)] = cb[static_cast<size_t>(i)] - ca[static_cast<size_t>(i)];
    double avg = poly_integral(diff, lo, hi) / (hi - lo);
    return (std::pow(10.0, avg) - 1.0) * 100.0;
}

}  // namespace qres
