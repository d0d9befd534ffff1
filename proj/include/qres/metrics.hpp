#pragma once

#include <vector>

#include "qres/image.hpp"
#include "qres/tensor.hpp"

namespace qres {

// Mean squared error between images mapped to [0, 1].
double image_mse(const ImageU8& a, const ImageU8& b);

// -10 * log10(MSE) on [0, 1] signals, capped at the 99 dB sentinel.
double psnr_from_mse(double mse);
double psnr(const ImageU8& a, const ImageU8& b);

// Multi-scale SSIM with the conventional 5 scale weights and an 11x11
// Gaussian window (sigma 1.5). Images smaller than 161 px per side use as
// many scales as fit (>= 1), with the weights renormalized; scales_used
// reports the count. Sides below 11 px are a contract error.
double ms_ssim(const ImageU8& a, const ImageU8& b, int* scales_used = nullptr);

// Gradient-capable variant on (N,3,H,W) tensors in [0, 1].
Tensor ms_ssim_tensor(const Tensor& x, const Tensor& y, int* scales_used = nullptr);

// One rate-distortion sample; ms_ssim may be NaN when not computed.
struct RDPoint {
    double lambda = 0.0;
    double bpp_estimated = 0.0;
    double bpp_actual = 0.0;
    double psnr = 0.0;
    double ms_ssim = 0.0;
};

// Bjontegaard delta-rate of curve_b relative to curve_a, in percent:
// cubic fit of log10(rate) against PSNR, integrated over the shared PSNR
// interval. Needs >= 4 points per curve and overlapping PSNR ranges.
double bd_rate(const std::vector<RDPoint>& curve_a, const std::vector<RDPoint>& curve_b);

}  // namespace qres
