#pragma once

#include <cmath>
#include <limits>

namespace qres {

inline double std_normal_pdf(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Phi(x) evaluated through erfc so that both tails keep full relative
// precision (erf loses it for large |x|).
inline double std_normal_cdf(double x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    return 0.5 * std::erfc(-x * inv_sqrt2);
}

// Mass of N(0, sigma^2) * U(-1/2, 1/2) at offset `delta`, i.e.
// Phi((delta+1/2)/sigma) - Phi((delta-1/2)/sigma). fold_lo / fold_hi extend
// the window to -inf / +inf, which is how lattice edges absorb tail mass.
inline double gauss_window_mass(double delta, double sigma, bool fold_lo = false,
                                bool fold_hi = false) {
    double m;
    if (!fold_lo && !fold_hi) {
        // Mirror into the left tail; identical arithmetic for +-delta makes
        // the mass exactly symmetric, and erfc keeps deep tails accurate.
        double c = -std::fabs(delta);
        m = std_normal_cdf((c + 0.5) / sigma) - std_normal_cdf((c - 0.5) / sigma);
    } else {
        double hi = fold_hi ? std::numeric_limits<double>::infinity() : (delta + 0.5) / sigma;
        double lo = fold_lo ? -std::numeric_limits<double>::infinity() : (delta - 0.5) / sigma;
        if (lo >= 0.0) {
            m = std_normal_cdf(-lo) - std_normal_cdf(-hi);
        } else {
            m = std_normal_cdf(hi) - std_normal_cdf(lo);
        }
    }
    return m < 0.0 ? 0.0 : m;
}

struct WindowMassGrad {
    double mass;
    double d_delta;  // d mass / d delta
    double d_sigma;  // d mass / d sigma
};

inline WindowMassGrad gauss_window_mass_grad(double delta, double sigma,
                                             bool fold_lo = false, bool fold_hi = false) {
    WindowMassGrad g;
    g.mass = gauss_window_mass(delta, sigma, fold_lo, fold_hi);
    double hi = (delta + 0.5) / sigma;
    double lo = (delta - 0.5) / sigma;
    double phi_hi = fold_hi ? 0.0 : std_normal_pdf(hi);
    double phi_lo = fold_lo ? 0.0 : std_normal_pdf(lo);
    g.d_delta = (phi_hi - phi_lo) / sigma;
    double hi_term = fold_hi ? 0.0 : hi * phi_hi;
    double lo_term = fold_lo ? 0.0 : lo * phi_lo;
    g.d_sigma = -(hi_term - lo_term) / sigma;
    return g;
}

}  // namespace qres
