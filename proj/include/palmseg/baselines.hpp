#pragma once

// Comparison methods.
//
// M2 is the pure segmentation model without an illumination field:
//   argmin_u,c  sum_k sum_j u_k(j) (f(j) - c_k)^2 + lambda sum_k || |grad u_k| ||_1
// run through the same alternating machinery with l pinned at zero.
//
// M3 is the two-step procedure: estimate the illumination by Gaussian
// smoothing of the linear-domain image, normalize it to mean one, divide it
// out, and run M2 on the logarithm of the corrected image.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "palmseg/palm.hpp"

namespace palmseg {

// Pure TV segmentation on the log image f; single TV weight for all classes.
inline SolveResult solve_m2(const GridImage& f, int K, double lambda, SolverConfig cfg) {
    cfg.params.lambdas.assign(static_cast<std::size_t>(K), lambda);
    cfg.update_illumination = false;
    InitState st = initialize(f, K, cfg);
    return solve(f, K, cfg, &st);
}

// Smoothed illumination estimate, rescaled to mean one so that dividing by it
// preserves the overall brightness scale.
inline GridImage m3_illumination_estimate(const GridImage& F, double sigma) {
    GridImage est = gaussian_smooth(F, sigma);
    const double m = mean_value(est);
    if (!(m > 0.0))
        throw std::invalid_argument("m3_illumination_estimate: smoothed image has non-positive mean");
    for (double& v : est.values) v /= m;
    return est;
}

// First step of M3: divide the linear-domain image by the normalized
// illumination estimate.
inline GridImage m3_correct(const GridImage& F, double sigma) {
    for (double v : F.values)
        if (!(v > 0.0))
            throw std::invalid_argument("solve_m3: input must be strictly positive");
    const GridImage est = m3_illumination_estimate(F, sigma);
    GridImage corrected(F.shape);
    for (std::size_t j = 0; j < F.values.size(); ++j)
        corrected.values[j] = F.values[j] / est.values[j];
    return corrected;
}

// F is the linear-domain image (strictly positive, offset already applied).
inline SolveResult solve_m3(const GridImage& F, int K, double lambda, double sigma,
                            const SolverConfig& cfg) {
    GridImage corrected = m3_correct(F, sigma);
    for (double& v : corrected.values) v = std::log(v);
    return solve_m2(corrected, K, lambda, cfg);
}

} // namespace palmseg
