#pragma once

// Per-block proximal maps used by the alternating solver.
//
// The expensive one is the TV-regularized simplex prox
//
//   argmin_u  (step/2) ||u - z||^2 + sum_k lambda_k || |grad u_k| ||_1
//             s.t. (u_k(j))_k in the simplex for every pixel j,
//
// which has no closed form and is computed by a primal-dual (Chambolle-Pock
// type) iteration: the dual variable is one d-vector per pixel per class,
// constrained to the Euclidean ball of radius lambda_k, and the primal update
// is a per-pixel simplex projection of a weighted average with z.  Both
// feasibility constraints therefore hold exactly after every iteration.

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "palmseg/grid.hpp"
#include "palmseg/model.hpp"

namespace palmseg {

// Dual variable of the TV term: values[(k*n + j)*d + i].
struct DualField {
    GridShape shape;
    int num_classes = 0;
    std::vector<double> values;

    DualField() = default;
    DualField(const GridShape& s, int K)
        : shape(s), num_classes(K),
          values(s.pixels() * static_cast<std::size_t>(K) * static_cast<std::size_t>(s.ndim()), 0.0) {}

    std::span<double> plane(int k) {
        const std::size_t nd = shape.pixels() * static_cast<std::size_t>(shape.ndim());
        return {values.data() + static_cast<std::size_t>(k) * nd, nd};
    }
    std::span<const double> plane(int k) const {
        const std::size_t nd = shape.pixels() * static_cast<std::size_t>(shape.ndim());
        return {values.data() + static_cast<std::size_t>(k) * nd, nd};
    }
};

// Largest per-pixel dual norm excess over the lambda_k ball; feasible duals
// give a non-positive value.
inline double max_dual_violation(const DualField& p, std::span<const double> lambdas) {
    const std::size_t n = p.shape.pixels();
    const int d = p.shape.ndim();
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < p.num_classes; ++k) {
        std::span<const double> pk = p.plane(k);
        for (std::size_t j = 0; j < n; ++j) {
            double q = 0.0;
            for (int i = 0; i < d; ++i) {
                const double v = pk[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)];
                q += v * v;
            }
            const double excess = std::sqrt(q) - lambdas[static_cast<std::size_t>(k)];
            if (excess > worst) worst = excess;
        }
    }
    return worst;
}

struct PdhgConfig {
    int inner_iters = 50;
    double sigma = 0.0; // dual step; 0 selects 1/sqrt(4d)
    double tau = 0.0;   // primal step; 0 selects 1/sqrt(4d)
    double gap_tol = 0.0;        // optional duality-gap stop; 0 keeps the fixed count
    int gap_check_every = 10;

    double effective_sigma(int ndim) const { return sigma > 0.0 ? sigma : 1.0 / std::sqrt(4.0 * ndim); }
    double effective_tau(int ndim) const { return tau > 0.0 ? tau : 1.0 / std::sqrt(4.0 * ndim); }

    void validate(int ndim) const {
        if (inner_iters < 1) throw std::invalid_argument("PdhgConfig: inner_iters must be >= 1");
        const double s = effective_sigma(ndim);
        const double t = effective_tau(ndim);
        if (!(s > 0.0) || !(t > 0.0))
            throw std::invalid_argument("PdhgConfig: step sizes must be > 0");
        if (s * t * 4.0 * ndim > 1.0 + 1e-12)
            throw std::invalid_argument("PdhgConfig: sigma*tau*4d must be <= 1");
        if (gap_check_every < 1) throw std::invalid_argument("PdhgConfig: gap_check_every must be >= 1");
    }
};

// Euclidean projection onto the probability simplex, by sorting and
// thresholding: with the entries sorted descending, the threshold is
// theta = (sum of the rho largest - 1)/rho for the largest feasible rho,
// and the projection is max(v - theta, 0).
inline void project_simplex(std::span<double> v) {
    const std::size_t K = v.size();
    if (K == 0) return;
    if (K == 1) { v[0] = 1.0; return; }

    std::array<double, 16> stack_buf;
    std::vector<double> heap_buf;
    std::span<double> sorted;
    if (K <= stack_buf.size()) {
        std::memcpy(stack_buf.data(), v.data(), K * sizeof(double));
        sorted = {stack_buf.data(), K};
    } else {
        heap_buf.assign(v.begin(), v.end());
        sorted = {heap_buf.data(), K};
    }
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    double cumsum = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        cumsum += sorted[i];
        const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
        if (sorted[i] - t > 0.0) theta = t;
    }
    for (std::size_t i = 0; i < K; ++i) v[i] = std::max(v[i] - theta, 0.0);
}

inline std::vector<double> project_simplex(std::vector<double> v) {
    project_simplex(std::span<double>(v));
    return v;
}

// (step/2)||u - z||^2 + sum_k lambda_k || |grad u_k| ||_1
inline double tv_prox_objective(const LabelAssignment& u, const LabelAssignment& z,
                                std::span<const double> lambdas, double step) {
    double quad = 0.0;
    for (std::size_t i = 0; i < u.probs.size(); ++i) {
        const double r = u.probs[i] - z.probs[i];
        quad += r * r;
    }
    return 0.5 * step * quad + tv_term(u, lambdas);
}

// Duality gap of the TV-simplex prox at (u, p); the dual ball constraints are
// assumed active (the iteration projects them every step).  The conjugate of
// the strongly convex primal block is evaluated exactly through a per-pixel
// simplex projection, so the gap is a true optimality certificate.
inline double tv_prox_gap(const LabelAssignment& u, const DualField& p, const LabelAssignment& z,
                          std::span<const double> lambdas, double step) {
    const std::size_t n = z.shape.pixels();
    const int K = z.num_classes;

    double primal = tv_prox_objective(u, z, lambdas, step);

    // w = -div* p, one value per pixel per class
    std::vector<double> w(n * static_cast<std::size_t>(K));
    std::vector<double> divk(n);
    for (int k = 0; k < K; ++k) {
        divergence_into(z.shape, p.plane(k), divk);
        for (std::size_t j = 0; j < n; ++j)
            w[static_cast<std::size_t>(k) * n + j] = -divk[j];
    }

    double conj = 0.0;
    std::vector<double> y(static_cast<std::size_t>(K));
    for (std::size_t j = 0; j < n; ++j) {
        for (int k = 0; k < K; ++k)
            y[static_cast<std::size_t>(k)] =
                z.probs[static_cast<std::size_t>(k) * n + j] + w[static_cast<std::size_t>(k) * n + j] / step;
        project_simplex(std::span<double>(y));
        for (int k = 0; k < K; ++k) {
            const double yk = y[static_cast<std::size_t>(k)];
            const double zk = z.probs[static_cast<std::size_t>(k) * n + j];
            conj += w[static_cast<std::size_t>(k) * n + j] * yk - 0.5 * step * (yk - zk) * (yk - zk);
        }
    }
    return primal + conj;
}

struct TvProxResult {
    LabelAssignment u;
    DualField dual;
    int iters_run = 0;
    double final_gap = std::numeric_limits<double>::quiet_NaN(); // set when the gap stop is active
};

struct TvProxWorkspace {
    std::vector<double> grad;
    std::vector<double> div;
    std::vector<double> ubar;
};

// Approximate minimizer of (step/2)||u-z||^2 + TV + simplex indicator.
// warm_primal/warm_dual, when given, start the iteration from an earlier
// solution; the returned dual can be fed back in for the next call.
inline TvProxResult prox_tv_simplex(const LabelAssignment& z, std::span<const double> lambdas,
                                    double step, const PdhgConfig& cfg,
                                    const LabelAssignment* warm_primal = nullptr,
                                    DualField* warm_dual = nullptr,
                                    TvProxWorkspace* workspace = nullptr) {
    if (!(step > 0.0)) throw std::invalid_argument("prox_tv_simplex: step must be > 0");
    if (lambdas.size() != static_cast<std::size_t>(z.num_classes))
        throw std::invalid_argument("prox_tv_simplex: lambda count must equal class count");
    for (double l : lambdas)
        if (l < 0.0) throw std::invalid_argument("prox_tv_simplex: lambdas must be >= 0");
    const int d = z.shape.ndim();
    cfg.validate(d);

    const std::size_t n = z.shape.pixels();
    const std::size_t sd = static_cast<std::size_t>(d);
    const int K = z.num_classes;
    const double sigma = cfg.effective_sigma(d);
    const double tau = cfg.effective_tau(d);
    const double w = tau * step;                 // weight of the anchor z in the primal update

    TvProxResult res;
    if (warm_primal) {
        if (warm_primal->shape != z.shape || warm_primal->num_classes != K)
            throw std::invalid_argument("prox_tv_simplex: warm primal has wrong shape");
        res.u = *warm_primal;
    } else {
        res.u = LabelAssignment(z.shape, K);
        std::vector<double> row(static_cast<std::size_t>(K));
        for (std::size_t j = 0; j < n; ++j) {
            for (int k = 0; k < K; ++k) row[static_cast<std::size_t>(k)] = z.probs[static_cast<std::size_t>(k) * n + j];
            project_simplex(std::span<double>(row));
            for (int k = 0; k < K; ++k) res.u.probs[static_cast<std::size_t>(k) * n + j] = row[static_cast<std::size_t>(k)];
        }
    }
    if (warm_dual && warm_dual->num_classes == K && warm_dual->shape == z.shape)
        res.dual = std::move(*warm_dual);
    else
        res.dual = DualField(z.shape, K);

    TvProxWorkspace local;
    TvProxWorkspace& ws = workspace ? *workspace : local;
    ws.grad.resize(n * sd);
    ws.div.resize(static_cast<std::size_t>(K) * n);
    ws.ubar.assign(res.u.probs.begin(), res.u.probs.end());

    std::vector<double> row(static_cast<std::size_t>(K));
    for (int it = 0; it < cfg.inner_iters; ++it) {
        // dual ascent + projection onto the lambda_k balls, then -div* p
        for (int k = 0; k < K; ++k) {
            std::span<double> pk = res.dual.plane(k);
            gradient_into(z.shape, {ws.ubar.data() + static_cast<std::size_t>(k) * n, n}, ws.grad);
            const double lam = lambdas[static_cast<std::size_t>(k)];
            for (std::size_t j = 0; j < n; ++j) {
                double q = 0.0;
                for (std::size_t i = 0; i < sd; ++i) {
                    const double v = pk[j * sd + i] + sigma * ws.grad[j * sd + i];
                    pk[j * sd + i] = v;
                    q += v * v;
                }
                const double norm = std::sqrt(q);
                if (norm > lam) {
                    const double scale = (norm > 0.0) ? lam / norm : 0.0;
                    for (std::size_t i = 0; i < sd; ++i) pk[j * sd + i] *= scale;
                }
            }
            divergence_into(z.shape, pk, {ws.div.data() + static_cast<std::size_t>(k) * n, n});
        }

        // primal descent: per-pixel simplex projection of the averaged point,
        // followed by the over-relaxation for the next dual step
        for (std::size_t j = 0; j < n; ++j) {
            for (int k = 0; k < K; ++k) {
                const std::size_t idx = static_cast<std::size_t>(k) * n + j;
                const double x = res.u.probs[idx] - tau * ws.div[idx];
                row[static_cast<std::size_t>(k)] = (x + w * z.probs[idx]) / (1.0 + w);
            }
            project_simplex(std::span<double>(row));
            for (int k = 0; k < K; ++k) {
                const std::size_t idx = static_cast<std::size_t>(k) * n + j;
                const double unew = row[static_cast<std::size_t>(k)];
                ws.ubar[idx] = 2.0 * unew - res.u.probs[idx];
                res.u.probs[idx] = unew;
            }
        }

        res.iters_run = it + 1;
        if (cfg.gap_tol > 0.0 && (it + 1) % cfg.gap_check_every == 0) {
            res.final_gap = tv_prox_gap(res.u, res.dual, z, lambdas, step);
            if (res.final_gap <= cfg.gap_tol) break;
        }
    }
    return res;
}

// Gradient step on the codebook; frozen entries are copied unchanged.
inline Codebook step_c(const Codebook& c, std::span<const double> g, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("step_c: step must be > 0");
    if (g.size() != c.centers.size())
        throw std::invalid_argument("step_c: gradient size does not match codebook");
    Codebook out = c;
    for (std::size_t k = 0; k < out.centers.size(); ++k)
        if (!out.frozen[k]) out.centers[k] = c.centers[k] - g[k] / step;
    return out;
}

// Euclidean projection onto the zero-mean hyperplane {l : <1, l> = 0},
// i.e. subtract the mean value.
inline Illumination project_zero_mean(const GridImage& a) {
    const std::size_t n = a.shape.pixels();
    double sum = 0.0;
    for (double v : a.values) sum += v;
    const double mean = sum / static_cast<double>(n);
    Illumination out(a.shape);
    for (std::size_t j = 0; j < n; ++j) out.values[j] = a.values[j] - mean;
    return out;
}

inline double mean_value(const GridImage& img) {
    double sum = 0.0;
    for (double v : img.values) sum += v;
    return sum / static_cast<double>(img.shape.pixels());
}

} // namespace palmseg
