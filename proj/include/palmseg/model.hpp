#pragma once

// Segmentation energy with a multiplicative illumination model, in the log
// domain.  For a log-image f, per-class log-centers c and a log-illumination
// field l the objective is
//
//   E(u,c,l) = sum_k sum_j u_k(j) (f(j) - l(j) - c_k)^2
//            + sum_k lambda_k || |grad u_k| ||_1
//            + gamma ||grad l||_2^2,
//
// subject to (u_k(j))_k lying in the probability simplex at every pixel.
// The smooth coupling part H(u,c,l) = data + gamma ||grad l||^2 is linear in
// u and quadratic in (c,l); its three partial gradients drive the solver.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "palmseg/grid.hpp"

namespace palmseg {

// Per-pixel K-vector field stored as K contiguous planes of n values:
// probs[k*n + j].  Solver-produced assignments satisfy the simplex
// constraint per pixel; the same container also holds unconstrained
// per-pixel-per-class data such as gradients.
struct LabelAssignment {
    GridShape shape;
    int num_classes = 0;
    std::vector<double> probs;

    LabelAssignment() = default;
    LabelAssignment(const GridShape& s, int K, double fill = 0.0)
        : shape(s), num_classes(K), probs(s.pixels() * static_cast<std::size_t>(K), fill) {
        if (K < 1) throw std::invalid_argument("LabelAssignment: class count must be >= 1");
    }

    std::span<double> plane(int k) {
        return {probs.data() + static_cast<std::size_t>(k) * shape.pixels(), shape.pixels()};
    }
    std::span<const double> plane(int k) const {
        return {probs.data() + static_cast<std::size_t>(k) * shape.pixels(), shape.pixels()};
    }
    double at(std::size_t j, int k) const {
        return probs[static_cast<std::size_t>(k) * shape.pixels() + j];
    }
};

inline LabelAssignment make_uniform_labels(const GridShape& shape, int K) {
    if (K < 2) throw std::invalid_argument("make_uniform_labels: need at least 2 classes");
    return LabelAssignment(shape, K, 1.0 / static_cast<double>(K));
}

// Largest deviation from the per-pixel simplex constraint: negativity,
// excess over 1, or row-sum error.
inline double max_simplex_violation(const LabelAssignment& u) {
    const std::size_t n = u.shape.pixels();
    double worst = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (int k = 0; k < u.num_classes; ++k) {
            const double v = u.probs[static_cast<std::size_t>(k) * n + j];
            sum += v;
            if (-v > worst) worst = -v;
            if (v - 1.0 > worst) worst = v - 1.0;
        }
        const double e = std::fabs(sum - 1.0);
        if (e > worst) worst = e;
    }
    return worst;
}

inline bool on_simplex(const LabelAssignment& u, double tol = 1e-9) {
    return max_simplex_violation(u) <= tol;
}

// K log-domain class centers; frozen entries are skipped by center updates.
struct Codebook {
    std::vector<double> centers;
    std::vector<std::uint8_t> frozen;

    Codebook() = default;
    explicit Codebook(std::vector<double> c)
        : centers(std::move(c)), frozen(centers.size(), 0) {}
    Codebook(std::vector<double> c, std::vector<std::uint8_t> fr)
        : centers(std::move(c)), frozen(std::move(fr)) {
        if (frozen.size() != centers.size())
            throw std::invalid_argument("Codebook: frozen mask size mismatch");
    }

    int size() const { return static_cast<int>(centers.size()); }
};

// Log-illumination field; the solver keeps it on the zero-mean hyperplane.
using Illumination = GridImage;

struct ModelParams {
    std::vector<double> lambdas; // per-class TV weights
    double gamma = 0.0;          // illumination smoothness weight

    void validate(int K) const {
        if (static_cast<int>(lambdas.size()) != K)
            throw std::invalid_argument("ModelParams: lambda count must equal class count");
        for (double l : lambdas)
            if (!(l > 0.0)) throw std::invalid_argument("ModelParams: lambdas must be > 0");
        if (!(gamma > 0.0)) throw std::invalid_argument("ModelParams: gamma must be > 0");
    }
};

inline void require_same_shape(const GridShape& a, const GridShape& b, const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + a.to_string() +
                                    " vs " + b.to_string() + ")");
}

// sum_k sum_j u_k(j) (f(j) - l(j) - c_k)^2
inline double data_term(const LabelAssignment& u, const Codebook& c, const Illumination& l,
                        const GridImage& f) {
    require_same_shape(u.shape, f.shape, "data_term");
    require_same_shape(l.shape, f.shape, "data_term");
    if (c.size() != u.num_classes)
        throw std::invalid_argument("data_term: codebook size does not match class count");
    const std::size_t n = f.shape.pixels();
    double total = 0.0;
    for (int k = 0; k < u.num_classes; ++k) {
        const double ck = c.centers[static_cast<std::size_t>(k)];
        std::span<const double> uk = u.plane(k);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double r = f.values[j] - l.values[j] - ck;
            s += uk[j] * r * r;
        }
        total += s;
    }
    return total;
}

// Isotropic total variation: sum_k lambda_k sum_j |(grad u_k)(j)|_2.
inline double tv_term(const LabelAssignment& u, std::span<const double> lambdas) {
    if (lambdas.size() != static_cast<std::size_t>(u.num_classes))
        throw std::invalid_argument("tv_term: lambda count must equal class count");
    const std::size_t n = u.shape.pixels();
    const int d = u.shape.ndim();
    std::vector<double> grad(n * static_cast<std::size_t>(d));
    double total = 0.0;
    for (int k = 0; k < u.num_classes; ++k) {
        gradient_into(u.shape, u.plane(k), grad);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double q = 0.0;
            for (int i = 0; i < d; ++i) {
                const double g = grad[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)];
                q += g * g;
            }
            s += std::sqrt(q);
        }
        total += lambdas[static_cast<std::size_t>(k)] * s;
    }
    return total;
}

// gamma * ||grad l||_2^2
inline double smoothness_term(const Illumination& l, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("smoothness_term: gamma must be > 0");
    const std::size_t n = l.shape.pixels();
    const int d = l.shape.ndim();
    std::vector<double> grad(n * static_cast<std::size_t>(d));
    gradient_into(l.shape, l.values, grad);
    double s = 0.0;
    for (double g : grad) s += g * g;
    return gamma * s;
}

struct EnergyTerms {
    double data = 0.0;
    double tv = 0.0;
    double smooth = 0.0;
    double total() const { return data + tv + smooth; }
};

// The three finite energy components, evaluated without the simplex gate.
inline EnergyTerms energy_terms(const LabelAssignment& u, const Codebook& c,
                                const Illumination& l, const GridImage& f,
                                const ModelParams& params) {
    EnergyTerms t;
    t.data = data_term(u, c, l, f);
    t.tv = tv_term(u, params.lambdas);
    t.smooth = smoothness_term(l, params.gamma);
    return t;
}

// Full energy.  Returns nullopt when u violates the simplex constraint
// (the indicator contributes +infinity); callers must handle that case.
inline std::optional<double> energy(const LabelAssignment& u, const Codebook& c,
                                    const Illumination& l, const GridImage& f,
                                    const ModelParams& params, double simplex_tol = 1e-9) {
    if (!on_simplex(u, simplex_tol)) return std::nullopt;
    return energy_terms(u, c, l, f, params).total();
}

// Smooth coupling H(u,c,l) = data_term + gamma ||grad l||^2.
inline double smooth_part(const LabelAssignment& u, const Codebook& c, const Illumination& l,
                          const GridImage& f, double gamma) {
    return data_term(u, c, l, f) + smoothness_term(l, gamma);
}

// d/du_k(j) H = (f(j) - l(j) - c_k)^2.  Does not depend on u, so the u
// argument is not taken; the Lipschitz constant of this partial gradient
// in u is 0.
inline void grad_u_H_into(const Codebook& c, const Illumination& l, const GridImage& f,
                          LabelAssignment& out) {
    const std::size_t n = f.shape.pixels();
    for (int k = 0; k < c.size(); ++k) {
        const double ck = c.centers[static_cast<std::size_t>(k)];
        std::span<double> plane = out.plane(k);
        for (std::size_t j = 0; j < n; ++j) {
            const double r = f.values[j] - l.values[j] - ck;
            plane[j] = r * r;
        }
    }
}

inline LabelAssignment grad_u_H(const Codebook& c, const Illumination& l, const GridImage& f) {
    require_same_shape(l.shape, f.shape, "grad_u_H");
    LabelAssignment out(f.shape, c.size());
    grad_u_H_into(c, l, f, out);
    return out;
}

// d/dc_k H = 2 sum_j u_k(j) (c_k + l(j) - f(j))
inline std::vector<double> grad_c_H(const LabelAssignment& u, const Codebook& c,
                                    const Illumination& l, const GridImage& f) {
    require_same_shape(u.shape, f.shape, "grad_c_H");
    const std::size_t n = f.shape.pixels();
    std::vector<double> g(static_cast<std::size_t>(u.num_classes), 0.0);
    for (int k = 0; k < u.num_classes; ++k) {
        const double ck = c.centers[static_cast<std::size_t>(k)];
        std::span<const double> uk = u.plane(k);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            s += uk[j] * (ck + l.values[j] - f.values[j]);
        g[static_cast<std::size_t>(k)] = 2.0 * s;
    }
    return g;
}

// d/dl(j) H = 2 sum_k u_k(j) (l(j) + c_k - f(j)) + 2 gamma (div* grad l)(j)
inline void grad_l_H_into(const LabelAssignment& u, const Codebook& c, const Illumination& l,
                          const GridImage& f, double gamma, GridImage& out,
                          std::vector<double>& scratch_field) {
    const std::size_t n = f.shape.pixels();
    laplacian_into(l.shape, l.values, out.values, scratch_field);
    for (std::size_t j = 0; j < n; ++j) out.values[j] *= 2.0 * gamma;
    for (int k = 0; k < u.num_classes; ++k) {
        const double ck = c.centers[static_cast<std::size_t>(k)];
        std::span<const double> uk = u.plane(k);
        for (std::size_t j = 0; j < n; ++j)
            out.values[j] += 2.0 * uk[j] * (l.values[j] + ck - f.values[j]);
    }
}

inline GridImage grad_l_H(const LabelAssignment& u, const Codebook& c, const Illumination& l,
                          const GridImage& f, double gamma) {
    require_same_shape(u.shape, f.shape, "grad_l_H");
    require_same_shape(l.shape, f.shape, "grad_l_H");
    if (!(gamma > 0.0)) throw std::invalid_argument("grad_l_H: gamma must be > 0");
    GridImage out(f.shape);
    std::vector<double> scratch;
    grad_l_H_into(u, c, l, f, gamma, out, scratch);
    return out;
}

} // namespace palmseg
