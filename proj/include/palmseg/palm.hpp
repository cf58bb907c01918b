#pragma once

// Outer alternating solver with three blocks per iteration:
//
//   u: TV-simplex prox of u - (1/tau1) dH/du    (inner primal-dual loop)
//   c: gradient step  c - (1/tau2) dH/dc        (frozen entries skipped)
//   l: gradient step projected back onto the zero-mean hyperplane,
//      l = P0( l - (1/tau3) dH/dl )
//
// tau1 acts as the weight of the proximal anchor; because dH/du does not
// depend on u it can be taken very small, which makes the u-step solve the
// full convex labeling subproblem almost exactly.  tau2 is n (the observed
// numerically stable choice) or 2n (the provable Lipschitz bound), and tau3
// is always the Lipschitz bound 2 + 8*d*gamma.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "palmseg/grid.hpp"
#include "palmseg/model.hpp"
#include "palmseg/prox.hpp"

namespace palmseg {

enum class Tau2Mode {
    paper_numeric, // tau2 = n
    lipschitz      // tau2 = 2n
};

struct SolverConfig {
    ModelParams params;
    int outer_iters = 2000;
    PdhgConfig inner;
    double tau1 = 1e-6;
    Tau2Mode tau2_mode = Tau2Mode::paper_numeric;
    double init_sigma = 30.0;                 // Gaussian width of the illumination init
    std::vector<std::uint8_t> frozen_centers; // size K, or empty for none
    int log_every = 10;
    double energy_tol = 0.0;            // relative energy-change stop; 0 disables
    bool update_illumination = true;    // false: l stays fixed at its initial value
    bool warm_start_duals = true;

    double tau2(std::size_t n) const {
        const double base = static_cast<double>(n);
        return tau2_mode == Tau2Mode::lipschitz ? 2.0 * base : base;
    }
    double tau3(int ndim) const { return 2.0 + 8.0 * static_cast<double>(ndim) * params.gamma; }

    void validate(int K) const {
        params.validate(K);
        if (outer_iters < 1) throw std::invalid_argument("SolverConfig: outer_iters must be >= 1");
        if (!(tau1 > 0.0)) throw std::invalid_argument("SolverConfig: tau1 must be > 0");
        if (!(init_sigma > 0.0)) throw std::invalid_argument("SolverConfig: init_sigma must be > 0");
        if (log_every < 1) throw std::invalid_argument("SolverConfig: log_every must be >= 1");
        if (!frozen_centers.empty() && static_cast<int>(frozen_centers.size()) != K)
            throw std::invalid_argument("SolverConfig: frozen mask size must equal class count");
    }
};

struct TraceRow {
    int iter = 0;
    double energy = 0.0;
    double data = 0.0;
    double tv = 0.0;
    double smooth = 0.0;
    double max_simplex_violation = 0.0;
    double mean_l = 0.0;
    double seconds = 0.0;
};

struct SolveTrace {
    std::vector<TraceRow> rows;
    int iters_run = 0;
    int descent_violations = 0;         // iterations where the energy rose past the slack
    double max_simplex_violation = 0.0; // over every outer iteration, not just logged ones
    double max_abs_mean_l = 0.0;        // likewise
};

struct SolveResult {
    LabelAssignment u;
    Codebook c;
    Illumination l;
    std::vector<int> labels;
    SolveTrace trace;
};

struct InitState {
    LabelAssignment u;
    Codebook c;
    Illumination l;
};

// Per-pixel argmax with ties resolved to the smallest class index.
inline std::vector<int> extract_labels(const LabelAssignment& u) {
    const std::size_t n = u.shape.pixels();
    std::vector<int> labels(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        int best = 0;
        double bestv = u.probs[j];
        for (int k = 1; k < u.num_classes; ++k) {
            const double v = u.probs[static_cast<std::size_t>(k) * n + j];
            if (v > bestv) {
                bestv = v;
                best = k;
            }
        }
        labels[j] = best;
    }
    return labels;
}

// Initial state: uniform labels, the illumination as a heavily smoothed,
// zero-mean copy of f, and centers either user-supplied or taken as the
// (k - 1/2)/K quantiles of the residual f - l.
inline InitState initialize(const GridImage& f, int K, const SolverConfig& cfg,
                            const std::vector<double>* center_guess = nullptr) {
    if (K < 2) throw std::invalid_argument("initialize: need at least 2 classes");
    cfg.validate(K);
    require_finite(f, "initialize");

    InitState st;
    st.u = make_uniform_labels(f.shape, K);
    st.l = cfg.update_illumination ? project_zero_mean(gaussian_smooth(f, cfg.init_sigma))
                                   : Illumination(f.shape, 0.0);

    std::vector<double> centers(static_cast<std::size_t>(K));
    if (center_guess) {
        if (center_guess->size() != static_cast<std::size_t>(K))
            throw std::invalid_argument("initialize: center guess size must equal class count");
        centers = *center_guess;
    } else {
        const std::size_t n = f.shape.pixels();
        std::vector<double> residual(n);
        for (std::size_t j = 0; j < n; ++j) residual[j] = f.values[j] - st.l.values[j];
        std::sort(residual.begin(), residual.end());
        for (int k = 0; k < K; ++k) {
            const double level = (static_cast<double>(k) + 0.5) / static_cast<double>(K);
            std::size_t idx = static_cast<std::size_t>(level * static_cast<double>(n));
            if (idx >= n) idx = n - 1;
            centers[static_cast<std::size_t>(k)] = residual[idx];
        }
    }
    std::vector<std::uint8_t> frozen =
        cfg.frozen_centers.empty() ? std::vector<std::uint8_t>(static_cast<std::size_t>(K), 0)
                                   : cfg.frozen_centers;
    st.c = Codebook(std::move(centers), std::move(frozen));
    return st;
}

inline SolveResult solve(const GridImage& f, int K, const SolverConfig& cfg,
                         const InitState* init = nullptr) {
    cfg.validate(K);
    require_finite(f, "solve");

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    InitState state = init ? *init : initialize(f, K, cfg);
    require_same_shape(state.u.shape, f.shape, "solve");
    require_same_shape(state.l.shape, f.shape, "solve");
    if (state.u.num_classes != K || state.c.size() != K)
        throw std::invalid_argument("solve: initial state has wrong class count");
    if (!cfg.frozen_centers.empty()) state.c.frozen = cfg.frozen_centers;

    const std::size_t n = f.shape.pixels();
    const int d = f.shape.ndim();
    const double tau1 = cfg.tau1;
    const double tau2 = cfg.tau2(n);
    const double tau3 = cfg.tau3(d);
    const double gamma = cfg.params.gamma;

    SolveResult res;
    res.u = std::move(state.u);
    res.c = std::move(state.c);
    res.l = std::move(state.l);

    LabelAssignment z(f.shape, K);
    GridImage gl(f.shape);
    GridImage lstep(f.shape);
    DualField dual(f.shape, K);
    TvProxWorkspace prox_ws;
    std::vector<double> lap_scratch;

    auto record = [&](int iter, const EnergyTerms& terms) {
        TraceRow row;
        row.iter = iter;
        row.data = terms.data;
        row.tv = terms.tv;
        row.smooth = terms.smooth;
        row.energy = terms.total();
        row.max_simplex_violation = max_simplex_violation(res.u);
        row.mean_l = mean_value(res.l);
        row.seconds = elapsed();
        res.trace.rows.push_back(row);
    };
    auto track_feasibility = [&] {
        const double sv = max_simplex_violation(res.u);
        if (sv > res.trace.max_simplex_violation) res.trace.max_simplex_violation = sv;
        const double ml = std::fabs(mean_value(res.l));
        if (ml > res.trace.max_abs_mean_l) res.trace.max_abs_mean_l = ml;
    };

    EnergyTerms terms = energy_terms(res.u, res.c, res.l, f, cfg.params);
    double energy_prev = terms.total();
    track_feasibility();
    record(0, terms);

    int last_logged = 0;
    for (int r = 0; r < cfg.outer_iters; ++r) {
        // u-block
        grad_u_H_into(res.c, res.l, f, z);
        for (std::size_t i = 0; i < z.probs.size(); ++i)
            z.probs[i] = res.u.probs[i] - z.probs[i] / tau1;
        TvProxResult prox = prox_tv_simplex(z, cfg.params.lambdas, tau1, cfg.inner, &res.u,
                                            cfg.warm_start_duals ? &dual : nullptr, &prox_ws);
        res.u = std::move(prox.u);
        if (cfg.warm_start_duals) dual = std::move(prox.dual);

        // c-block
        res.c = step_c(res.c, grad_c_H(res.u, res.c, res.l, f), tau2);

        // l-block
        if (cfg.update_illumination) {
            grad_l_H_into(res.u, res.c, res.l, f, gamma, gl, lap_scratch);
            for (std::size_t j = 0; j < n; ++j)
                lstep.values[j] = res.l.values[j] - gl.values[j] / tau3;
            res.l = project_zero_mean(lstep);
        }

        terms = energy_terms(res.u, res.c, res.l, f, cfg.params);
        const double energy_now = terms.total();
        if (!std::isfinite(energy_now))
            throw std::runtime_error("solve: non-finite energy at outer iteration " +
                                     std::to_string(r + 1));
        if (energy_now > energy_prev + 1e-7 * (1.0 + std::fabs(energy_prev)))
            ++res.trace.descent_violations;
        track_feasibility();

        res.trace.iters_run = r + 1;
        if ((r + 1) % cfg.log_every == 0) {
            record(r + 1, terms);
            last_logged = r + 1;
        }
        if (cfg.energy_tol > 0.0 &&
            std::fabs(energy_now - energy_prev) <= cfg.energy_tol * (1.0 + std::fabs(energy_prev))) {
            energy_prev = energy_now;
            break;
        }
        energy_prev = energy_now;
    }
    if (last_logged != res.trace.iters_run) record(res.trace.iters_run, terms);

    res.labels = extract_labels(res.u);
    return res;
}

} // namespace palmseg
