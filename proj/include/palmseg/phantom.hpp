#pragma once

// Synthetic evaluation harness: phantoms built as piecewise-constant class
// values times a smooth multiplicative illumination field plus Gaussian
// noise, a permutation-matched misclassification metric, and the noise-sweep
// grid search that tunes the TV weight per noise level.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "palmseg/baselines.hpp"
#include "palmseg/format.hpp"
#include "palmseg/palm.hpp"

namespace palmseg {

struct IllumSpec {
    enum class Kind { ramp, gaussian_bump, product_of_sines };
    Kind kind = Kind::ramp;
    double a = 0.5; // ramp: low end; bump/sines: amplitude
    double b = 1.5; // ramp: high end; bump: relative width

    static IllumSpec ramp(double lo = 0.5, double hi = 1.5) { return {Kind::ramp, lo, hi}; }
    static IllumSpec gaussian_bump(double amplitude = 0.8, double width = 0.35) {
        return {Kind::gaussian_bump, amplitude, width};
    }
    static IllumSpec product_of_sines(double amplitude = 0.6) {
        return {Kind::product_of_sines, amplitude, 0.0};
    }
};

struct Phantom {
    GridImage F;                  // linear-domain noisy image, clamped at 0
    std::vector<int> true_labels;
    GridImage true_L;             // strictly positive, mean 1
    std::vector<double> class_values;
    double noise_std = 0.0;
};

namespace detail {

// Deterministic standard-normal stream (Box-Muller on a fixed 64-bit engine),
// so phantoms are bit-identical for a given seed on a given platform.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : eng_(seed) {}
    double next() {
        const double u1 = 1.0 - std::ldexp(static_cast<double>(eng_() >> 11), -53); // (0,1]
        const double u2 = std::ldexp(static_cast<double>(eng_() >> 11), -53);       // [0,1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 eng_;
};

inline void grid_coords(const GridShape& shape, std::size_t j, double* x) {
    for (int i = 0; i < shape.ndim(); ++i) {
        const std::size_t a = shape.stride(i);
        x[i] = static_cast<double>((j / a) % static_cast<std::size_t>(shape.extent(i)));
    }
}

} // namespace detail

inline GridImage make_illumination_field(const GridShape& shape, const IllumSpec& spec) {
    const std::size_t n = shape.pixels();
    const int d = shape.ndim();
    GridImage L(shape, 1.0);
    double x[3] = {0, 0, 0};
    switch (spec.kind) {
    case IllumSpec::Kind::ramp: {
        if (!(spec.a > 0.0) || !(spec.b > 0.0))
            throw std::invalid_argument("make_illumination_field: ramp endpoints must be > 0");
        const double n1 = static_cast<double>(shape.extent(0));
        const double denom = n1 > 1.0 ? n1 - 1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            detail::grid_coords(shape, j, x);
            L.values[j] = spec.a + (spec.b - spec.a) * x[0] / denom;
        }
        break;
    }
    case IllumSpec::Kind::gaussian_bump: {
        if (!(spec.a > -1.0))
            throw std::invalid_argument("make_illumination_field: bump amplitude must be > -1");
        const double w = spec.b * static_cast<double>(shape.min_extent());
        for (std::size_t j = 0; j < n; ++j) {
            detail::grid_coords(shape, j, x);
            double q = 0.0;
            for (int i = 0; i < d; ++i) {
                const double c = 0.5 * static_cast<double>(shape.extent(i) - 1);
                q += (x[i] - c) * (x[i] - c);
            }
            L.values[j] = 1.0 + spec.a * std::exp(-0.5 * q / (w * w));
        }
        break;
    }
    case IllumSpec::Kind::product_of_sines: {
        if (!(std::fabs(spec.a) < 1.0))
            throw std::invalid_argument("make_illumination_field: sine amplitude must be in (-1,1)");
        for (std::size_t j = 0; j < n; ++j) {
            detail::grid_coords(shape, j, x);
            double p = 1.0;
            for (int i = 0; i < d; ++i) {
                const double denom = shape.extent(i) > 1 ? static_cast<double>(shape.extent(i) - 1) : 1.0;
                p *= std::sin(3.14159265358979323846 * x[i] / denom);
            }
            L.values[j] = 1.0 + spec.a * p;
        }
        break;
    }
    }
    const double m = mean_value(L);
    for (double& v : L.values) v /= m;
    for (double v : L.values)
        if (!(v > 0.0))
            throw std::invalid_argument("make_illumination_field: field must stay strictly positive");
    return L;
}

enum class PhantomGeometry {
    bars,      // thin slabs per class, perpendicular to alternating axes
    band_disks // one wide band plus compact disks (balls in 3D)
};

// Deterministic class geometry; class 0 is always the background and every
// class keeps at least one region so none is empty.  region_scale shrinks or
// grows the feature width of each class.
//
// `bars` renders each class as three thin slabs (width 9% of the axis per
// slab), so the structures are much thinner than typical initialization
// smoothing widths while the per-class areas stay large enough that the
// residual quantiles land inside every class.  `band_disks` renders class 1
// as a wide band along axis 0 and classes >= 2 as compact disks, giving
// sharp large-scale structure (and, with a small scale, a small fragile
// class).
inline std::vector<int> make_phantom_labels(const GridShape& shape, int K,
                                            PhantomGeometry geometry,
                                            std::span<const double> region_scale) {
    const std::size_t n = shape.pixels();
    const int d = shape.ndim();
    const double md = static_cast<double>(shape.min_extent());
    std::vector<int> labels(n, 0);
    double x[3] = {0, 0, 0};

    auto scale_of = [&](int k) {
        return region_scale.empty() ? 1.0 : region_scale[static_cast<std::size_t>(k)];
    };

    for (std::size_t j = 0; j < n; ++j) {
        detail::grid_coords(shape, j, x);

        if (geometry == PhantomGeometry::bars) {
            for (int k = 1; k < K; ++k) {
                const int axis = (k - 1) % d;
                const double extent = static_cast<double>(shape.extent(axis));
                const double rel = x[axis] / extent;
                const double half = 0.5 * 0.09 * scale_of(k);
                // second sweep over an axis uses shifted slab centers
                const bool shifted = (k - 1) >= d;
                const double centers[3] = {shifted ? 0.12 : 0.20, shifted ? 0.38 : 0.50,
                                           shifted ? 0.64 : 0.80};
                for (double c : centers)
                    if (rel >= c - half && rel < c + half) labels[j] = k;
            }
        } else {
            if (K >= 2) {
                const double n1 = static_cast<double>(shape.extent(0));
                const double lo = 0.10 * n1;
                const double hi = lo + 0.25 * scale_of(1) * n1;
                if (x[0] >= lo && x[0] < hi) labels[j] = 1;
            }
            for (int k = 2; k < K; ++k) {
                // fixed fractional centers per feature, golden-angle spread beyond the first
                double cf[3] = {0.68, 0.50, 0.50};
                double radius = 0.30 * scale_of(k) * md;
                if (k >= 3) {
                    const double ang = static_cast<double>(k - 3) * 2.39996322972865332;
                    cf[0] = 0.40 + 0.22 * std::cos(ang);
                    cf[1] = 0.78 - 0.22 * std::fabs(std::sin(ang));
                    cf[2] = 0.30;
                    radius = 0.10 * scale_of(k) * md;
                }
                double q = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double c = cf[i] * static_cast<double>(shape.extent(i) - 1);
                    q += (x[i] - c) * (x[i] - c);
                }
                if (q <= radius * radius) labels[j] = k;
            }
        }
    }

    for (int k = 0; k < K; ++k)
        if (std::find(labels.begin(), labels.end(), k) == labels.end())
            throw std::invalid_argument("make_phantom_labels: class " + std::to_string(k) +
                                        " has no pixels at this shape/scale");
    return labels;
}

inline Phantom make_phantom(const GridShape& shape, int K, std::vector<double> class_values,
                            const IllumSpec& illum, double noise_std, std::uint64_t seed,
                            PhantomGeometry geometry = PhantomGeometry::bars,
                            const std::vector<double>* region_scale = nullptr) {
    if (static_cast<int>(class_values.size()) != K)
        throw std::invalid_argument("make_phantom: need exactly K class values");
    for (double v : class_values)
        if (!(v > 0.0)) throw std::invalid_argument("make_phantom: class values must be > 0");
    std::vector<double> sorted = class_values;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("make_phantom: class values must be distinct");
    if (noise_std < 0.0) throw std::invalid_argument("make_phantom: noise level must be >= 0");
    if (region_scale && static_cast<int>(region_scale->size()) != K)
        throw std::invalid_argument("make_phantom: region_scale must have K entries");

    Phantom ph;
    ph.class_values = std::move(class_values);
    ph.noise_std = noise_std;
    ph.true_labels = make_phantom_labels(
        shape, K, geometry,
        region_scale ? std::span<const double>(*region_scale) : std::span<const double>());
    ph.true_L = make_illumination_field(shape, illum);

    const std::size_t n = shape.pixels();
    ph.F = GridImage(shape);
    detail::NormalSampler noise(seed);
    for (std::size_t j = 0; j < n; ++j) {
        const double clean = ph.class_values[static_cast<std::size_t>(ph.true_labels[j])] * ph.true_L.values[j];
        ph.F.values[j] = std::max(0.0, clean + noise_std * noise.next());
    }
    return ph;
}

struct Misclassification {
    long count = 0;
    double percent = 0.0;
};

// Number of disagreeing pixels under the best matching of predicted class
// indices to ground-truth indices (exhaustive over permutations).
inline Misclassification misclassified(std::span<const int> labels, std::span<const int> truth) {
    if (labels.size() != truth.size())
        throw std::invalid_argument("misclassified: label maps differ in size");
    int K = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        if (labels[j] < 0 || truth[j] < 0)
            throw std::invalid_argument("misclassified: negative class index");
        K = std::max(K, std::max(labels[j], truth[j]) + 1);
    }
    if (K > 8)
        throw std::invalid_argument("misclassified: exhaustive matching supports at most 8 classes");
    if (K == 0) return {0, 0.0};

    std::vector<long> confusion(static_cast<std::size_t>(K) * static_cast<std::size_t>(K), 0);
    for (std::size_t j = 0; j < labels.size(); ++j)
        ++confusion[static_cast<std::size_t>(labels[j]) * static_cast<std::size_t>(K) +
                    static_cast<std::size_t>(truth[j])];

    std::vector<int> perm(static_cast<std::size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    long best_agree = -1;
    do {
        long agree = 0;
        for (int p = 0; p < K; ++p)
            agree += confusion[static_cast<std::size_t>(p) * static_cast<std::size_t>(K) +
                               static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])];
        best_agree = std::max(best_agree, agree);
    } while (std::next_permutation(perm.begin(), perm.end()));

    Misclassification m;
    m.count = static_cast<long>(labels.size()) - best_agree;
    m.percent = 100.0 * static_cast<double>(m.count) / static_cast<double>(labels.size());
    return m;
}

enum class SweepMethod { full, m2, m3, full_frozen_c3 };

inline const char* to_string(SweepMethod m) {
    switch (m) {
    case SweepMethod::full: return "full";
    case SweepMethod::m2: return "m2";
    case SweepMethod::m3: return "m3";
    case SweepMethod::full_frozen_c3: return "full-frozen-c3";
    }
    return "?";
}

struct PhantomSpec {
    GridShape shape;
    int K = 3;
    std::vector<double> class_values;
    IllumSpec illum = IllumSpec::ramp();
    PhantomGeometry geometry = PhantomGeometry::bars;
    std::vector<double> region_scale; // empty: all 1
    std::uint64_t seed = 0;

    Phantom build(double noise_std, std::uint64_t noise_seed) const {
        return make_phantom(shape, K, class_values, illum, noise_std, noise_seed, geometry,
                            region_scale.empty() ? nullptr : &region_scale);
    }
};

struct SweepRow {
    double noise_std = 0.0;
    double lambda = 0.0;
    SweepMethod method = SweepMethod::full;
    long count = 0;
    double percent = 0.0;
    double energy_final = 0.0;
    int iters = 0;
    double seconds = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> cells;          // all (noise, lambda) runs, in grid order
    std::vector<SweepRow> best_per_noise; // minimum misclassification per noise level
};

// One solver run of `method` on a prepared phantom.
inline SweepRow run_sweep_cell(const Phantom& ph, int K, double lambda, SweepMethod method,
                               SolverConfig cfg, double log_epsilon) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.params.lambdas.assign(static_cast<std::size_t>(K), lambda);

    SolveResult result;
    switch (method) {
    case SweepMethod::full: {
        const GridImage f = to_log(ph.F, log_epsilon);
        result = solve(f, K, cfg);
        break;
    }
    case SweepMethod::full_frozen_c3: {
        // Pin the last center at its known value; the intended use is a
        // small class whose gray value is known a priori.
        const GridImage f = to_log(ph.F, log_epsilon);
        cfg.frozen_centers.assign(static_cast<std::size_t>(K), 0);
        cfg.frozen_centers.back() = 1;
        InitState st = initialize(f, K, cfg);
        st.c.centers.back() = std::log(ph.class_values.back());
        result = solve(f, K, cfg, &st);
        break;
    }
    case SweepMethod::m2: {
        const GridImage f = to_log(ph.F, log_epsilon);
        result = solve_m2(f, K, lambda, cfg);
        break;
    }
    case SweepMethod::m3: {
        GridImage F = ph.F;
        // the sweep pipeline offsets like the log transform so zero pixels survive
        for (double& v : F.values) v += log_epsilon;
        result = solve_m3(F, K, lambda, cfg.init_sigma, cfg);
        break;
    }
    }

    SweepRow row;
    row.noise_std = ph.noise_std;
    row.lambda = lambda;
    row.method = method;
    const Misclassification mc = misclassified(result.labels, ph.true_labels);
    row.count = mc.count;
    row.percent = mc.percent;
    row.energy_final = result.trace.rows.back().energy;
    row.iters = result.trace.iters_run;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

// Grid search over (noise level, lambda).  One phantom per noise level is
// shared by all lambda runs; cells are independent and may run on several
// threads, with results stored by cell index so the outcome does not depend
// on the thread count.
inline SweepResult noise_sweep(const PhantomSpec& spec, std::span<const double> noise_levels,
                               std::span<const double> lambda_grid, SweepMethod method,
                               const SolverConfig& cfg, int threads = 1,
                               double log_epsilon = 1.0 / 255.0) {
    if (noise_levels.empty() || lambda_grid.empty())
        throw std::invalid_argument("noise_sweep: noise and lambda grids must be nonempty");
    if (threads < 1) threads = 1;

    std::vector<Phantom> phantoms;
    phantoms.reserve(noise_levels.size());
    for (std::size_t si = 0; si < noise_levels.size(); ++si)
        phantoms.push_back(spec.build(noise_levels[si], spec.seed + 1000 * si));

    const std::size_t cells = noise_levels.size() * lambda_grid.size();
    SweepResult out;
    out.cells.resize(cells);
    std::vector<std::string> errors(cells);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t cell = next.fetch_add(1);
            if (cell >= cells) return;
            const std::size_t si = cell / lambda_grid.size();
            const std::size_t li = cell % lambda_grid.size();
            try {
                out.cells[cell] =
                    run_sweep_cell(phantoms[si], spec.K, lambda_grid[li], method, cfg, log_epsilon);
            } catch (const std::exception& e) {
                errors[cell] = std::string(e.what()) + " (s=" + format_number(noise_levels[si], 6) +
                               ", lambda=" + format_number(lambda_grid[li], 6) + ")";
            }
        }
    };

    if (threads == 1 || cells == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(threads), cells);
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const std::string& e : errors)
        if (!e.empty()) throw std::runtime_error("noise_sweep: " + e);

    for (std::size_t si = 0; si < noise_levels.size(); ++si) {
        const SweepRow* best = nullptr;
        for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
            const SweepRow& row = out.cells[si * lambda_grid.size() + li];
            if (!best || row.count < best->count) best = &row;
        }
        out.best_per_noise.push_back(*best);
    }
    return out;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
    os << "s,lambda,method,count,percent,energy_final,iters,seconds\n";
    for (const SweepRow& r : rows) {
        os << format_number(r.noise_std) << ',' << format_number(r.lambda) << ','
           << to_string(r.method) << ',' << r.count << ',' << format_number(r.percent) << ','
           << format_number(r.energy_final) << ',' << r.iters << ',' << format_number(r.seconds)
           << '\n';
    }
}

} // namespace palmseg
