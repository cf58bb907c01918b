#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "palmseg/baselines.hpp"
#include "palmseg/phantom.hpp"

using namespace palmseg;

namespace {

SolverConfig quick_config(int K, double gamma) {
    SolverConfig cfg;
    cfg.params.lambdas.assign(static_cast<std::size_t>(K), 0.1);
    cfg.params.gamma = gamma;
    cfg.outer_iters = 120;
    cfg.inner.inner_iters = 20;
    cfg.init_sigma = 6.0;
    return cfg;
}

} // namespace

TEST_CASE("M2 segments an illumination-free piecewise-constant image exactly") {
    GridShape shape{20, 16};
    const std::size_t n = shape.pixels();
    std::vector<int> truth(n);
    GridImage f(shape);
    for (std::size_t j = 0; j < n; ++j) {
        const int x = static_cast<int>(j % 20);
        truth[j] = x < 10 ? 0 : 1;
        f.values[j] = truth[j] == 0 ? std::log(0.3) : std::log(0.8);
    }
    const SolveResult res = solve_m2(f, 2, 0.08, quick_config(2, 5.0));
    CHECK(misclassified(res.labels, truth).count == 0);
    // l was never updated
    for (double v : res.l.values) CHECK(v == 0.0);
    CHECK(res.trace.max_simplex_violation <= 1e-9);
    CHECK(res.trace.descent_violations <= res.trace.iters_run / 100);
}

TEST_CASE("M2 equals the full driver with illumination updates disabled") {
    GridShape shape{12, 12};
    std::mt19937_64 eng(9);
    const GridImage f = oracle::random_image(shape, eng, -1.5, -0.2);

    SolverConfig base = quick_config(3, 7.0);
    base.outer_iters = 30;
    const SolveResult via_m2 = solve_m2(f, 3, 0.12, base);

    SolverConfig manual = base;
    manual.params.lambdas.assign(3, 0.12);
    manual.update_illumination = false;
    InitState st = initialize(f, 3, manual);
    const SolveResult direct = solve(f, 3, manual, &st);

    REQUIRE(via_m2.trace.rows.size() == direct.trace.rows.size());
    for (std::size_t i = 0; i < direct.trace.rows.size(); ++i) {
        CHECK(via_m2.trace.rows[i].energy == direct.trace.rows[i].energy);
        CHECK(via_m2.trace.rows[i].data == direct.trace.rows[i].data);
        CHECK(via_m2.trace.rows[i].tv == direct.trace.rows[i].tv);
        CHECK(via_m2.trace.rows[i].smooth == direct.trace.rows[i].smooth);
    }
    CHECK(via_m2.labels == direct.labels);
}

TEST_CASE("M3 illumination estimate has mean one and inverts a constant image") {
    std::mt19937_64 eng(11);
    const GridImage F = oracle::random_image(GridShape{15, 11}, eng, 0.2, 1.4);
    const GridImage est = m3_illumination_estimate(F, 4.0);
    CHECK(std::fabs(mean_value(est) - 1.0) <= 1e-10);

    // a constant image smooths to itself, so the mean-one estimate is
    // exactly one everywhere and the correction is the identity
    const GridImage constant(GridShape{9, 9}, 0.7);
    const GridImage est_const = m3_illumination_estimate(constant, 3.0);
    for (double v : est_const.values) CHECK(std::fabs(v - 1.0) <= 1e-12);
    const GridImage corrected = m3_correct(constant, 3.0);
    for (double v : corrected.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
    // after the log transform the corrected image is spatially constant
    for (double v : corrected.values)
        CHECK(std::fabs(std::log(v) - std::log(0.7)) <= 1e-12);
}

TEST_CASE("M3 rejects non-positive input") {
    GridImage F(GridShape{3, 3}, 0.5);
    F.values[4] = 0.0;
    CHECK_THROWS_AS(solve_m3(F, 2, 0.1, 2.0, quick_config(2, 5.0)), std::invalid_argument);
}

TEST_CASE("M3 segments a mildly illuminated two-class phantom exactly") {
    GridShape shape{32, 32};
    const Phantom ph = make_phantom(shape, 2, {0.25, 0.85}, IllumSpec::gaussian_bump(0.35, 0.5),
                                    0.0, 3);
    SolverConfig cfg = quick_config(2, 5.0);
    cfg.init_sigma = 10.0;
    const SolveResult res = solve_m3(ph.F, 2, 0.05, 10.0, cfg);
    CHECK(misclassified(res.labels, ph.true_labels).count == 0);
}

TEST_CASE("strong illumination defeats M2 but not the full model") {
    GridShape shape{32, 32};
    const Phantom ph = make_phantom(shape, 2, {0.35, 0.65}, IllumSpec::ramp(0.5, 1.5), 0.0, 5);
    const GridImage f = to_log(ph.F);

    SolverConfig cfg = quick_config(2, 10.0);
    cfg.outer_iters = 200;
    cfg.init_sigma = 10.0;

    const SolveResult full = solve(f, 2, cfg);
    const SolveResult m2 = solve_m2(f, 2, 0.1, cfg);

    const long wrong_full = misclassified(full.labels, ph.true_labels).count;
    const long wrong_m2 = misclassified(m2.labels, ph.true_labels).count;
    CHECK(wrong_full == 0);
    CHECK(wrong_m2 > wrong_full);
}
