#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "palmseg/prox.hpp"

using namespace palmseg;

TEST_CASE("project_simplex: fixed points, vertex capture, feasibility") {
    std::vector<double> onto = project_simplex(std::vector<double>{0.2, 0.3, 0.5});
    CHECK(onto[0] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(onto[1] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(onto[2] == doctest::Approx(0.5).epsilon(1e-14));

    std::vector<double> vertex = project_simplex(std::vector<double>{2.0, 0.0});
    CHECK(vertex[0] == doctest::Approx(1.0));
    CHECK(vertex[1] == doctest::Approx(0.0));

    std::vector<double> single = project_simplex(std::vector<double>{-7.0});
    CHECK(single[0] == 1.0);
}

TEST_CASE("project_simplex agrees with the support-enumeration QP oracle") {
    std::mt19937_64 eng(101);
    std::uniform_real_distribution<double> uni(-3.0, 3.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> v(5);
        for (double& x : v) x = uni(eng);
        const std::vector<double> got = project_simplex(v);
        const std::vector<double> want = oracle::project_simplex_qp(v);
        double sum = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(std::fabs(got[i] - want[i]) <= 1e-8);
            CHECK(got[i] >= 0.0);
            sum += got[i];
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("prox_tv_simplex with zero TV weight converges to the pixelwise projection") {
    std::mt19937_64 eng(7);
    GridShape shape{4, 3};
    const int K = 3;
    LabelAssignment z(shape, K);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (double& v : z.probs) v = uni(eng);

    PdhgConfig cfg;
    cfg.inner_iters = 400;
    const double lambdas[] = {0.0, 0.0, 0.0};
    const TvProxResult res = prox_tv_simplex(z, lambdas, 1.0, cfg);

    const std::size_t n = shape.pixels();
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> row(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) row[static_cast<std::size_t>(k)] = z.at(j, k);
        const std::vector<double> want = oracle::project_simplex_qp(row);
        for (int k = 0; k < K; ++k)
            CHECK(std::fabs(res.u.at(j, k) - want[static_cast<std::size_t>(k)]) <= 1e-8);
    }
}

TEST_CASE("prox_tv_simplex keeps a feasible constant input fixed") {
    GridShape shape{5, 4};
    LabelAssignment z(shape, 2);
    for (std::size_t j = 0; j < shape.pixels(); ++j) {
        z.probs[j] = 0.3;
        z.probs[shape.pixels() + j] = 0.7;
    }
    PdhgConfig cfg;
    cfg.inner_iters = 75;
    const double lambdas[] = {0.5, 0.5};
    const TvProxResult res = prox_tv_simplex(z, lambdas, 2.0, cfg);
    for (std::size_t i = 0; i < z.probs.size(); ++i)
        CHECK(std::fabs((res.u.probs[i]) - (z.probs[i])) <= 1e-12);
}

TEST_CASE("prox_tv_simplex rejects bad arguments") {
    LabelAssignment z(GridShape{2, 2}, 2);
    const double lambdas[] = {0.1, 0.1};
    PdhgConfig cfg;
    CHECK_THROWS_AS(prox_tv_simplex(z, lambdas, 0.0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(prox_tv_simplex(z, lambdas, -1.0, cfg), std::invalid_argument);
    PdhgConfig bad;
    bad.sigma = 1.0;
    bad.tau = 1.0; // sigma*tau*4d = 8 > 1
    CHECK_THROWS_AS(prox_tv_simplex(z, lambdas, 1.0, bad), std::invalid_argument);
}

TEST_CASE("prox_tv_simplex objective matches the projected-subgradient oracle") {
    std::mt19937_64 eng(23);
    GridShape shape{3, 3};
    const int K = 2;
    LabelAssignment z(shape, K);
    std::uniform_real_distribution<double> uni(-0.5, 1.5);
    for (double& v : z.probs) v = uni(eng);
    const double step = 1.0;
    const std::vector<double> lambdas = {0.35, 0.35};

    PdhgConfig cfg;
    cfg.inner_iters = 5000;
    const TvProxResult res = prox_tv_simplex(z, lambdas, step, cfg);
    const double pdhg_obj = tv_prox_objective(res.u, z, lambdas, step);

    const double oracle_obj = oracle::tv_prox_subgradient_best(
        shape, K, z.probs, lambdas, step, 2000000);

    CHECK(std::fabs(pdhg_obj - oracle_obj) <= 1e-6);
}

TEST_CASE("dual stays in the lambda balls and the primal on the simplex at every stage") {
    std::mt19937_64 eng(29);
    GridShape shape{6, 5};
    const int K = 3;
    LabelAssignment z(shape, K);
    std::uniform_real_distribution<double> uni(-1.0, 2.0);
    for (double& v : z.probs) v = uni(eng);
    const std::vector<double> lambdas = {0.2, 0.6, 1.0};

    for (int iters : {1, 2, 5, 17, 50}) {
        PdhgConfig cfg;
        cfg.inner_iters = iters;
        const TvProxResult res = prox_tv_simplex(z, lambdas, 0.8, cfg);
        CHECK(max_dual_violation(res.dual, lambdas) <= 1e-12);
        CHECK(max_simplex_violation(res.u) <= 1e-12);
    }
}

TEST_CASE("the primal-dual gap decreases along the logged checkpoints") {
    std::mt19937_64 eng(31);
    GridShape shape{8, 8};
    const int K = 2;
    LabelAssignment z(shape, K);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : z.probs) v = uni(eng);
    const std::vector<double> lambdas = {0.15, 0.15};
    const double step = 1.0;

    double prev = std::numeric_limits<double>::infinity();
    DualField dual(shape, K);
    LabelAssignment u = z; // running iterate via repeated 10-iteration bursts
    // project the start onto the simplex like the solver init does
    {
        PdhgConfig warm;
        warm.inner_iters = 1;
        u = prox_tv_simplex(z, lambdas, step, warm).u;
    }
    for (int burst = 0; burst < 20; ++burst) {
        PdhgConfig cfg;
        cfg.inner_iters = 10;
        TvProxResult res = prox_tv_simplex(z, lambdas, step, cfg, &u, &dual);
        u = std::move(res.u);
        dual = std::move(res.dual);
        const double gap = tv_prox_gap(u, dual, z, lambdas, step);
        CHECK(gap >= -1e-10);
        CHECK(gap <= prev + 1e-10);
        prev = gap;
    }
}

TEST_CASE("warm-started duals reach a target gap in fewer iterations than cold start") {
    std::mt19937_64 eng(37);
    GridShape shape{8, 6};
    const int K = 2;
    LabelAssignment z(shape, K);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : z.probs) v = uni(eng);
    const std::vector<double> lambdas = {0.25, 0.25};
    const double step = 1.0;

    // solve once to get a useful dual, then perturb the data slightly
    PdhgConfig solve_cfg;
    solve_cfg.inner_iters = 500;
    TvProxResult first = prox_tv_simplex(z, lambdas, step, solve_cfg);

    LabelAssignment z2 = z;
    for (double& v : z2.probs) v += 0.01 * uni(eng);

    PdhgConfig probe;
    probe.inner_iters = 5000;
    probe.gap_tol = 1e-7;
    probe.gap_check_every = 1;

    const TvProxResult cold = prox_tv_simplex(z2, lambdas, step, probe);
    DualField warm_dual = first.dual;
    const TvProxResult warm = prox_tv_simplex(z2, lambdas, step, probe, nullptr, &warm_dual);
    CHECK(cold.final_gap <= 1e-7);
    CHECK(warm.final_gap <= 1e-7);
    CHECK(warm.iters_run < cold.iters_run);
}

TEST_CASE("step_c applies the masked gradient step") {
    Codebook c({1.0, 2.0});
    const double g[] = {2.0, -4.0};
    const Codebook out = step_c(c, g, 2.0);
    CHECK(out.centers[0] == doctest::Approx(0.0));
    CHECK(out.centers[1] == doctest::Approx(4.0));

    Codebook frozen({1.0, 2.0}, {0, 1});
    const Codebook out2 = step_c(frozen, g, 2.0);
    CHECK(out2.centers[0] == doctest::Approx(0.0));
    CHECK(out2.centers[1] == 2.0);

    const double zero[] = {0.0, 0.0};
    const Codebook out3 = step_c(c, zero, 5.0);
    CHECK(out3.centers[0] == 1.0);
    CHECK(out3.centers[1] == 2.0);
}

TEST_CASE("project_zero_mean is the closest zero-mean point") {
    GridShape shape{4, 3};
    Illumination zm(shape);
    zm.values = {1, -1, 2, -2, 3, -3, 0.5, -0.5, 0.25, -0.25, 4, -4};
    const Illumination same = project_zero_mean(zm);
    for (std::size_t j = 0; j < zm.size(); ++j)
        CHECK(std::fabs(same.values[j] - zm.values[j]) <= 1e-12);

    const Illumination zero = project_zero_mean(GridImage(shape, 3.0));
    for (double v : zero.values) CHECK(std::fabs((v) - (0.0)) <= 1e-15);

    std::mt19937_64 eng(43);
    const GridImage a = oracle::random_image(shape, eng);
    const Illumination p = project_zero_mean(a);
    double sum = 0.0;
    for (double v : p.values) sum += v;
    CHECK(std::fabs(sum) <= 1e-10 * static_cast<double>(shape.pixels()));

    std::vector<double> diff(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) diff[j] = a.values[j] - p.values[j];
    const double dist = norm2(diff);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        GridImage w(shape);
        for (double& v : w.values) v = uni(eng);
        Illumination wz = project_zero_mean(w); // arbitrary zero-mean competitor
        std::vector<double> dw(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) dw[j] = a.values[j] - wz.values[j];
        CHECK(dist <= norm2(dw) + 1e-12);
    }
}
