#pragma once

// Command-line front end.
//
// Subcommands: segment (full model), baseline-m2, baseline-m3, phantom
// (generate a synthetic test image), sweep (noise-level / lambda grid
// search), check (invariant self-test).  Every subcommand accepts --config
// with a key=value file; explicit flags override file values, and the
// effective configuration of a run is written next to its outputs so runs
// can be reproduced exactly.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "palmseg/io.hpp"

namespace palmseg {

namespace cli_detail {

inline std::vector<double> parse_double_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw CLI::ValidationError(std::string(what) + ": cannot parse '" + tok + "'");
        }
    }
    if (out.empty()) throw CLI::ValidationError(std::string(what) + ": empty list");
    return out;
}

inline GridShape parse_shape(const std::string& s) {
    std::vector<int> dims;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) {
        try {
            dims.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--shape: cannot parse '" + tok + "'");
        }
    }
    try {
        return GridShape(dims);
    } catch (const std::exception& e) {
        throw CLI::ValidationError(std::string("--shape: ") + e.what());
    }
}

// "k=value" with a 1-based center index and a linear-domain value.
inline std::pair<int, double> parse_freeze(const std::string& s) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
        throw CLI::ValidationError("--freeze-center expects k=value, got '" + s + "'");
    try {
        const int k = std::stoi(s.substr(0, eq));
        const double v = std::stod(s.substr(eq + 1));
        if (k < 1) throw std::invalid_argument("index");
        if (!(v > 0.0)) throw std::invalid_argument("value");
        return {k, v};
    } catch (const CLI::ValidationError&) {
        throw;
    } catch (const std::exception&) {
        throw CLI::ValidationError("--freeze-center expects k=value with k>=1, value>0, got '" + s + "'");
    }
}

// Reads a key=value config file into --key=value tokens.  Values may be
// quoted; a key with multiple whitespace-separated items (vector options)
// yields one token per item, and empty values are treated as unset.
inline std::vector<std::string> config_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    auto trim = [](std::string s) {
        const std::size_t l = s.find_first_not_of(" \t\r");
        if (l == std::string::npos) return std::string();
        const std::size_t r = s.find_last_not_of(" \t\r");
        return s.substr(l, r - l + 1);
    };
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string rest = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        // split into items, honoring single or double quotes
        std::vector<std::string> items;
        std::string cur;
        char quote = 0;
        bool in_item = false;
        for (char ch : rest) {
            if (quote) {
                if (ch == quote) quote = 0;
                else cur.push_back(ch);
            } else if (ch == '"' || ch == '\'') {
                quote = ch;
                in_item = true;
            } else if (ch == ' ' || ch == '\t') {
                if (in_item) items.push_back(cur);
                cur.clear();
                in_item = false;
            } else {
                cur.push_back(ch);
                in_item = true;
            }
        }
        if (in_item) items.push_back(cur);
        for (const std::string& item : items)
            if (!item.empty()) tokens.push_back("--" + key + "=" + item);
    }
    return tokens;
}

// Splices config-file tokens in right after the subcommand name, so that
// explicit command-line flags (parsed with a take-last policy) override the
// file values.
inline std::vector<std::string> expand_config_args(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

    std::size_t subcmd = args.size();
    for (std::size_t i = 0; i < args.size(); ++i)
        if (!args[i].empty() && args[i][0] != '-') {
            subcmd = i;
            break;
        }

    std::string config_path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        } else {
            ++i;
        }
    }
    if (!config_path.empty() && subcmd < args.size()) {
        const std::vector<std::string> tokens = config_tokens(config_path);
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(subcmd) + 1, tokens.begin(),
                    tokens.end());
    }
    return args;
}

struct SolverFlags {
    int classes = 3;
    std::string lambda = "0.25";
    double gamma = 100.0;
    double sigma = 30.0;
    int outer = 2000;
    int inner = 50;
    double tau1 = 1e-6;
    std::string tau2_mode = "n";
    int log_every = 10;
    double energy_tol = 0.0;
    double epsilon = 1.0 / 255.0;
    int threads = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> freeze;
};

inline void add_solver_flags(CLI::App& app, SolverFlags& fl, bool multi_lambda) {
    app.add_option("--classes", fl.classes, "number of classes K")->capture_default_str();
    app.add_option("--lambda", fl.lambda,
                   multi_lambda ? "TV weight(s): one value or K comma-separated values"
                                : "TV weight (single value)")
        ->capture_default_str();
    app.add_option("--outer", fl.outer, "outer iterations")->capture_default_str();
    app.add_option("--inner", fl.inner, "inner primal-dual iterations per outer step")
        ->capture_default_str();
    app.add_option("--tau1", fl.tau1, "proximal weight of the labeling step")->capture_default_str();
    app.add_option("--tau2-mode", fl.tau2_mode, "center step rule: n (fast) or 2n (Lipschitz bound)")
        ->check(CLI::IsMember({"n", "2n"}))
        ->capture_default_str();
    app.add_option("--log-every", fl.log_every, "trace logging stride")->capture_default_str();
    app.add_option("--energy-tol", fl.energy_tol,
                   "optional relative energy-change stopping tolerance (0 = run all iterations)")
        ->capture_default_str();
    app.add_option("--epsilon", fl.epsilon, "offset added before taking the logarithm")
        ->capture_default_str();
    app.add_option("--threads", fl.threads, "worker thread cap (sweep cells; 1 = serial)")
        ->capture_default_str();
    app.add_option("--seed", fl.seed, "random seed for synthetic data")->capture_default_str();
}

inline SolverConfig build_config(const SolverFlags& fl, bool multi_lambda) {
    if (fl.classes < 2) throw CLI::ValidationError("--classes must be >= 2");
    SolverConfig cfg;
    std::vector<double> lambdas = parse_double_list(fl.lambda, "--lambda");
    if (multi_lambda) {
        if (lambdas.size() == 1) lambdas.assign(static_cast<std::size_t>(fl.classes), lambdas[0]);
        if (lambdas.size() != static_cast<std::size_t>(fl.classes))
            throw CLI::ValidationError("--lambda must give 1 or K values");
    } else if (lambdas.size() != 1) {
        throw CLI::ValidationError("--lambda must be a single value here");
    } else {
        lambdas.assign(static_cast<std::size_t>(fl.classes), lambdas[0]);
    }
    cfg.params.lambdas = std::move(lambdas);
    cfg.params.gamma = fl.gamma;
    cfg.outer_iters = fl.outer;
    cfg.inner.inner_iters = fl.inner;
    cfg.tau1 = fl.tau1;
    cfg.tau2_mode = fl.tau2_mode == "2n" ? Tau2Mode::lipschitz : Tau2Mode::paper_numeric;
    cfg.init_sigma = fl.sigma;
    cfg.log_every = fl.log_every;
    cfg.energy_tol = fl.energy_tol;
    return cfg;
}

using ConfigKv = std::vector<std::pair<std::string, std::string>>;

// Effective-configuration emission at full precision, so feeding the file
// back through --config reproduces the run bit for bit.
inline void write_effective_config(const std::string& outdir, const ConfigKv& kv) {
    std::filesystem::create_directories(outdir);
    std::ofstream out(std::filesystem::path(outdir) / "run_config.ini");
    for (const auto& [key, value] : kv)
        if (!value.empty()) out << key << "=\"" << value << "\"\n";
}

inline ConfigKv solver_kv(const SolverFlags& fl) {
    return {{"classes", std::to_string(fl.classes)},
            {"lambda", fl.lambda},
            {"outer", std::to_string(fl.outer)},
            {"inner", std::to_string(fl.inner)},
            {"tau1", format_number(fl.tau1)},
            {"tau2-mode", fl.tau2_mode},
            {"log-every", std::to_string(fl.log_every)},
            {"energy-tol", format_number(fl.energy_tol)},
            {"epsilon", format_number(fl.epsilon)},
            {"threads", std::to_string(fl.threads)},
            {"seed", std::to_string(fl.seed)}};
}

inline void emit_run_summary(const SolveResult& r, const std::string& outdir) {
    const TraceRow& last = r.trace.rows.back();
    std::cout << "iterations " << r.trace.iters_run << ", final energy "
              << format_number(last.energy, 10) << " (data " << format_number(last.data, 6)
              << ", tv " << format_number(last.tv, 6) << ", smooth "
              << format_number(last.smooth, 6) << ")\n";
    std::cout << "results written to " << outdir << "\n";
}

inline IllumSpec illum_from_flags(const std::string& kind, double a, double b) {
    if (kind == "ramp") return IllumSpec::ramp(a, b);
    if (kind == "bump") return IllumSpec::gaussian_bump(a, b);
    if (kind == "sines") return IllumSpec::product_of_sines(a);
    throw CLI::ValidationError("--illum must be ramp, bump or sines");
}

inline PhantomGeometry geometry_from_flags(const std::string& kind) {
    if (kind == "bars") return PhantomGeometry::bars;
    if (kind == "band-disks") return PhantomGeometry::band_disks;
    throw CLI::ValidationError("--geometry must be bars or band-disks");
}

// ---------------------------------------------------------------------------
// `check`: quick invariant self-test, independent of the unit-test suite.

inline bool check_adjointness(std::ostream& os) {
    std::mt19937_64 eng(17);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (const GridShape& shape : {GridShape{7, 5}, GridShape{4, 9}, GridShape{3, 4, 5}}) {
        const std::size_t n = shape.pixels();
        const std::size_t nd = n * static_cast<std::size_t>(shape.ndim());
        for (int rep = 0; rep < 20; ++rep) {
            GridImage x(shape);
            GridVectorField y(shape);
            for (double& v : x.values) v = uni(eng);
            for (double& v : y.values) v = uni(eng);
            const GridVectorField gx = gradient(x);
            const GridImage dy = divergence(y);
            const double lhs = dot(gx.values, y.values);
            const double rhs = dot(x.values, dy.values);
            const double bound = 1e-10 * norm2(x.values) * norm2(std::span<const double>(y.values.data(), nd));
            if (std::fabs(lhs - rhs) > bound) {
                os << "FAIL adjointness on " << shape.to_string() << "\n";
                return false;
            }
        }
    }
    os << "ok adjointness <grad x, y> = <x, div* y>\n";
    return true;
}

inline bool check_laplacian_spectrum(std::ostream& os) {
    const int n1 = 9;
    GridShape shape{n1, 1};
    for (int j = 0; j < n1; ++j) {
        GridImage v(shape);
        for (int t = 0; t < n1; ++t)
            v.values[static_cast<std::size_t>(t)] =
                std::cos(3.14159265358979323846 * j * (2.0 * t + 1.0) / (2.0 * n1));
        const double mu = 4.0 * std::pow(std::sin(3.14159265358979323846 * j / (2.0 * n1)), 2);
        const GridImage lv = laplacian(v);
        for (int t = 0; t < n1; ++t)
            if (std::fabs(lv.values[static_cast<std::size_t>(t)] - mu * v.values[static_cast<std::size_t>(t)]) > 1e-8) {
                os << "FAIL laplacian eigenpair j=" << j << "\n";
                return false;
            }
    }
    os << "ok 1D laplacian eigenpairs 4 sin^2(pi j / 2n)\n";
    return true;
}

inline bool check_spectral_bound(std::ostream& os) {
    std::mt19937_64 eng(23);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (const GridShape& shape : {GridShape{16, 16}, GridShape{6, 5, 4}}) {
        GridImage x(shape);
        for (double& v : x.values) v = uni(eng);
        double est = 0.0;
        for (int it = 0; it < 300; ++it) {
            GridImage y = laplacian(x);
            const double ny = norm2(y.values);
            if (ny == 0.0) break;
            for (double& v : y.values) v /= ny;
            est = dot(y.values, laplacian(y).values);
            x = std::move(y);
        }
        if (!(est < laplacian_norm_bound(shape))) {
            os << "FAIL spectral bound on " << shape.to_string() << "\n";
            return false;
        }
    }
    os << "ok power iteration stays below 4d\n";
    return true;
}

inline bool check_simplex_projection(std::ostream& os) {
    std::mt19937_64 eng(31);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int rep = 0; rep < 100; ++rep) {
        const int K = 2 + static_cast<int>(eng() % 5);
        std::vector<double> v(static_cast<std::size_t>(K));
        for (double& x : v) x = uni(eng);
        std::vector<double> p = project_simplex(v);
        double sum = 0.0;
        for (double x : p) {
            if (x < 0.0) { os << "FAIL simplex projection: negative entry\n"; return false; }
            sum += x;
        }
        if (std::fabs(sum - 1.0) > 1e-12) { os << "FAIL simplex projection: sum\n"; return false; }
        std::vector<double> pp = project_simplex(p);
        for (std::size_t i = 0; i < p.size(); ++i)
            if (std::fabs(pp[i] - p[i]) > 1e-12) { os << "FAIL simplex projection: idempotence\n"; return false; }
    }
    os << "ok simplex projection feasible and idempotent\n";
    return true;
}

inline bool check_gradients(std::ostream& os) {
    std::mt19937_64 eng(41);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    GridShape shape{6, 5};
    const int K = 3;
    const double gamma = 2.5;
    const std::size_t n = shape.pixels();

    GridImage f(shape);
    for (double& v : f.values) v = uni(eng);
    LabelAssignment u(shape, K);
    std::vector<double> row(K);
    for (std::size_t j = 0; j < n; ++j) {
        for (int k = 0; k < K; ++k) row[static_cast<std::size_t>(k)] = uni(eng);
        project_simplex(std::span<double>(row));
        for (int k = 0; k < K; ++k) u.probs[static_cast<std::size_t>(k) * n + j] = row[static_cast<std::size_t>(k)];
    }
    Codebook c({0.2, 0.5, 0.9});
    Illumination l = project_zero_mean([&] {
        GridImage a(shape);
        for (double& v : a.values) v = 0.3 * uni(eng);
        return a;
    }());

    const double h = 1e-5;
    // c-gradient
    std::vector<double> gc = grad_c_H(u, c, l, f);
    for (int k = 0; k < K; ++k) {
        Codebook cp = c, cm = c;
        cp.centers[static_cast<std::size_t>(k)] += h;
        cm.centers[static_cast<std::size_t>(k)] -= h;
        const double fd =
            (smooth_part(u, cp, l, f, gamma) - smooth_part(u, cm, l, f, gamma)) / (2.0 * h);
        if (std::fabs(fd - gc[static_cast<std::size_t>(k)]) > 1e-6 * std::max(1.0, std::fabs(fd))) {
            os << "FAIL finite-difference check of the c-gradient\n";
            return false;
        }
    }
    // l-gradient (spot check a few coordinates)
    GridImage gl = grad_l_H(u, c, l, f, gamma);
    for (std::size_t j = 0; j < n; j += 7) {
        Illumination lp = l, lm = l;
        lp.values[j] += h;
        lm.values[j] -= h;
        const double fd =
            (smooth_part(u, c, lp, f, gamma) - smooth_part(u, c, lm, f, gamma)) / (2.0 * h);
        if (std::fabs(fd - gl.values[j]) > 1e-6 * std::max(1.0, std::fabs(fd))) {
            os << "FAIL finite-difference check of the l-gradient\n";
            return false;
        }
    }
    os << "ok partial gradients match finite differences\n";
    return true;
}

inline bool check_small_solve(std::ostream& os) {
    GridShape shape{12, 10};
    Phantom ph = make_phantom(shape, 2, {0.25, 0.8}, IllumSpec::ramp(0.8, 1.2), 0.0, 5);
    SolverConfig cfg;
    cfg.params.lambdas = {0.1, 0.1};
    cfg.params.gamma = 10.0;
    cfg.outer_iters = 25;
    cfg.inner.inner_iters = 10;
    cfg.init_sigma = 4.0;
    const SolveResult r = solve(to_log(ph.F), 2, cfg);
    if (r.trace.max_simplex_violation > 1e-9) { os << "FAIL solve: simplex feasibility\n"; return false; }
    if (r.trace.max_abs_mean_l > 1e-8) { os << "FAIL solve: zero-mean gauge\n"; return false; }
    if (r.trace.descent_violations > 0) { os << "FAIL solve: energy descent\n"; return false; }
    os << "ok small solve keeps feasibility, gauge and descent\n";
    return true;
}

inline int run_check(std::ostream& os) {
    bool ok = true;
    ok &= check_adjointness(os);
    ok &= check_laplacian_spectrum(os);
    ok &= check_spectral_bound(os);
    ok &= check_simplex_projection(os);
    ok &= check_gradients(os);
    ok &= check_small_solve(os);
    os << (ok ? "all checks passed\n" : "CHECK FAILURES\n");
    return ok ? 0 : 2;
}

} // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
    using namespace cli_detail;

    CLI::App app{"TV multi-class segmentation with multiplicative illumination estimation"};
    app.require_subcommand(1);

    // --- segment ---------------------------------------------------------
    auto* seg = app.add_subcommand("segment", "segment an image with the full model");
    SolverFlags seg_fl;
    std::string seg_input, seg_out = "out", seg_truth;
    seg->add_option("--input", seg_input, "input image (PGM, .raw volume, or slice directory)")
        ->required();
    seg->add_option("--out", seg_out, "output directory")->capture_default_str();
    seg->add_option("--gamma", seg_fl.gamma, "illumination smoothness weight")->capture_default_str();
    seg->add_option("--sigma", seg_fl.sigma, "Gaussian width of the illumination initialization")
        ->capture_default_str();
    seg->add_option("--freeze-center", seg_fl.freeze,
                    "freeze center k at linear value v, as k=v (repeatable, 1-based)");
    seg->add_option("--truth", seg_truth, "ground-truth label map for a misclassification report");
    add_solver_flags(*seg, seg_fl, true);
    std::string seg_config;
    seg->add_option("--config", seg_config, "key=value config file; explicit flags override")
        ->configurable(false);

    // --- baseline-m2 -----------------------------------------------------
    auto* m2 = app.add_subcommand("baseline-m2", "pure TV segmentation without illumination");
    SolverFlags m2_fl;
    m2_fl.gamma = 1.0;
    std::string m2_input, m2_out = "out", m2_truth;
    m2->add_option("--input", m2_input, "input image")->required();
    m2->add_option("--out", m2_out, "output directory")->capture_default_str();
    m2->add_option("--truth", m2_truth, "ground-truth label map");
    add_solver_flags(*m2, m2_fl, false);
    std::string m2_config;
    m2->add_option("--config", m2_config, "key=value config file; explicit flags override")
        ->configurable(false);

    // --- baseline-m3 -----------------------------------------------------
    auto* m3 = app.add_subcommand("baseline-m3",
                                  "two-step baseline: divide by a smoothed illumination, then M2");
    SolverFlags m3_fl;
    m3_fl.gamma = 1.0;
    std::string m3_input, m3_out = "out", m3_truth;
    m3->add_option("--input", m3_input, "input image (linear domain)")->required();
    m3->add_option("--out", m3_out, "output directory")->capture_default_str();
    m3->add_option("--sigma", m3_fl.sigma, "Gaussian width of the illumination estimate")
        ->capture_default_str();
    m3->add_option("--truth", m3_truth, "ground-truth label map");
    add_solver_flags(*m3, m3_fl, false);
    std::string m3_config;
    m3->add_option("--config", m3_config, "key=value config file; explicit flags override")
        ->configurable(false);

    // --- phantom ---------------------------------------------------------
    auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom");
    std::string ph_shape = "128x128", ph_values = "0.55,0.2,0.95", ph_illum = "ramp";
    std::string ph_scale, ph_out = "phantom_out";
    int ph_classes = 3;
    double ph_noise = 0.0, ph_illum_a = 0.5, ph_illum_b = 1.5;
    std::uint64_t ph_seed = 0;
    ph->add_option("--shape", ph_shape, "grid extents, e.g. 128x128 or 64x64x32")->capture_default_str();
    ph->add_option("--classes", ph_classes, "number of classes")->capture_default_str();
    ph->add_option("--values", ph_values, "comma-separated linear class values")->capture_default_str();
    ph->add_option("--illum", ph_illum, "illumination kind: ramp, bump or sines")
        ->check(CLI::IsMember({"ramp", "bump", "sines"}))
        ->capture_default_str();
    ph->add_option("--illum-a", ph_illum_a, "ramp low end / bump or sine amplitude")->capture_default_str();
    ph->add_option("--illum-b", ph_illum_b, "ramp high end / bump relative width")->capture_default_str();
    std::string ph_geometry = "bars";
    ph->add_option("--geometry", ph_geometry, "class layout: bars or band-disks")
        ->check(CLI::IsMember({"bars", "band-disks"}))
        ->capture_default_str();
    ph->add_option("--region-scale", ph_scale, "comma-separated per-class feature scales");
    ph->add_option("--noise", ph_noise, "Gaussian noise standard deviation")->capture_default_str();
    ph->add_option("--seed", ph_seed, "noise seed")->capture_default_str();
    ph->add_option("--out", ph_out, "output directory")->capture_default_str();
    std::string ph_config;
    ph->add_option("--config", ph_config, "key=value config file; explicit flags override")
        ->configurable(false);

    // --- sweep -----------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "noise-level / lambda grid search on phantoms");
    SolverFlags sw_fl;
    std::string sw_shape = "128x128", sw_values = "0.55,0.2,0.95", sw_illum = "ramp";
    std::string sw_scale, sw_noise = "0", sw_lambdas = "0.05,0.1,0.2,0.4,0.7,1.0";
    std::string sw_method = "full", sw_out = "sweep.csv";
    double sw_illum_a = 0.5, sw_illum_b = 1.5, sw_gamma = 100.0, sw_sigma = 30.0;
    sw->add_option("--shape", sw_shape, "phantom extents")->capture_default_str();
    sw->add_option("--values", sw_values, "comma-separated linear class values")->capture_default_str();
    sw->add_option("--illum", sw_illum, "illumination kind: ramp, bump or sines")
        ->check(CLI::IsMember({"ramp", "bump", "sines"}))
        ->capture_default_str();
    sw->add_option("--illum-a", sw_illum_a, "ramp low end / amplitude")->capture_default_str();
    sw->add_option("--illum-b", sw_illum_b, "ramp high end / bump width")->capture_default_str();
    std::string sw_geometry = "bars";
    sw->add_option("--geometry", sw_geometry, "class layout: bars or band-disks")
        ->check(CLI::IsMember({"bars", "band-disks"}))
        ->capture_default_str();
    sw->add_option("--region-scale", sw_scale, "per-class feature scales");
    sw->add_option("--noise", sw_noise, "comma-separated noise levels")->capture_default_str();
    sw->add_option("--lambdas", sw_lambdas, "comma-separated lambda grid")->capture_default_str();
    sw->add_option("--method", sw_method, "full, m2, m3 or full-frozen-c3")
        ->check(CLI::IsMember({"full", "m2", "m3", "full-frozen-c3"}))
        ->capture_default_str();
    sw->add_option("--gamma", sw_gamma, "illumination smoothness weight")->capture_default_str();
    sw->add_option("--sigma", sw_sigma, "initialization smoothing width")->capture_default_str();
    sw->add_option("--out", sw_out, "CSV output path")->capture_default_str();
    add_solver_flags(*sw, sw_fl, false);
    std::string sw_config;
    sw->add_option("--config", sw_config, "key=value config file; explicit flags override")
        ->configurable(false);

    // --- check -----------------------------------------------------------
    auto* ck = app.add_subcommand("check", "run the invariant self-test suite");

    for (CLI::App* sub : {seg, m2, m3, ph, sw}) {
        for (CLI::Option* opt : sub->get_options())
            if (opt->get_expected_max() == 1)
                opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    try {
        std::vector<std::string> args = expand_config_args(argc, argv);
        std::reverse(args.begin(), args.end()); // CLI11 consumes from the back
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (seg->parsed()) {
            SolverConfig cfg = build_config(seg_fl, true);
            const GridImage F = load_image(seg_input);
            const GridImage f = to_log(F, seg_fl.epsilon);

            std::vector<std::pair<int, double>> freeze;
            for (const std::string& s : seg_fl.freeze) freeze.push_back(parse_freeze(s));
            cfg.frozen_centers.assign(static_cast<std::size_t>(seg_fl.classes), 0);
            for (auto [k, v] : freeze) {
                if (k > seg_fl.classes) throw CLI::ValidationError("--freeze-center index exceeds K");
                cfg.frozen_centers[static_cast<std::size_t>(k - 1)] = 1;
            }

            InitState st = initialize(f, seg_fl.classes, cfg);
            for (auto [k, v] : freeze) st.c.centers[static_cast<std::size_t>(k - 1)] = std::log(v);

            const SolveResult result = solve(f, seg_fl.classes, cfg, &st);

            std::optional<std::vector<int>> truth;
            if (!seg_truth.empty()) {
                auto [labels, shape] = load_label_map(seg_truth);
                if (shape != f.shape) throw std::runtime_error("--truth shape does not match input");
                truth = std::move(labels);
            }
            emit_results(result, seg_out, truth ? &*truth : nullptr);
            ConfigKv kv = solver_kv(seg_fl);
            kv.push_back({"input", seg_input});
            kv.push_back({"out", seg_out});
            kv.push_back({"gamma", format_number(seg_fl.gamma)});
            kv.push_back({"sigma", format_number(seg_fl.sigma)});
            for (const std::string& s : seg_fl.freeze) kv.push_back({"freeze-center", s});
            kv.push_back({"truth", seg_truth});
            write_effective_config(seg_out, kv);
            emit_run_summary(result, seg_out);
        } else if (m2->parsed()) {
            SolverConfig cfg = build_config(m2_fl, false);
            const GridImage F = load_image(m2_input);
            const GridImage f = to_log(F, m2_fl.epsilon);
            const SolveResult result =
                solve_m2(f, m2_fl.classes, cfg.params.lambdas[0], cfg);
            std::optional<std::vector<int>> truth;
            if (!m2_truth.empty()) {
                auto [labels, shape] = load_label_map(m2_truth);
                if (shape != f.shape) throw std::runtime_error("--truth shape does not match input");
                truth = std::move(labels);
            }
            emit_results(result, m2_out, truth ? &*truth : nullptr);
            ConfigKv kv = solver_kv(m2_fl);
            kv.push_back({"input", m2_input});
            kv.push_back({"out", m2_out});
            kv.push_back({"truth", m2_truth});
            write_effective_config(m2_out, kv);
            emit_run_summary(result, m2_out);
        } else if (m3->parsed()) {
            SolverConfig cfg = build_config(m3_fl, false);
            GridImage F = load_image(m3_input);
            for (double& v : F.values) v += m3_fl.epsilon; // keep zero pixels positive
            const SolveResult result =
                solve_m3(F, m3_fl.classes, cfg.params.lambdas[0], m3_fl.sigma, cfg);
            std::optional<std::vector<int>> truth;
            if (!m3_truth.empty()) {
                auto [labels, shape] = load_label_map(m3_truth);
                if (shape != F.shape) throw std::runtime_error("--truth shape does not match input");
                truth = std::move(labels);
            }
            emit_results(result, m3_out, truth ? &*truth : nullptr);
            ConfigKv kv = solver_kv(m3_fl);
            kv.push_back({"input", m3_input});
            kv.push_back({"out", m3_out});
            kv.push_back({"sigma", format_number(m3_fl.sigma)});
            kv.push_back({"truth", m3_truth});
            write_effective_config(m3_out, kv);
            emit_run_summary(result, m3_out);
        } else if (ph->parsed()) {
            const GridShape shape = parse_shape(ph_shape);
            const std::vector<double> values = parse_double_list(ph_values, "--values");
            if (static_cast<int>(values.size()) != ph_classes)
                throw CLI::ValidationError("--values must give K entries");
            std::vector<double> scale;
            if (!ph_scale.empty()) scale = parse_double_list(ph_scale, "--region-scale");
            const Phantom phantom = make_phantom(
                shape, ph_classes, values, illum_from_flags(ph_illum, ph_illum_a, ph_illum_b),
                ph_noise, ph_seed, geometry_from_flags(ph_geometry),
                scale.empty() ? nullptr : &scale);

            namespace fs = std::filesystem;
            fs::create_directories(ph_out);
            save_raw_volume(phantom.F, (fs::path(ph_out) / "image.raw").string(), "f32");
            save_label_map(phantom.true_labels, shape,
                           (fs::path(ph_out) / (shape.ndim() == 2 ? "truth.pgm" : "truth.raw")).string());
            save_raw_volume(phantom.true_L, (fs::path(ph_out) / "true_illumination.raw").string(), "f32");
            {
                std::ofstream meta(fs::path(ph_out) / "phantom.txt");
                meta << "shape " << shape.to_string() << "\nclasses " << ph_classes << "\nvalues";
                for (double v : phantom.class_values) meta << " " << format_number(v);
                meta << "\nnoise " << format_number(ph_noise) << "\nseed " << ph_seed << "\n";
            }
            write_effective_config(ph_out,
                                   {{"shape", ph_shape},
                                    {"classes", std::to_string(ph_classes)},
                                    {"values", ph_values},
                                    {"illum", ph_illum},
                                    {"illum-a", format_number(ph_illum_a)},
                                    {"illum-b", format_number(ph_illum_b)},
                                    {"geometry", ph_geometry},
                                    {"region-scale", ph_scale},
                                    {"noise", format_number(ph_noise)},
                                    {"seed", std::to_string(ph_seed)},
                                    {"out", ph_out}});
            std::cout << "phantom written to " << ph_out << "\n";
        } else if (sw->parsed()) {
            PhantomSpec spec;
            spec.shape = parse_shape(sw_shape);
            spec.class_values = parse_double_list(sw_values, "--values");
            spec.K = static_cast<int>(spec.class_values.size());
            spec.illum = illum_from_flags(sw_illum, sw_illum_a, sw_illum_b);
            spec.geometry = geometry_from_flags(sw_geometry);
            if (!sw_scale.empty()) spec.region_scale = parse_double_list(sw_scale, "--region-scale");
            spec.seed = sw_fl.seed;

            sw_fl.classes = spec.K;
            sw_fl.gamma = sw_gamma;
            sw_fl.sigma = sw_sigma;
            SolverConfig cfg = build_config(sw_fl, false);

            SweepMethod method = SweepMethod::full;
            if (sw_method == "m2") method = SweepMethod::m2;
            else if (sw_method == "m3") method = SweepMethod::m3;
            else if (sw_method == "full-frozen-c3") method = SweepMethod::full_frozen_c3;

            const std::vector<double> noises = parse_double_list(sw_noise, "--noise");
            const std::vector<double> lambdas = parse_double_list(sw_lambdas, "--lambdas");
            const SweepResult result =
                noise_sweep(spec, noises, lambdas, method, cfg, sw_fl.threads, sw_fl.epsilon);

            std::ofstream csv(sw_out);
            if (!csv) throw std::runtime_error("cannot write " + sw_out);
            write_sweep_csv(csv, result.cells);
            for (const SweepRow& best : result.best_per_noise)
                std::cout << "s=" << format_number(best.noise_std, 6)
                          << " best lambda=" << format_number(best.lambda, 6) << " wrong=" << best.count
                          << " (" << format_number(best.percent, 4) << "%)\n";
            std::cout << "sweep table written to " << sw_out << "\n";
        } else if (ck->parsed()) {
            return run_check(std::cout);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace palmseg
