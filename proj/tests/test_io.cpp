#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "palmseg/io.hpp"

using namespace palmseg;
namespace fs = std::filesystem;

namespace {

struct ScratchDir {
    fs::path path;
    explicit ScratchDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~ScratchDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("8-bit PGM normalization maps 0 to 0.0 and 255 to 1.0") {
    ScratchDir dir("palmseg_io_pgm8");
    GridImage img(GridShape{2, 1}, {0.0, 1.0});
    save_pgm(img, dir.file("t.pgm"), 8);
    const GridImage back = load_pgm(dir.file("t.pgm"));
    CHECK(back.values[0] == 0.0);
    CHECK(back.values[1] == 1.0);
    CHECK(back.shape == img.shape);
}

TEST_CASE("PGM round trip stays within the 8-bit quantization error") {
    ScratchDir dir("palmseg_io_pgm_rt");
    std::mt19937_64 eng(3);
    const GridImage img = oracle::random_image(GridShape{23, 17}, eng, 0.0, 1.0);
    save_pgm(img, dir.file("t.pgm"), 8);
    const GridImage back = load_pgm(dir.file("t.pgm"));
    for (std::size_t j = 0; j < img.size(); ++j)
        CHECK(std::fabs(back.values[j] - img.values[j]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("PGM header parsing tolerates comments and rejects junk") {
    ScratchDir dir("palmseg_io_pgm_hdr");
    {
        std::ofstream out(dir.file("c.pgm"), std::ios::binary);
        out << "P5\n# a comment\n2 1\n# another\n255\n";
        out.put(static_cast<char>(7));
        out.put(static_cast<char>(255));
    }
    const GridImage img = load_pgm(dir.file("c.pgm"));
    CHECK(img.values[0] == doctest::Approx(7.0 / 255.0));
    CHECK(img.values[1] == 1.0);

    {
        std::ofstream out(dir.file("bad.pgm"), std::ios::binary);
        out << "P6\n2 1\n255\nxxxxxx";
    }
    CHECK_THROWS(load_pgm(dir.file("bad.pgm")));
    CHECK_THROWS(load_pgm(dir.file("missing.pgm")));
    {
        std::ofstream out(dir.file("short.pgm"), std::ios::binary);
        out << "P5\n4 4\n255\nab";
    }
    CHECK_THROWS(load_pgm(dir.file("short.pgm")));
}

TEST_CASE("raw f32 volumes round trip through the sidecar") {
    ScratchDir dir("palmseg_io_raw");
    std::mt19937_64 eng(5);
    const GridImage vol = oracle::random_image(GridShape{7, 5, 4}, eng, -2.0, 3.0);
    save_raw_volume(vol, dir.file("v.raw"), "f32");
    const GridImage back = load_raw_volume(dir.file("v.raw"));
    CHECK(back.shape == vol.shape);
    for (std::size_t j = 0; j < vol.size(); ++j)
        CHECK(back.values[j] == doctest::Approx(vol.values[j]).epsilon(1e-7));

    // f64 is bit-exact
    save_raw_volume(vol, dir.file("v64.raw"), "f64");
    const GridImage back64 = load_raw_volume(dir.file("v64.raw"));
    CHECK(back64.values == vol.values);
}

TEST_CASE("16-bit quantized volume round trip stays within 2^-17") {
    ScratchDir dir("palmseg_io_raw16");
    std::mt19937_64 eng(1);
    const GridImage vol = oracle::random_image(GridShape{16, 12, 8}, eng, 0.0, 1.0);
    save_raw_volume(vol, dir.file("q.raw"), "u16");
    const GridImage back = load_raw_volume(dir.file("q.raw"));
    double max_err = 0.0;
    for (std::size_t j = 0; j < vol.size(); ++j)
        max_err = std::max(max_err, std::fabs(back.values[j] - vol.values[j]));
    CHECK(max_err <= std::ldexp(1.0, -17));
}

TEST_CASE("volume loading validates the sidecar") {
    ScratchDir dir("palmseg_io_meta");
    const GridImage vol(GridShape{4, 3}, 0.5);
    save_raw_volume(vol, dir.file("v.raw"), "f32");

    CHECK_THROWS(load_raw_volume(dir.file("nosidecar.raw")));
    {
        std::ofstream meta(dir.file("v.raw") + ".meta");
        meta << "dims 4 3\ndtype f32\nendian big\n";
    }
    CHECK_THROWS(load_raw_volume(dir.file("v.raw")));
    {
        std::ofstream meta(dir.file("v.raw") + ".meta");
        meta << "dims 40 30\ndtype f32\nendian little\n";
    }
    CHECK_THROWS(load_raw_volume(dir.file("v.raw"))); // size mismatch
}

TEST_CASE("slice stacks assemble in filename order with consistent shapes") {
    ScratchDir dir("palmseg_io_stack");
    // intentionally created out of order; loading sorts by name
    save_pgm(GridImage(GridShape{3, 2}, 0.25), dir.file("b_slice.pgm"), 8);
    save_pgm(GridImage(GridShape{3, 2}, 0.75), dir.file("c_slice.pgm"), 8);
    save_pgm(GridImage(GridShape{3, 2}, 0.0), dir.file("a_slice.pgm"), 8);

    const GridImage vol = load_image(dir.path.string());
    CHECK(vol.shape == GridShape{3, 2, 3});
    CHECK(vol.values[0] == 0.0);
    CHECK(vol.values[6] == doctest::Approx(0.25).epsilon(1e-2));
    CHECK(vol.values[12] == doctest::Approx(0.75).epsilon(1e-2));

    save_pgm(GridImage(GridShape{4, 2}, 0.5), dir.file("d_slice.pgm"), 8);
    CHECK_THROWS(load_slice_stack(dir.path.string()));
}

TEST_CASE("label maps round trip without normalization in 2D and 3D") {
    ScratchDir dir("palmseg_io_labels");
    std::vector<int> labels2 = {0, 1, 2, 1, 0, 2};
    save_label_map(labels2, GridShape{3, 2}, dir.file("l.pgm"));
    auto [back2, shape2] = load_label_map(dir.file("l.pgm"));
    CHECK(back2 == labels2);
    CHECK(shape2 == GridShape{3, 2});

    std::vector<int> labels3(24);
    for (std::size_t j = 0; j < labels3.size(); ++j) labels3[j] = static_cast<int>(j % 4);
    save_label_map(labels3, GridShape{4, 3, 2}, dir.file("l.raw"));
    auto [back3, shape3] = load_label_map(dir.file("l.raw"));
    CHECK(back3 == labels3);
    CHECK(shape3 == GridShape{4, 3, 2});
}

TEST_CASE("emit_results writes the documented artifact set") {
    ScratchDir dir("palmseg_io_emit");
    GridShape shape{10, 8};
    GridImage f(shape);
    for (std::size_t j = 0; j < shape.pixels(); ++j)
        f.values[j] = (j % 10 < 5) ? std::log(0.3) : std::log(0.8);

    SolverConfig cfg;
    cfg.params.lambdas = {0.1, 0.1, 0.1};
    cfg.params.gamma = 5.0;
    cfg.outer_iters = 25;
    cfg.inner.inner_iters = 8;
    cfg.init_sigma = 3.0;
    cfg.log_every = 10;
    // force a known codebook so the emitted file is predictable
    std::vector<double> guess = {0.0, std::log(2.0), -1.0};
    InitState st = initialize(f, 3, cfg, &guess);
    cfg.frozen_centers = {1, 1, 1};
    const SolveResult res = solve(f, 3, cfg, &st);

    std::vector<int> truth(shape.pixels());
    for (std::size_t j = 0; j < shape.pixels(); ++j) truth[j] = (j % 10 < 5) ? 0 : 1;

    const std::vector<std::string> written = emit_results(res, dir.file("out"), &truth);
    CHECK(fs::exists(dir.file("out") + "/labels.pgm"));
    for (int k = 0; k < 3; ++k)
        CHECK(fs::exists(dir.file("out") + "/mask_" + std::to_string(k) + ".pgm"));
    CHECK(fs::exists(dir.file("out") + "/illumination.pgm"));
    CHECK(fs::exists(dir.file("out") + "/illumination_range.txt"));
    CHECK(fs::exists(dir.file("out") + "/illumination_log.raw"));
    CHECK(fs::exists(dir.file("out") + "/codebook.txt"));
    CHECK(fs::exists(dir.file("out") + "/trace.csv"));
    CHECK(fs::exists(dir.file("out") + "/misclassification.txt"));
    CHECK(written.size() >= 10);

    // codebook holds exp(c): frozen at (1, 2, e^-1)
    std::ifstream cb(dir.file("out") + "/codebook.txt");
    double v1, v2, v3;
    cb >> v1 >> v2 >> v3;
    CHECK(v1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v2 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(v3 == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    // trace.csv: header + ceil(25/10)+1 rows
    std::ifstream tr(dir.file("out") + "/trace.csv");
    std::string line;
    std::size_t lines = 0;
    std::getline(tr, line);
    CHECK(line == "iter,energy,data,tv,smooth,max_simplex_violation,mean_l,seconds");
    while (std::getline(tr, line)) ++lines;
    CHECK(lines == 4);
}

TEST_CASE("load_image dispatches by path kind") {
    ScratchDir dir("palmseg_io_dispatch");
    const GridImage img(GridShape{4, 4}, 0.5);
    save_pgm(img, dir.file("i.pgm"), 8);
    CHECK(load_image(dir.file("i.pgm")).shape == GridShape{4, 4});
    save_raw_volume(GridImage(GridShape{3, 3, 3}, 0.25), dir.file("v.raw"));
    CHECK(load_image(dir.file("v.raw")).shape == GridShape{3, 3, 3});
    CHECK_THROWS(load_image(dir.file("absent.pgm")));
}
