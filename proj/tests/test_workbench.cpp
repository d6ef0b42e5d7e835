#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ardx/config.hpp"
#include "ardx/data.hpp"
#include "ardx/emit.hpp"
#include "ardx/rng.hpp"
#include "oracles.hpp"

using namespace ardx;

TEST_CASE("manifold2d dataset") {
    const Dataset d = gen_manifold2d(10000, 9);
    d.validate();
    REQUIRE(d.examples.shape == Shape{10000, 2});
    const double center = d.bins.center(d.bins.count / 2);
    std::vector<double> x2;
    for (int i = 0; i < 10000; ++i) {
        CHECK(d.examples[size_t(2 * i)] == center); // x1 sits on the center bin exactly
        x2.push_back(d.examples[size_t(2 * i) + 1]);
    }
    CHECK(std::abs(oracle::mean_of(x2)) < 4.0 / std::sqrt(10000.0));
    CHECK(std::abs(oracle::var_of(x2) - 1.0) < 0.05);
    CHECK(gen_manifold2d(100, 3).examples.same_values(gen_manifold2d(100, 3).examples));
    CHECK_FALSE(gen_manifold2d(100, 3).examples.same_values(gen_manifold2d(100, 4).examples));
}

TEST_CASE("colorize keeps black black and the gray structure recoverable") {
    const Dataset gray = gen_strokes(24, 10, 10, 5);
    const Dataset color = colorize_mnist(gray, 7);
    color.validate();
    REQUIRE(color.examples.shape == Shape{24, 3, 10, 10});
    CHECK(color.labels == gray.labels);

    // all-black input stays all-black
    Dataset black;
    black.bins = image_bins();
    black.examples = Tensor::full(Shape{2, 1, 4, 4}, black.bins.lo);
    const Dataset black_c = colorize_mnist(black, 3);
    for (const double v : black_c.examples.data) CHECK(v == black.bins.lo);

    // channel mean correlates with the source image
    for (int i = 0; i < 5; ++i) {
        const Tensor src = batch_example(gray.examples, i);
        const Tensor mean = channel_mean(batch_example(color.examples, i));
        std::vector<double> a(src.data.begin(), src.data.end());
        std::vector<double> b(mean.data.begin(), mean.data.end());
        const double ma = oracle::mean_of(a), mb = oracle::mean_of(b);
        double num = 0, va = 0, vb = 0;
        for (size_t j = 0; j < a.size(); ++j) {
            num += (a[j] - ma) * (b[j] - mb);
            va += (a[j] - ma) * (a[j] - ma);
            vb += (b[j] - mb) * (b[j] - mb);
        }
        CHECK(num / std::sqrt(va * vb) > 0.99);
    }
    // deterministic hue assignment
    CHECK(colorize_mnist(gray, 7).examples.same_values(color.examples));
}

TEST_CASE("idx round trip and error reporting") {
    // hand-crafted 2-image 2x2 file
    {
        std::ofstream f("mini.idx", std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
        f.write(reinterpret_cast<const char*>(header), 16);
        const unsigned char px[] = {0, 51, 102, 153, 204, 255, 10, 20};
        f.write(reinterpret_cast<const char*>(px), 8);
    }
    const Dataset d = load_idx("mini.idx");
    REQUIRE(d.examples.shape == Shape{2, 1, 2, 2});
    const double delta = 2.0 / 255.0;
    CHECK(d.examples[0] == -1.0);
    CHECK(d.examples[1] == doctest::Approx(-1.0 + 51 * delta));
    CHECK(d.examples[5] == doctest::Approx(-1.0 + 255 * delta));
    std::remove("mini.idx");

    // wrong magic is rejected naming the magic
    {
        std::ofstream f("bad.idx", std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 2, 0, 0, 0, 1};
        f.write(reinterpret_cast<const char*>(header), 8);
    }
    CHECK_THROWS_WITH_AS(load_idx("bad.idx"), doctest::Contains("0x00000802"),
                         std::runtime_error);
    std::remove("bad.idx");

    // truncated payload is rejected with a byte offset
    {
        std::ofstream f("trunc.idx", std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4};
        f.write(reinterpret_cast<const char*>(header), 16);
        const unsigned char px[] = {1, 2, 3};
        f.write(reinterpret_cast<const char*>(px), 3);
    }
    CHECK_THROWS_WITH_AS(load_idx("trunc.idx"), doctest::Contains("byte"), std::runtime_error);
    std::remove("trunc.idx");

    // write-then-read identity on a random byte tensor
    Rng rng(13);
    Tensor imgs(Shape{3, 1, 5, 4});
    const BinSpec bins = image_bins();
    for (auto& v : imgs.data) v = bins.center(rng.uniform_int(256));
    save_idx("rt.idx", imgs, bins);
    const Dataset back = load_idx("rt.idx", bins);
    REQUIRE(back.examples.shape == imgs.shape);
    for (int i = 0; i < imgs.numel(); ++i)
        CHECK(bins.index_of(back.examples[size_t(i)]) == bins.index_of(imgs[size_t(i)]));
    std::remove("rt.idx");

    // labels
    save_idx_labels("lbl.idx", {0, 1, 2, 1});
    CHECK(load_idx_labels("lbl.idx") == std::vector<int>{0, 1, 2, 1});
    CHECK_THROWS_AS(load_idx_labels("missing_file.idx"), std::runtime_error);
    std::remove("lbl.idx");
}

TEST_CASE("probe image datasets") {
    const BinSpec bins = image_bins();
    const Dataset black = make_probe_images("black", 3, 1, 6, 6);
    for (const double v : black.examples.data) CHECK(v == bins.lo);
    const Dataset white = make_probe_images("white", 3, 1, 6, 6);
    for (const double v : white.examples.data) CHECK(v == bins.hi);
    const Dataset noise = make_probe_images("noise", 40, 1, 60, 60, bins, 3);
    std::vector<double> observed(256, 0.0);
    for (const double v : noise.examples.data) observed[size_t(bins.index_of(v))] += 1.0;
    const std::vector<double> expected(256, double(noise.examples.data.size()) / 256.0);
    CHECK(oracle::chi_square_pvalue(observed, expected) > 0.01);
    CHECK_THROWS_AS(make_probe_images("sepia", 1, 1, 4, 4), std::invalid_argument);
}

TEST_CASE("stroke and blob corpora") {
    const Dataset s = gen_strokes(40, 12, 12, 3);
    s.validate();
    CHECK(int(s.labels.size()) == 40);
    // mostly dark: the background dominates
    double dark = 0;
    for (const double v : s.examples.data)
        if (v == s.bins.lo) dark += 1.0;
    CHECK(dark / double(s.examples.data.size()) > 0.5);
    for (const int l : s.labels) {
        CHECK(l >= 0);
        CHECK(l <= 2);
    }
    const Dataset b = gen_blobs(10, 12, 12, 4);
    b.validate();
    CHECK(gen_strokes(5, 8, 8, 9).examples.same_values(gen_strokes(5, 8, 8, 9).examples));
}

TEST_CASE("run config consumes every key or aborts") {
    RunConfig cfg = RunConfig::from_string("a = 1\nb = x y\n# comment\nc = 2.5\nd=true\n");
    CHECK(cfg.get_int("a") == 1);
    CHECK(cfg.get_str("b") == "x y");
    CHECK(cfg.get_double("c") == 2.5);
    CHECK(cfg.get_bool("d", false));
    cfg.finish(); // all consumed

    RunConfig bad = RunConfig::from_string("known = 1\nmispeled = 2\n");
    CHECK(bad.get_int("known") == 1);
    CHECK_THROWS_WITH_AS(bad.finish(), doctest::Contains("mispeled"), std::runtime_error);

    CHECK_THROWS_AS(RunConfig::from_string("dup = 1\ndup = 2\n"), std::runtime_error);
    CHECK_THROWS_AS(RunConfig::from_string("noequals\n"), std::runtime_error);
    RunConfig types = RunConfig::from_string("n = 12x\n");
    CHECK_THROWS_AS(types.get_int("n"), std::runtime_error);
    RunConfig missing;
    CHECK_THROWS_AS(missing.get_str("absent"), std::runtime_error);
    CHECK(missing.get_str("absent", "fb") == "fb");
}

TEST_CASE("svg heatmap cells and extremes") {
    GradField f;
    f.x1_lo = -1;
    f.x1_hi = 1;
    f.x2_lo = -1;
    f.x2_hi = 1;
    f.res1 = 2;
    f.res2 = 2;
    f.norms = {0.0, 1.0, 1.0, 0.0};
    emit_svg_heatmap("field2.svg", f, "unit", 3);
    std::ifstream in("field2.svg");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string svg = ss.str();
    size_t cells = 0, pos = 0;
    while ((pos = svg.find("class=\"cell\"", pos)) != std::string::npos) {
        ++cells;
        pos += 10;
    }
    CHECK(cells == 4);
    CHECK(svg.find("rgb(0,0,16)") != std::string::npos);      // ramp floor
    CHECK(svg.find("rgb(255,250,210)") != std::string::npos); // ramp ceiling
    CHECK(svg.find("ardx-v1") != std::string::npos);          // self-description
    CHECK(svg.find("x1 = -1") != std::string::npos);
    std::remove("field2.svg");
}

TEST_CASE("csv round trips preserve doubles exactly") {
    OptimizeResult r;
    TrajectoryPoint p;
    p.iteration = 0;
    p.batch = Tensor(Shape{2, 1});
    p.nll_bits = {1.0 / 3.0, 2.7182818284590452};
    p.grad_norm = {1e-17, 3.1415926535897931};
    r.trajectory.push_back(p);
    emit_trajectory_csv("traj.csv", r, "unit", 5);
    std::ifstream in("traj.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line.find("# ardx-v1 experiment=unit seed=5") == 0);
    std::getline(in, line); // header row
    CHECK(line == "iteration,example,nll_bits_per_dim,grad_norm");
    std::vector<double> nll, gn;
    while (std::getline(in, line)) {
        std::istringstream is(line);
        std::string it, ex, a, b;
        std::getline(is, it, ',');
        std::getline(is, ex, ',');
        std::getline(is, a, ',');
        std::getline(is, b);
        nll.push_back(std::stod(a));
        gn.push_back(std::stod(b));
    }
    REQUIRE(nll.size() == 2);
    CHECK(nll[0] == 1.0 / 3.0);
    CHECK(nll[1] == 2.7182818284590452);
    CHECK(gn[0] == 1e-17);
    CHECK(gn[1] == 3.1415926535897931);
    std::remove("traj.csv");

    // field csv round trip
    GradField f;
    f.x1_lo = -3;
    f.x1_hi = 3;
    f.x2_lo = -2;
    f.x2_hi = 2;
    f.res1 = 3;
    f.res2 = 2;
    f.norms = {0.25, 1.0 / 7.0, 0.5, 0.125, 2.0 / 3.0, 1e-13};
    emit_field_csv("field.csv", f, "unit", 5);
    const GradField g = load_field_csv("field.csv");
    CHECK(g.res1 == 3);
    CHECK(g.res2 == 2);
    CHECK(g.norms == f.norms);
    std::remove("field.csv");
}

TEST_CASE("detection matrix emission") {
    DetectionMatrix m;
    m.col_names = {"AR-2SD", "CCG"};
    m.row_names = {"in-dist", "noise"};
    m.percent = {95.25, 92.0, 0.0, 1.1};
    const std::string table = render_table(m);
    CHECK(table.find("AR-2SD") != std::string::npos);
    CHECK(table.find("95.2%") != std::string::npos);
    CHECK(table.find("noise") != std::string::npos);
    emit_matrix_csv("mat.csv", m, "unit", 9);
    const DetectionMatrix r = load_matrix_csv("mat.csv");
    CHECK(r.col_names == m.col_names);
    CHECK(r.row_names == m.row_names);
    CHECK(r.percent == m.percent);
    std::remove("mat.csv");

    // empty matrix: header-only csv
    DetectionMatrix empty;
    emit_matrix_csv("empty.csv", empty, "unit", 9);
    std::ifstream in("empty.csv");
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(l1.rfind("#", 0) == 0);
    CHECK(l2 == "dataset");
    CHECK_FALSE(std::getline(in, l3));
    std::remove("empty.csv");
}

TEST_CASE("pgm and ppm snapshots") {
    const BinSpec bins = image_bins();
    Tensor gray(Shape{1, 2, 3}, {-1.0, -0.5, 0.0, 0.25, 0.75, 1.0});
    write_pgm("img.pgm", gray, bins);
    std::ifstream in("img.pgm", std::ios::binary);
    std::string magic;
    in >> magic;
    CHECK(magic == "P5");
    std::remove("img.pgm");

    Tensor rgb(Shape{3, 2, 2});
    for (int i = 0; i < 12; ++i) rgb[size_t(i)] = bins.center((i * 20) % 256);
    write_ppm("img.ppm", rgb, bins);
    std::ifstream in2("img.ppm", std::ios::binary);
    in2 >> magic;
    CHECK(magic == "P6");
    std::remove("img.ppm");

    const Tensor trip = hconcat_images({rgb, rgb, rgb});
    CHECK(trip.shape == Shape{3, 2, 6});
    CHECK_THROWS_AS(write_ppm("x.ppm", gray, bins), std::invalid_argument);
    CHECK_THROWS_AS(write_pgm("/nonexistent_dir_xyz/x.pgm", gray, bins), std::runtime_error);
}

TEST_CASE("dataset splits") {
    const Dataset d = gen_strokes(10, 6, 6, 3);
    const Dataset head = dataset_head(d, 6, "train");
    const Dataset tail = dataset_tail(d, 4, "test");
    CHECK(head.size() == 6);
    CHECK(tail.size() == 4);
    CHECK(batch_example(tail.examples, 0).same_values(batch_example(d.examples, 6)));
    CHECK(tail.labels[0] == d.labels[6]);
    CHECK_THROWS_AS(dataset_head(d, 11, "x"), std::invalid_argument);
}
