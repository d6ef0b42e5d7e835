#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ardx/arcycle.hpp"
#include "ardx/pixel_ar.hpp"
#include "ardx/train.hpp"
#include "ardx/rng.hpp"
#include "oracles.hpp"

using namespace ardx;

namespace {

const BinSpec kBins(-1, 1, 256);

Tensor random_batch(int n, int c, int h, int w, uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{n, c, h, w});
    for (auto& v : t.data) v = kBins.center(rng.uniform_int(kBins.count));
    return t;
}

// density fixture with a constant uniform pmf over the bins
class UniformModel final : public ArModel {
public:
    UniformModel(int c, int h, int w) : shape_{c, h, w} {}
    Shape input_shape() const override { return shape_; }
    int dims() const override { return int(numel_of(shape_)); }
    const BinSpec& bins() const override { return kBins; }
    std::vector<ParamRef> params() override { return {}; }
    bool batched_graph() const override { return false; }
    Bound bind_ref(Tape& t, Ref x, bool) const override {
        Bound b;
        b.x = x;
        b.logprob = t.constant(-double(dims()) * std::log(double(kBins.count)));
        return b;
    }
    Tensor sample(int, uint64_t) const override { throw std::logic_error("fixture"); }
    NamedArrays to_arrays() const override { return {}; }

private:
    Shape shape_;
};

PixelArModel small_pixel(int c, int h, int w, uint64_t seed) {
    PixelArModel m = PixelArModel::create(kBins, c, h, w, 8, 3, 2, 3, seed);
    Rng rng(seed + 100);
    for (auto& wt : m.conv_w)
        for (auto& v : wt.data) v = rng.normal() * 0.2;
    return m;
}

} // namespace

TEST_CASE("cycle loss basics") {
    const Tensor bx = random_batch(3, 1, 4, 4, 1);
    const Tensor by = random_batch(2, 1, 4, 4, 2);
    const auto identity = [](const Tensor& v) { return v; };

    // both mappings identity: perfect reconstruction
    CHECK(cycle_loss_fn(identity, identity, bx, by) == 0.0);

    // everything maps to the zero image: the loss is the mean absolute value
    const auto zero_map = [](const Tensor& v) { return Tensor(v.shape); };
    double want = 0.0;
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 16; ++j) s += std::abs(bx[size_t(i * 16 + j)]);
        want += s / 16.0 / 3.0;
    }
    for (int i = 0; i < 2; ++i) {
        double s = 0;
        for (int j = 0; j < 16; ++j) s += std::abs(by[size_t(i * 16 + j)]);
        want += s / 16.0 / 2.0;
    }
    CHECK(cycle_loss_fn(zero_map, zero_map, bx, by) == doctest::Approx(want).epsilon(1e-12));

    // swapping roles and domains leaves the value unchanged
    Generator f = Generator::create(1, 1, 4, 4, 6, 2, kBins, 3);
    Generator g = Generator::create(1, 1, 4, 4, 6, 2, kBins, 4);
    CHECK(cycle_loss(f, g, bx, by) == cycle_loss(g, f, by, bx));
}

TEST_CASE("zeroed final layer maps everything to the bin-range midpoint") {
    Generator g = Generator::create(1, 1, 4, 4, 6, 3, kBins, 3);
    for (auto& v : g.w.back().data) v = 0.0;
    for (auto& v : g.b.back().data) v = 0.0;
    const Tensor out = g.apply_detached(batch_example(random_batch(1, 1, 4, 4, 5), 0));
    for (const double v : out.data) CHECK(v == (kBins.lo + kBins.hi) / 2.0);
}

TEST_CASE("nll loss") {
    const UniformModel p(1, 4, 4);
    const Tensor bx = random_batch(5, 1, 4, 4, 3);
    const auto identity = [](const Tensor& v) { return v; };
    // uniform density: exactly dims * ln(bin count) for any mapping
    const double want = 16.0 * std::log(256.0);
    CHECK(nll_loss_fn(p, identity, bx) == doctest::Approx(want).epsilon(1e-12));
    Generator f = Generator::create(1, 1, 4, 4, 6, 2, kBins, 3);
    CHECK(nll_loss(p, f, bx) == doctest::Approx(want).epsilon(1e-12));

    // duplicating the batch leaves the mean unchanged
    const PixelArModel live = small_pixel(1, 4, 4, 9);
    Tensor doubled(Shape{10, 1, 4, 4});
    std::copy(bx.data.begin(), bx.data.end(), doubled.data.begin());
    std::copy(bx.data.begin(), bx.data.end(), doubled.data.begin() + bx.data.size());
    CHECK(nll_loss(live, f, bx) == doctest::Approx(nll_loss(live, f, doubled)).epsilon(1e-12));
}

TEST_CASE("arcycle_total composes its parts") {
    const PixelArModel px = small_pixel(3, 4, 4, 11);
    const PixelArModel py = small_pixel(1, 4, 4, 12);
    Generator f = Generator::create(3, 1, 4, 4, 6, 2, kBins, 3);
    Generator g = Generator::create(1, 3, 4, 4, 6, 2, kBins, 4);
    const Tensor bx = random_batch(2, 3, 4, 4, 5);
    const Tensor by = random_batch(2, 1, 4, 4, 6);

    const double nll_y = nll_loss(py, f, bx);
    const double nll_x = nll_loss(px, g, by);
    const double cyc = cycle_loss(f, g, bx, by);
    for (const double beta : {0.0, 1.0, 37.5}) {
        const double total = arcycle_total(f, g, px, py, bx, by, beta);
        CHECK(total == doctest::Approx(nll_y + nll_x + beta * cyc).epsilon(1e-12));
    }
}

TEST_CASE("gaussian blur") {
    // a constant image is untouched: the kernel sums to one
    const Tensor flat = Tensor::full(Shape{1, 7, 7}, 0.37);
    const Tensor blurred = gaussian_blur(flat, 1.0);
    for (const double v : blurred.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    // the impulse response is the normalized separable kernel; the image is
    // padded wide enough that reflection cannot fold mass back
    const double sigma = 0.8;
    const int r = int(std::ceil(3 * sigma));
    const int side = 4 * r + 1, mid = 2 * r;
    Tensor impulse(Shape{1, side, side});
    impulse[size_t(mid * side + mid)] = 1.0;
    const Tensor resp = gaussian_blur(impulse, sigma);
    std::vector<double> k1(size_t(2 * r + 1), 0.0);
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        k1[size_t(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k1[size_t(i + r)];
    }
    for (auto& v : k1) v /= sum;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            CHECK(resp[size_t((mid + dy) * side + mid + dx)] ==
                  doctest::Approx(k1[size_t(dy + r)] * k1[size_t(dx + r)]).epsilon(1e-9));

    // semigroup: two passes at sigma equal one pass at sigma*sqrt(2) on
    // interior pixels, up to the ceil(3*sigma) truncation of the kernels
    // (composed 1-d kernels deviate by at most ~1.7e-4 per tap there)
    const double s2 = 1.0;
    const Tensor img = batch_example(random_batch(1, 1, 17, 17, 21), 0);
    const Tensor twice = gaussian_blur(gaussian_blur(img, s2), s2);
    const Tensor once = gaussian_blur(img, s2 * std::sqrt(2.0));
    const int guard = int(std::ceil(3 * s2 * std::sqrt(2.0))) + int(std::ceil(3 * s2));
    for (int y = guard; y < 17 - guard; ++y)
        for (int x = guard; x < 17 - guard; ++x)
            CHECK(std::abs(twice[size_t(y * 17 + x)] - once[size_t(y * 17 + x)]) < 1e-3);

    CHECK_THROWS_AS(gaussian_blur(flat, 0.0), std::invalid_argument);
}

TEST_CASE("ablation selection and exactness") {
    const PixelArModel px = small_pixel(3, 4, 4, 11);
    const PixelArModel py = small_pixel(1, 4, 4, 12);
    Dataset X, Y;
    X.bins = Y.bins = kBins;
    X.examples = random_batch(8, 3, 4, 4, 5);
    Y.examples = random_batch(8, 1, 4, 4, 6);

    ArCycleConfig cfg;
    cfg.max_steps = 4;
    cfg.batch_size = 3;
    cfg.snapshot_every = 100;
    cfg.auto_beta = false;
    cfg.seed = 7;

    auto run = [&](Ablation ab, double beta) {
        Generator f = Generator::create(3, 1, 4, 4, 6, 2, kBins, 3);
        Generator g = Generator::create(1, 3, 4, 4, 6, 2, kBins, 4);
        ArCycleConfig c = cfg;
        c.ablation = ab;
        c.beta = beta;
        train_arcycle(f, g, px, py, X, Y, c);
        return std::pair<Generator, Generator>{f, g};
    };

    // dropping the cycle term equals running the full objective at beta 0
    const auto [f_nll, g_nll] = run(Ablation::nll_only, 123.0);
    const auto [f_b0, g_b0] = run(Ablation::full, 0.0);
    for (size_t l = 0; l < f_nll.w.size(); ++l) {
        CHECK(f_nll.w[l].data == f_b0.w[l].data);
        CHECK(g_nll.w[l].data == g_b0.w[l].data);
    }

    // ablation names round-trip
    for (const char* name : {"full", "nll_only", "cyc_only", "blur"})
        CHECK(std::string(ablation_name(ablation_from_string(name))) == name);
    CHECK_THROWS_AS(ablation_from_string("half"), std::invalid_argument);
    ArCycleConfig bad = cfg;
    bad.ablation = Ablation::blur;
    bad.blur_sigma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("cyc_only matches a hand-built cycle-only update") {
    const PixelArModel px = small_pixel(3, 4, 4, 11);
    const PixelArModel py = small_pixel(1, 4, 4, 12);
    Dataset X, Y;
    X.bins = Y.bins = kBins;
    X.examples = random_batch(4, 3, 4, 4, 5);
    Y.examples = random_batch(4, 1, 4, 4, 6);

    ArCycleConfig cfg;
    cfg.ablation = Ablation::cyc_only;
    cfg.max_steps = 1; // one iteration updates F only
    cfg.batch_size = 2;
    cfg.snapshot_every = 100;
    cfg.auto_beta = false;
    cfg.seed = 13;

    Generator f = Generator::create(3, 1, 4, 4, 6, 2, kBins, 3);
    Generator g = Generator::create(1, 3, 4, 4, 6, 2, kBins, 4);
    const Generator f0 = f, g0 = g;
    train_arcycle(f, g, px, py, X, Y, cfg);

    // replicate: same batch draw, cycle gradients for F alone, one adam step
    Rng rng(cfg.seed);
    std::vector<int> ix(2, 0), iy(2, 0);
    for (auto& i : ix) i = rng.uniform_int(4);
    for (auto& i : iy) i = rng.uniform_int(4);
    std::vector<Tensor> grads;
    for (const auto& w : f0.w) {
        grads.emplace_back(w.shape);
        grads.emplace_back(Shape{w.shape[0]});
    }
    for (int i = 0; i < 2; ++i) {
        Tape t;
        const Ref xr = t.constant(batch_example(X.examples, ix[size_t(i)]));
        const Ref yr = t.constant(batch_example(Y.examples, iy[size_t(i)]));
        std::vector<Ref> refs;
        const Ref fx = f0.apply(t, xr, &refs, true);
        const Ref gy = g0.apply(t, yr, nullptr, false);
        const Ref gfx = g0.apply(t, fx, nullptr, false);
        const Ref fgy = f0.apply(t, gy, &refs, true);
        const Ref cyc = t.add(t.mean(t.abs(t.sub(gfx, xr))), t.mean(t.abs(t.sub(fgy, yr))));
        t.backward(cyc);
        // both parameter bindings of each tensor sum first, then the batch mean
        std::vector<Tensor> local;
        for (const auto& w : f0.w) {
            local.emplace_back(w.shape);
            local.emplace_back(Shape{w.shape[0]});
        }
        for (size_t r = 0; r < refs.size(); ++r) {
            const Tensor& gr = t.grad(refs[r]);
            for (int j = 0; j < gr.numel(); ++j)
                local[r % local.size()][size_t(j)] += gr[size_t(j)];
        }
        for (size_t p = 0; p < grads.size(); ++p)
            for (int j = 0; j < grads[p].numel(); ++j)
                grads[p][size_t(j)] += local[p][size_t(j)] / 2.0;
    }
    Generator f_manual = f0;
    AdamState st;
    OptConfig ocfg;
    ocfg.learning_rate = cfg.learning_rate;
    adam_step(f_manual.params(), grads, st, ocfg);
    for (size_t l = 0; l < f.w.size(); ++l) {
        CHECK(f.w[l].data == f_manual.w[l].data);
        CHECK(f.b[l].data == f_manual.b[l].data);
    }
    // G is untouched on the F iteration
    for (size_t l = 0; l < g.w.size(); ++l) CHECK(g.w[l].data == g0.w[l].data);
}

TEST_CASE("frozen density models and snapshot fidelity") {
    namespace fs = std::filesystem;
    const std::string dir = "arcycle_snap_test";
    fs::create_directories(dir);
    const PixelArModel px = small_pixel(3, 4, 4, 11);
    const PixelArModel py = small_pixel(1, 4, 4, 12);
    const std::vector<Tensor> px_before = px.conv_w, py_before = py.conv_w;
    Dataset X, Y;
    X.bins = Y.bins = kBins;
    X.examples = random_batch(6, 3, 4, 4, 5);
    Y.examples = random_batch(6, 1, 4, 4, 6);

    ArCycleConfig cfg;
    cfg.max_steps = 4;
    cfg.batch_size = 2;
    cfg.snapshot_every = 2;
    cfg.snapshot_rows = 2;
    cfg.seed = 3;
    cfg.out_dir = dir;

    Generator f = Generator::create(3, 1, 4, 4, 6, 2, kBins, 3);
    Generator g = Generator::create(1, 3, 4, 4, 6, 2, kBins, 4);
    const ArCycleReport r = train_arcycle(f, g, px, py, X, Y, cfg);

    for (size_t l = 0; l < px_before.size(); ++l) {
        CHECK(px.conv_w[l].same_values(px_before[l]));
        CHECK(py.conv_w[l].same_values(py_before[l]));
    }
    REQUIRE(r.snapshots.size() >= 2);
    for (const auto& snap : r.snapshots) {
        const Generator fs_ = Generator::load_file(snap.f_checkpoint);
        const Generator gs_ = Generator::load_file(snap.g_checkpoint);
        for (int i = 0; i < snap.x.shape[0]; ++i) {
            const Tensor x = batch_example(snap.x, i);
            const Tensor fx = fs_.apply_detached(x);
            CHECK(fx.same_values(batch_example(snap.fx, i)));
            CHECK(gs_.apply_detached(fx).same_values(batch_example(snap.gfx, i)));
        }
    }
    // iteration-0 snapshot equals the untouched generators' outputs
    const Generator f0 = Generator::create(3, 1, 4, 4, 6, 2, kBins, 3);
    CHECK(r.snapshots[0].fx.same_values(
        batch_stack({f0.apply_detached(batch_example(X.examples, 0)),
                     f0.apply_detached(batch_example(X.examples, 1))})));
    fs::remove_all(dir);
}

TEST_CASE("generator checkpoints round-trip bitwise") {
    Generator g = Generator::create(2, 1, 5, 5, 8, 3, kBins, 17);
    g.save("gen_rt.ardx");
    const Generator r = Generator::load_file("gen_rt.ardx");
    REQUIRE(r.w.size() == g.w.size());
    for (size_t l = 0; l < g.w.size(); ++l) {
        CHECK(r.w[l].same_values(g.w[l]));
        CHECK(r.b[l].same_values(g.b[l]));
    }
    CHECK(r.in_channels == 2);
    std::remove("gen_rt.ardx");
}
