#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ardx/classifier.hpp"
#include "ardx/data.hpp"
#include "ardx/made.hpp"
#include "ardx/rng.hpp"
#include "ardx/train.hpp"
#include "oracles.hpp"

using namespace ardx;

TEST_CASE("adam update rules") {
    Tensor p(Shape{3}, {1.0, -2.0, 0.5});
    std::vector<ParamRef> params = {{"p", &p}};
    OptConfig cfg;
    cfg.learning_rate = 1e-3;

    // zero gradient, zero state: parameters unchanged
    {
        AdamState st;
        const Tensor before = p;
        adam_step(params, {Tensor(Shape{3})}, st, cfg);
        CHECK(p.same_values(before));
        CHECK(st.t == 1);
    }
    // constant gradient: |step| == lr * g / (|g| + eps) from the first update
    {
        Tensor q(Shape{1}, {0.0});
        std::vector<ParamRef> qp = {{"q", &q}};
        AdamState st;
        const double g = 0.37;
        double prev = q[0];
        for (int i = 0; i < 20; ++i) {
            adam_step(qp, {Tensor(Shape{1}, {g})}, st, cfg);
            const double moved = prev - q[0];
            CHECK(moved ==
                  doctest::Approx(cfg.learning_rate * g / (g + cfg.epsilon)).epsilon(1e-12));
            prev = q[0];
        }
    }
    // tiny gradients: epsilon caps the step at lr * g / eps
    {
        Tensor q(Shape{1}, {0.0});
        std::vector<ParamRef> qp = {{"q", &q}};
        AdamState st;
        const double g = 1e-12;
        adam_step(qp, {Tensor(Shape{1}, {g})}, st, cfg);
        CHECK(std::abs(q[0]) <= cfg.learning_rate * g / cfg.epsilon * (1.0 + 1e-9));
        CHECK(std::abs(q[0]) > 0.0);
    }
    {
        AdamState st;
        CHECK_THROWS_AS(adam_step(params, {}, st, cfg), std::invalid_argument);
    }
}

TEST_CASE("config validation") {
    OptConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = OptConfig{};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = OptConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("training loss decreases on the 2-d manifold") {
    const Dataset data = gen_manifold2d(800, 5);
    MadeModel m = MadeModel::create(data.bins, {32, 32}, {0, 1}, 9);
    OptConfig cfg;
    cfg.batch_size = 64;
    cfg.max_steps = 300;
    cfg.seed = 11;
    const TrainReport r = train_mle(m, data.examples, cfg);
    REQUIRE(int(r.steps.size()) == 300);
    double head = 0, tail = 0;
    for (int i = 0; i < 30; ++i) {
        head += r.steps[size_t(i)].nll_nats / 30;
        tail += r.steps[size_t(270 + i)].nll_nats / 30;
    }
    CHECK(tail < head);
    for (size_t i = 1; i < r.steps.size(); ++i)
        CHECK(r.steps[i].step > r.steps[i - 1].step);
}

TEST_CASE("single repeated point drives the loss toward zero nats") {
    const BinSpec bins(-5, 5, 51);
    const Tensor data(Shape{1, 2}, {0.0, 1.0});
    MadeModel m = MadeModel::create(bins, {16}, {0, 1}, 2);
    OptConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 4;
    cfg.max_steps = 2500;
    cfg.validation_fraction = 0.0;
    cfg.seed = 1;
    const TrainReport r = train_mle(m, data, cfg);
    double head = 0, tail = 0;
    const int k = int(r.steps.size()) / 10;
    for (int i = 0; i < k; ++i) {
        head += r.steps[size_t(i)].nll_nats / k;
        tail += r.steps[r.steps.size() - 1 - size_t(i)].nll_nats / k;
    }
    CHECK(tail < head);
    CHECK(r.steps.back().nll_nats < 0.2);
    // monotone after warmup: the last quarter never rises appreciably
    const size_t q = r.steps.size() * 3 / 4;
    for (size_t i = q + 1; i < r.steps.size(); ++i)
        CHECK(r.steps[i].nll_nats <= r.steps[i - 1].nll_nats + 1e-6);
}

TEST_CASE("same seed reproduces the training curve bitwise") {
    const Dataset data = gen_manifold2d(300, 5);
    auto run = [&]() {
        MadeModel m = MadeModel::create(data.bins, {16}, {0, 1}, 9);
        OptConfig cfg;
        cfg.batch_size = 32;
        cfg.max_steps = 60;
        cfg.seed = 21;
        return train_mle(m, data.examples, cfg);
    };
    const TrainReport a = run(), b = run();
    REQUIRE(a.steps.size() == b.steps.size());
    for (size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].nll_nats == b.steps[i].nll_nats);
        CHECK(a.steps[i].bits_per_dim == b.steps[i].bits_per_dim);
    }
}

TEST_CASE("resuming from a checkpoint replays the uninterrupted run bitwise") {
    namespace fs = std::filesystem;
    const std::string dir = "train_resume_test";
    fs::create_directories(dir);
    const Dataset data = gen_manifold2d(300, 5);
    OptConfig cfg;
    cfg.batch_size = 32;
    cfg.max_steps = 40;
    cfg.checkpoint_every = 20;
    cfg.checkpoint_dir = dir;
    cfg.seed = 33;

    MadeModel full = MadeModel::create(data.bins, {16}, {0, 1}, 9);
    const TrainReport full_report = train_mle(full, data.examples, cfg);

    MadeModel resumed = MadeModel::load_file(dir + "/model_step20.ardx");
    const TrainReport tail_report =
        train_mle(resumed, data.examples, cfg, dir + "/model_step20.ardx");
    REQUIRE(tail_report.steps.size() == 20);
    for (size_t i = 0; i < tail_report.steps.size(); ++i) {
        CHECK(tail_report.steps[i].step == full_report.steps[20 + i].step);
        CHECK(tail_report.steps[i].nll_nats == full_report.steps[20 + i].nll_nats);
    }
    for (size_t l = 0; l < full.weights.size(); ++l)
        CHECK(resumed.weights[l].same_values(full.weights[l]));
    fs::remove_all(dir);
}

TEST_CASE("end-to-end parameter gradients match finite differences") {
    const BinSpec bins(-5, 5, 51);
    MadeModel m = MadeModel::create(bins, {12, 12}, {0, 1}, 3);
    Rng rng(8);
    for (auto& w : m.weights)
        for (auto& v : w.data) v = rng.normal() * 0.3;
    Tensor batch(Shape{4, 2});
    for (auto& v : batch.data) v = bins.center(20 + rng.uniform_int(11));

    auto total_nll = [&](const MadeModel& model) { return eval_nll(model, batch) * batch.shape[0]; };
    std::vector<Tensor> analytic;
    {
        Tape t;
        const auto bound = m.bind(t, batch, false, true);
        const Ref loss = t.scale(t.sum(bound.logprob), -1.0);
        t.backward(loss);
        for (const Ref r : bound.param_refs) analytic.push_back(t.grad(r));
    }
    const auto params = m.params();
    Rng pick(12);
    for (int probe = 0; probe < 10; ++probe) {
        const size_t pi = size_t(pick.uniform_int(int(params.size())));
        Tensor& w = *params[pi].tensor;
        const int ci = pick.uniform_int(w.numel());
        const double keep = w[size_t(ci)];
        const double h = 1e-5;
        w[size_t(ci)] = keep + h;
        const double fp = total_nll(m);
        w[size_t(ci)] = keep - h;
        const double fm = total_nll(m);
        w[size_t(ci)] = keep;
        const double numeric = (fp - fm) / (2 * h);
        const double a = analytic[pi][size_t(ci)];
        CHECK(std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12) < 1e-4);
    }
}

TEST_CASE("train_mle input contracts") {
    const BinSpec bins(-5, 5, 51);
    MadeModel m = MadeModel::create(bins, {8}, {0, 1}, 1);
    OptConfig cfg;
    CHECK_THROWS_AS(train_mle(m, Tensor(Shape{4, 3}), cfg), std::invalid_argument);
    CHECK_THROWS_AS(train_mle(m, Tensor(Shape{2}), cfg), std::invalid_argument);
}

namespace {

// two-class image set separable by mean intensity
Dataset blob_classes(int n, int h, int w, uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.bins = image_bins();
    d.name = "two-blobs";
    d.examples = Tensor(Shape{n, 1, h, w});
    for (int i = 0; i < n; ++i) {
        const int label = rng.uniform_int(2);
        d.labels.push_back(label);
        const double base = label == 0 ? -0.6 : 0.6;
        for (int p = 0; p < h * w; ++p)
            d.examples[size_t(i) * h * w + size_t(p)] =
                d.bins.snap(base + rng.uniform(-0.25, 0.25));
    }
    return d;
}

} // namespace

TEST_CASE("classifier separates intensity blobs") {
    const Dataset d = blob_classes(400, 6, 6, 3);
    Classifier clf = Classifier::create(1, 6, 6, 2, 16, 7);
    OptConfig cfg;
    cfg.batch_size = 16;
    cfg.max_steps = 120;
    cfg.validation_fraction = 0.2;
    cfg.seed = 5;
    const ClassifierReport r = train_classifier(clf, d.examples, d.labels, cfg);
    CHECK(r.holdout_accuracy > 0.99);
    CHECK(clf.features(batch_example(d.examples, 0)).numel() == 16);
}

TEST_CASE("shuffled labels score near chance on held-out data") {
    Dataset d = blob_classes(2000, 6, 6, 4);
    Rng rng(9);
    for (size_t i = d.labels.size() - 1; i > 0; --i)
        std::swap(d.labels[i], d.labels[size_t(rng.uniform_int(int(i) + 1))]);
    Classifier clf = Classifier::create(1, 6, 6, 2, 16, 7);
    OptConfig cfg;
    cfg.batch_size = 16;
    cfg.max_steps = 120;
    cfg.validation_fraction = 0.25;
    cfg.seed = 5;
    const ClassifierReport r = train_classifier(clf, d.examples, d.labels, cfg);
    CHECK(std::abs(r.holdout_accuracy - 0.5) < 0.05);
}

TEST_CASE("single-class data is rejected") {
    Dataset d = blob_classes(20, 6, 6, 3);
    std::fill(d.labels.begin(), d.labels.end(), 1);
    Classifier clf = Classifier::create(1, 6, 6, 2, 16, 7);
    OptConfig cfg;
    CHECK_THROWS_AS(train_classifier(clf, d.examples, d.labels, cfg), std::invalid_argument);
}
