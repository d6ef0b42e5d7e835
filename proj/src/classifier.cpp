#include "ardx/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ardx/rng.hpp"

namespace ardx {

Classifier Classifier::create(int channels, int height, int width, int classes, int feat_width,
                              uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("Classifier: need at least 2 classes");
    Classifier m;
    m.in_channels = channels;
    m.height = height;
    m.width = width;
    m.n_classes = classes;
    m.feat_width = feat_width;
    Rng rng(seed);
    auto init = [&](Tensor& t, int fan_in) {
        const double s = 1.0 / std::sqrt(double(fan_in));
        for (auto& v : t.data) v = rng.normal() * s;
    };
    m.w_conv1 = Tensor(Shape{m.c1, channels, 3, 3});
    init(m.w_conv1, channels * 9);
    m.b_conv1 = Tensor(Shape{m.c1});
    m.w_conv2 = Tensor(Shape{m.c2, m.c1, 3, 3});
    init(m.w_conv2, m.c1 * 9);
    m.b_conv2 = Tensor(Shape{m.c2});
    const int h2 = (height + 1) / 2, w2 = (width + 1) / 2;
    const int h4 = (h2 + 1) / 2, w4 = (w2 + 1) / 2;
    const int flat = m.c2 * h4 * w4;
    m.w_fc1 = Tensor(Shape{flat, feat_width});
    init(m.w_fc1, flat);
    m.b_fc1 = Tensor(Shape{feat_width});
    m.w_fc2 = Tensor(Shape{feat_width, classes}); // zero head: uniform start
    m.b_fc2 = Tensor(Shape{classes});
    return m;
}

std::vector<ParamRef> Classifier::params() {
    return {{"w_conv1", &w_conv1}, {"b_conv1", &b_conv1}, {"w_conv2", &w_conv2},
            {"b_conv2", &b_conv2}, {"w_fc1", &w_fc1},     {"b_fc1", &b_fc1},
            {"w_fc2", &w_fc2},     {"b_fc2", &b_fc2}};
}

Classifier::Bound Classifier::bind(Tape& t, const Tensor& image, bool x_requires_grad) const {
    if (image.shape != Shape{in_channels, height, width})
        throw std::invalid_argument("Classifier: input must be " +
                                    shape_str(Shape{in_channels, height, width}) + ", got " +
                                    shape_str(image.shape));
    Bound bd;
    bd.x = t.leaf(image, x_requires_grad);
    auto param = [&](const Tensor& v) {
        const Ref r = t.leaf(v, true);
        bd.param_refs.push_back(r);
        return r;
    };
    const Ref wc1 = param(w_conv1), bc1 = param(b_conv1);
    const Ref wc2 = param(w_conv2), bc2 = param(b_conv2);
    const Ref wf1 = param(w_fc1), bf1 = param(b_fc1);
    const Ref wf2 = param(w_fc2), bf2 = param(b_fc2);

    Ref h = t.tanh(t.conv2d(bd.x, wc1, bc1, Tensor{}, 1, 1));
    h = t.slice(h, {0, 0, 0}, {c1, height, width}, {1, 2, 2});
    const int h2 = (height + 1) / 2, w2 = (width + 1) / 2;
    h = t.tanh(t.conv2d(h, wc2, bc2, Tensor{}, 1, 1));
    h = t.slice(h, {0, 0, 0}, {c2, h2, w2}, {1, 2, 2});
    const int h4 = (h2 + 1) / 2, w4 = (w2 + 1) / 2;
    h = t.reshape(h, Shape{c2 * h4 * w4});
    bd.features = t.tanh(t.add(t.matmul(h, wf1), bf1));
    bd.log_probs = t.log_softmax(t.add(t.matmul(bd.features, wf2), bf2));
    return bd;
}

Tensor Classifier::features(const Tensor& image) const {
    Tape t;
    return t.val(bind(t, image, false).features);
}

std::vector<double> Classifier::class_log_probs(const Tensor& image) const {
    Tape t;
    const Tensor& lp = t.val(bind(t, image, false).log_probs);
    return lp.data;
}

int Classifier::predict(const Tensor& image) const {
    const std::vector<double> lp = class_log_probs(image);
    return int(std::max_element(lp.begin(), lp.end()) - lp.begin());
}

NamedArrays Classifier::to_arrays() const {
    NamedArrays arrays;
    arrays.emplace_back("meta.kind", Tensor::scalar(2.0));
    arrays.emplace_back("meta.geom",
                        Tensor(Shape{7}, {double(in_channels), double(height), double(width),
                                          double(n_classes), double(feat_width), double(c1),
                                          double(c2)}));
    arrays.emplace_back("w_conv1", w_conv1);
    arrays.emplace_back("b_conv1", b_conv1);
    arrays.emplace_back("w_conv2", w_conv2);
    arrays.emplace_back("b_conv2", b_conv2);
    arrays.emplace_back("w_fc1", w_fc1);
    arrays.emplace_back("b_fc1", b_fc1);
    arrays.emplace_back("w_fc2", w_fc2);
    arrays.emplace_back("b_fc2", b_fc2);
    return arrays;
}

Classifier Classifier::load_file(const std::string& path) {
    const NamedArrays arrays = load_arrays(path);
    if (find_array(arrays, "meta.kind").item() != 2.0)
        throw std::runtime_error("checkpoint " + path + " is not a classifier");
    Classifier m;
    const Tensor& g = find_array(arrays, "meta.geom");
    m.in_channels = int(g[0]);
    m.height = int(g[1]);
    m.width = int(g[2]);
    m.n_classes = int(g[3]);
    m.feat_width = int(g[4]);
    m.c1 = int(g[5]);
    m.c2 = int(g[6]);
    m.w_conv1 = find_array(arrays, "w_conv1");
    m.b_conv1 = find_array(arrays, "b_conv1");
    m.w_conv2 = find_array(arrays, "w_conv2");
    m.b_conv2 = find_array(arrays, "b_conv2");
    m.w_fc1 = find_array(arrays, "w_fc1");
    m.b_fc1 = find_array(arrays, "b_fc1");
    m.w_fc2 = find_array(arrays, "w_fc2");
    m.b_fc2 = find_array(arrays, "b_fc2");
    return m;
}

ClassifierReport train_classifier(Classifier& model, const Tensor& images,
                                  const std::vector<int>& labels, const OptConfig& cfg) {
    cfg.validate();
    if (images.ndim() != 4 || images.shape[0] < 1)
        throw std::invalid_argument("train_classifier: images must be [N,C,H,W]");
    const int n = images.shape[0];
    if (int(labels.size()) != n)
        throw std::invalid_argument("train_classifier: labels do not align with images");
    {
        std::set<int> distinct(labels.begin(), labels.end());
        if (distinct.size() < 2)
            throw std::invalid_argument("train_classifier: single-class data rejected");
        for (int l : labels)
            if (l < 0 || l >= model.n_classes)
                throw std::invalid_argument("train_classifier: label out of range");
    }
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> train_idx, val_idx;
    {
        Rng split_rng(cfg.seed);
        const std::vector<int> perm = split_rng.permutation(n);
        int n_val = int(std::floor(cfg.validation_fraction * n));
        if (n_val >= n) n_val = n - 1;
        for (int i = 0; i < n; ++i)
            (i < n_val ? val_idx : train_idx).push_back(perm[size_t(i)]);
    }

    Rng batch_rng(cfg.seed ^ 0xa02f3c1d5b7e9461ull);
    AdamState opt;
    ClassifierReport report;
    const std::vector<ParamRef> params = model.params();
    std::vector<Tensor> grads;
    for (int step = 0; step < cfg.max_steps; ++step) {
        std::vector<int> idx(size_t(cfg.batch_size), 0);
        for (auto& i : idx) i = train_idx[size_t(batch_rng.uniform_int(int(train_idx.size())))];
        grads.clear();
        for (const auto& p : params) grads.emplace_back(p.tensor->shape);
        std::vector<double> nlls(idx.size());
        std::vector<std::vector<Tensor>> slots(idx.size());
        parallel_for(int(idx.size()), [&](int i) {
            Tape t;
            const auto bd = model.bind(t, batch_example(images, idx[size_t(i)]), false);
            Tensor onehot(Shape{model.n_classes});
            onehot[size_t(labels[size_t(idx[size_t(i)])])] = 1.0;
            const Ref loss = t.scale(t.sum(t.mul(bd.log_probs, t.constant(onehot))), -1.0);
            nlls[size_t(i)] = t.val(loss).item();
            t.backward(loss);
            auto& g = slots[size_t(i)];
            for (const Ref pr : bd.param_refs) g.push_back(t.grad(pr));
        });
        double nll = 0.0;
        for (size_t i = 0; i < idx.size(); ++i) {
            nll += nlls[i];
            for (size_t p = 0; p < params.size(); ++p)
                for (int j = 0; j < grads[p].numel(); ++j)
                    grads[p][size_t(j)] += slots[i][p][size_t(j)] / double(idx.size());
        }
        nll /= double(idx.size());
        if (!std::isfinite(nll))
            throw std::runtime_error("train_classifier: non-finite loss at step " +
                                     std::to_string(step));
        report.steps.push_back({step, nll, nll / 0.69314718055994530942});
        adam_step(params, grads, opt, cfg);
    }

    if (!val_idx.empty()) {
        std::vector<int> hits(val_idx.size(), 0);
        parallel_for(int(val_idx.size()), [&](int i) {
            hits[size_t(i)] =
                model.predict(batch_example(images, val_idx[size_t(i)])) == labels[size_t(val_idx[size_t(i)])]
                    ? 1
                    : 0;
        });
        int ok = 0;
        for (int h : hits) ok += h;
        report.holdout_accuracy = double(ok) / double(val_idx.size());
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace ardx
