#include "ardx/sample_opt.hpp"

#include <cmath>
#include <stdexcept>

#include "ardx/likelihood.hpp"
#include "ardx/rng.hpp"

namespace ardx {

namespace {

// per-example NLL (nats) and input gradient of -log p for a batch
void nll_and_input_grad(const ArModel& model, const Tensor& batch, std::vector<double>& nll,
                        Tensor& grad) {
    const int n = batch.shape[0];
    nll.assign(size_t(n), 0.0);
    grad = Tensor(batch.shape);
    if (model.batched_graph()) {
        Tape t;
        const auto bound = model.bind(t, batch, true, false);
        const Ref loss = t.scale(t.sum(bound.logprob), -1.0);
        const Tensor& lp = t.val(bound.logprob);
        for (int i = 0; i < n; ++i) nll[size_t(i)] = -lp[size_t(i)];
        t.backward(loss);
        grad = t.grad(bound.x);
        return;
    }
    const size_t m = grad.data.size() / size_t(n);
    parallel_for(n, [&](int i) {
        Tape t;
        const auto bound = model.bind(t, batch_example(batch, i), true, false);
        const Ref loss = t.scale(bound.logprob, -1.0);
        nll[size_t(i)] = t.val(loss).item();
        t.backward(loss);
        const Tensor& g = t.grad(bound.x);
        std::copy(g.data.begin(), g.data.end(), grad.data.begin() + size_t(i) * m);
    });
}

std::vector<double> per_example_norms(const Tensor& grad) {
    const int n = grad.shape[0];
    const size_t m = grad.data.size() / size_t(n);
    std::vector<double> out(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < m; ++j) {
            const double v = grad.data[size_t(i) * m + j];
            s += v * v;
        }
        out[size_t(i)] = std::sqrt(s);
    }
    return out;
}

} // namespace

OptimizeResult optimize_samples(const ArModel& model, const Tensor& x0, int steps, double lr,
                                int log_every) {
    if (steps < 0) throw std::invalid_argument("optimize_samples: steps must be >= 0");
    if (log_every < 1) throw std::invalid_argument("optimize_samples: log_every must be >= 1");
    if (x0.ndim() < 2) throw std::invalid_argument("optimize_samples: x0 must be a batch");
    const int dims = model.dims();
    const BinSpec& bins = model.bins();

    OptimizeResult res;
    Tensor x = x0;
    std::vector<double> nll;
    Tensor grad;
    auto log_point = [&](int iter) {
        TrajectoryPoint p;
        p.iteration = iter;
        p.batch = x;
        p.grad_norm = per_example_norms(grad);
        p.nll_bits.reserve(nll.size());
        for (double v : nll) p.nll_bits.push_back(bits_per_dim(v, dims));
        res.trajectory.push_back(std::move(p));
    };

    for (int iter = 0; iter <= steps; ++iter) {
        nll_and_input_grad(model, x, nll, grad);
        if (!grad.all_finite()) {
            res.aborted = true;
            res.aborted_at = iter;
            break;
        }
        if (iter % log_every == 0 || iter == steps) log_point(iter);
        if (iter == steps) break;
        for (size_t j = 0; j < x.data.size(); ++j) {
            double v = x.data[j] - lr * grad.data[j];
            if (v < bins.lo) v = bins.lo;
            if (v > bins.hi) v = bins.hi;
            x.data[j] = v;
        }
    }
    res.final_batch = res.aborted && !res.trajectory.empty() ? res.trajectory.back().batch : x;
    return res;
}

GradField gradient_field(const ArModel& model, double x1_lo, double x1_hi, double x2_lo,
                         double x2_hi, int res1, int res2) {
    if (model.dims() != 2)
        throw std::invalid_argument("gradient_field: model input dimension must be 2");
    if (res1 < 2 || res2 < 2)
        throw std::invalid_argument("gradient_field: resolution must be >= 2 per axis");
    GradField f;
    f.x1_lo = x1_lo;
    f.x1_hi = x1_hi;
    f.x2_lo = x2_lo;
    f.x2_hi = x2_hi;
    f.res1 = res1;
    f.res2 = res2;

    Tensor points(Shape{res1 * res2, 2});
    for (int i2 = 0; i2 < res2; ++i2)
        for (int i1 = 0; i1 < res1; ++i1) {
            const size_t row = size_t(i2) * res1 + i1;
            points[row * 2] = f.x1_at(i1);
            points[row * 2 + 1] = f.x2_at(i2);
        }
    std::vector<double> nll;
    Tensor grad;
    nll_and_input_grad(model, points, nll, grad);
    f.norms = per_example_norms(grad);
    return f;
}

ProbeKind probe_kind_from_string(const std::string& s) {
    if (s == "digits") return ProbeKind::digits;
    if (s == "noise") return ProbeKind::noise;
    if (s == "black") return ProbeKind::black;
    if (s == "gray") return ProbeKind::gray;
    if (s == "white") return ProbeKind::white;
    throw std::invalid_argument("unknown probe kind: " + s);
}

Tensor probe_start_set(ProbeKind kind, int n, const Shape& image_shape, const BinSpec& bins,
                       uint64_t seed, const Tensor* digit_source) {
    if (n < 1) throw std::invalid_argument("probe_start_set: n must be >= 1");
    Shape s;
    s.push_back(n);
    s.insert(s.end(), image_shape.begin(), image_shape.end());
    Tensor out(s);
    Rng rng(seed);
    switch (kind) {
        case ProbeKind::black:
            for (auto& v : out.data) v = bins.lo;
            break;
        case ProbeKind::white:
            for (auto& v : out.data) v = bins.hi;
            break;
        case ProbeKind::gray:
            for (auto& v : out.data) v = bins.center(bins.count / 2);
            break;
        case ProbeKind::noise:
            for (auto& v : out.data) v = bins.center(rng.uniform_int(bins.count));
            break;
        case ProbeKind::digits: {
            if (!digit_source || digit_source->ndim() < 2)
                throw std::invalid_argument("probe_start_set: digits kind needs a source dataset");
            const Shape got(digit_source->shape.begin() + 1, digit_source->shape.end());
            if (got != image_shape)
                throw std::invalid_argument("probe_start_set: source examples " + shape_str(got) +
                                            " do not match requested " + shape_str(image_shape));
            const int avail = digit_source->shape[0];
            if (avail < n)
                throw std::invalid_argument("probe_start_set: source has too few examples");
            const size_t m = out.data.size() / size_t(n);
            for (int i = 0; i < n; ++i) {
                const int pick = rng.uniform_int(avail);
                std::copy_n(digit_source->data.data() + size_t(pick) * m, m,
                            out.data.data() + size_t(i) * m);
            }
            break;
        }
    }
    return out;
}

} // namespace ardx
