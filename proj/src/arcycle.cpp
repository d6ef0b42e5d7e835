#include "ardx/arcycle.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "ardx/emit.hpp"
#include "ardx/likelihood.hpp"
#include "ardx/rng.hpp"
#include "ardx/train.hpp"

namespace ardx {

Generator Generator::create(int in_channels, int out_channels, int height, int width, int hidden,
                            int n_layers, const BinSpec& bins, uint64_t seed) {
    if (n_layers < 2) throw std::invalid_argument("Generator: need at least 2 layers");
    Generator g;
    g.in_channels = in_channels;
    g.out_channels = out_channels;
    g.height = height;
    g.width = width;
    g.hidden = hidden;
    g.n_layers = n_layers;
    g.bins = bins;
    Rng rng(seed);
    for (int l = 0; l < n_layers; ++l) {
        const int cin = l == 0 ? in_channels : hidden;
        const int cout = l == n_layers - 1 ? out_channels : hidden;
        Tensor w(Shape{cout, cin, 3, 3});
        const double s = (l == n_layers - 1 ? 0.1 : 1.0) / std::sqrt(double(cin * 9));
        for (auto& v : w.data) v = rng.normal() * s;
        g.w.push_back(std::move(w));
        g.b.push_back(Tensor(Shape{cout}));
    }
    return g;
}

std::vector<ParamRef> Generator::params() {
    std::vector<ParamRef> out;
    for (size_t l = 0; l < w.size(); ++l) {
        out.push_back({"w" + std::to_string(l), &w[l]});
        out.push_back({"b" + std::to_string(l), &b[l]});
    }
    return out;
}

Ref Generator::apply(Tape& t, Ref x, std::vector<Ref>* param_refs, bool params_require_grad) const {
    if (t.val(x).shape != Shape{in_channels, height, width})
        throw std::invalid_argument("Generator: input must be " +
                                    shape_str(Shape{in_channels, height, width}) + ", got " +
                                    shape_str(t.val(x).shape));
    Ref h = x;
    for (int l = 0; l < n_layers; ++l) {
        const Ref wr = t.leaf(w[size_t(l)], params_require_grad);
        const Ref br = t.leaf(b[size_t(l)], params_require_grad);
        if (param_refs) {
            param_refs->push_back(wr);
            param_refs->push_back(br);
        }
        h = t.conv2d(h, wr, br, Tensor{}, 1, 1);
        h = t.tanh(h);
        if (l == n_layers - 1) {
            // squash [-1,1] onto the bin range
            const double half = (bins.hi - bins.lo) * 0.5;
            h = t.add(t.scale(h, half), t.constant((bins.hi + bins.lo) * 0.5));
        }
    }
    return h;
}

Tensor Generator::apply_detached(const Tensor& x) const {
    Tape t;
    return t.val(apply(t, t.constant(x), nullptr, false));
}

NamedArrays Generator::to_arrays() const {
    NamedArrays arrays;
    arrays.emplace_back("meta.kind", Tensor::scalar(3.0));
    arrays.emplace_back("meta.bins", Tensor(Shape{3}, {bins.lo, bins.hi, double(bins.count)}));
    arrays.emplace_back("meta.geom",
                        Tensor(Shape{6}, {double(in_channels), double(out_channels),
                                          double(height), double(width), double(hidden),
                                          double(n_layers)}));
    for (size_t l = 0; l < w.size(); ++l) {
        arrays.emplace_back("w" + std::to_string(l), w[l]);
        arrays.emplace_back("b" + std::to_string(l), b[l]);
    }
    return arrays;
}

Generator Generator::load_file(const std::string& path) {
    const NamedArrays arrays = load_arrays(path);
    if (find_array(arrays, "meta.kind").item() != 3.0)
        throw std::runtime_error("checkpoint " + path + " is not a generator");
    Generator g;
    const Tensor& bn = find_array(arrays, "meta.bins");
    g.bins = BinSpec(bn[0], bn[1], int(bn[2]));
    const Tensor& ge = find_array(arrays, "meta.geom");
    g.in_channels = int(ge[0]);
    g.out_channels = int(ge[1]);
    g.height = int(ge[2]);
    g.width = int(ge[3]);
    g.hidden = int(ge[4]);
    g.n_layers = int(ge[5]);
    for (size_t l = 0;; ++l) {
        const std::string suffix = std::to_string(l);
        if (!has_array(arrays, "w" + suffix)) break;
        g.w.push_back(find_array(arrays, "w" + suffix));
        g.b.push_back(find_array(arrays, "b" + suffix));
    }
    return g;
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "nll_only") return Ablation::nll_only;
    if (s == "cyc_only") return Ablation::cyc_only;
    if (s == "blur") return Ablation::blur;
    throw std::invalid_argument("unknown ablation: " + s);
}

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::nll_only: return "nll_only";
        case Ablation::cyc_only: return "cyc_only";
        case Ablation::blur: return "blur";
    }
    return "?";
}

void ArCycleConfig::validate() const {
    if (beta < 0.0) throw std::invalid_argument("ArCycleConfig: beta must be >= 0");
    if (ablation == Ablation::blur && !(blur_sigma > 0.0))
        throw std::invalid_argument("ArCycleConfig: blur ablation needs blur_sigma > 0");
    if (snapshot_every < 1) throw std::invalid_argument("ArCycleConfig: snapshot_every must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("ArCycleConfig: batch_size must be >= 1");
    if (max_steps < 0 || pretrain_steps < 0)
        throw std::invalid_argument("ArCycleConfig: step counts must be >= 0");
}

Ref gaussian_blur_graph(Tape& t, Ref image, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
    const Shape& s = t.val(image).shape;
    if (s.size() != 3) throw std::invalid_argument("gaussian_blur: expects [C,H,W]");
    const int c = s[0];
    const int r = int(std::ceil(3.0 * sigma));
    std::vector<double> k1(static_cast<size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k1[size_t(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k1[size_t(i + r)];
    }
    for (auto& v : k1) v /= sum;

    // depthwise separable pass: reflect pad, then [k,1] and [1,k] kernels
    Tensor wv(Shape{c, c, 2 * r + 1, 1});
    Tensor wh(Shape{c, c, 1, 2 * r + 1});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < 2 * r + 1; ++i) {
            wv[((size_t(ci) * c + ci) * (2 * r + 1) + i) * 1] = k1[size_t(i)];
            wh[(size_t(ci) * c + ci) * (2 * r + 1) + i] = k1[size_t(i)];
        }
    Ref h = t.reflect_pad2d(image, r);
    h = t.conv2d(h, t.constant(wv), Ref{}, Tensor{}, 0, 0);
    h = t.conv2d(h, t.constant(wh), Ref{}, Tensor{}, 0, 0);
    return h;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    Tape t;
    return t.val(gaussian_blur_graph(t, t.constant(image), sigma));
}

namespace {

// per-pixel L1 between a tape node and a constant target
Ref l1_mean(Tape& t, Ref a, Ref target) { return t.mean(t.abs(t.sub(a, target))); }

struct ExampleGraph {
    double nll_y_nats = 0.0; // -log P_Y(translate(x))
    double nll_x_nats = 0.0; // -log P_X(translate(y))
    double cyc = 0.0;        // per-pixel
};

// builds the per-example ARCycle graph and backpropagates the configured
// loss; gradients for whichever generator was bound differentiable land in
// `grads` in params() order
ExampleGraph run_example(const Generator& F, const Generator& G, const ArModel& P_X,
                         const ArModel& P_Y, const Tensor& x, const Tensor& y,
                         const ArCycleConfig& cfg, double beta, bool grad_f, bool grad_g,
                         std::vector<Tensor>* f_grads, std::vector<Tensor>* g_grads) {
    Tape t;
    const Ref xr = t.constant(x);
    const Ref yr = t.constant(y);
    std::vector<Ref> f_refs, g_refs;
    const Ref fx = F.apply(t, xr, &f_refs, grad_f);
    const Ref gy = G.apply(t, yr, &g_refs, grad_g);

    const bool with_nll = cfg.ablation != Ablation::cyc_only;
    const bool with_cyc = cfg.ablation != Ablation::nll_only;

    Ref loss{};
    ExampleGraph out;
    // NLL terms are computed (for the logs) even when they do not feed the
    // loss; the frozen models are never bound differentiable
    const Ref nll_y_operand =
        cfg.ablation == Ablation::blur ? gaussian_blur_graph(t, fx, cfg.blur_sigma) : fx;
    const Ref nll_x_operand =
        cfg.ablation == Ablation::blur ? gaussian_blur_graph(t, gy, cfg.blur_sigma) : gy;
    const Ref lp_y = P_Y.bind_ref(t, nll_y_operand, false).logprob;
    const Ref lp_x = P_X.bind_ref(t, nll_x_operand, false).logprob;
    out.nll_y_nats = -t.val(lp_y).item();
    out.nll_x_nats = -t.val(lp_x).item();
    if (with_nll) loss = t.add(t.scale(lp_y, -1.0), t.scale(lp_x, -1.0));

    const Ref gfx = G.apply(t, fx, &g_refs, grad_g);
    const Ref fgy = F.apply(t, gy, &f_refs, grad_f);
    const Ref cyc = t.add(l1_mean(t, gfx, xr), l1_mean(t, fgy, yr));
    out.cyc = t.val(cyc).item();
    if (with_cyc) {
        const Ref scaled = cfg.ablation == Ablation::cyc_only ? cyc : t.scale(cyc, beta);
        loss = loss.valid() ? t.add(loss, scaled) : scaled;
    }

    if (!std::isfinite(t.val(loss).item()))
        throw std::runtime_error("arcycle: non-finite loss (nll_y=" +
                                 std::to_string(out.nll_y_nats) + ", nll_x=" +
                                 std::to_string(out.nll_x_nats) + ", cyc=" +
                                 std::to_string(out.cyc) + ")");
    if (grad_f || grad_g) {
        t.backward(loss);
        auto collect = [&](const std::vector<Ref>& refs, const Generator& gen,
                           std::vector<Tensor>* dst) {
            if (!dst) return;
            if (dst->empty())
                for (const auto& w : gen.w) {
                    dst->emplace_back(w.shape);
                    dst->emplace_back(Shape{w.shape[0]});
                }
            // two apply() passes bound each parameter twice; both leaves carry
            // gradients of the same loss and accumulate here
            for (size_t i = 0; i < refs.size(); ++i) {
                const Tensor& g = t.grad(refs[i]);
                Tensor& acc = (*dst)[i % dst->size()];
                for (int j = 0; j < g.numel(); ++j) acc[size_t(j)] += g[size_t(j)];
            }
        };
        if (grad_f) collect(f_refs, F, f_grads);
        if (grad_g) collect(g_refs, G, g_grads);
    }
    return out;
}

} // namespace

double cycle_loss_fn(const ImageMap& F, const ImageMap& G, const Tensor& batch_x,
                     const Tensor& batch_y) {
    if (batch_x.ndim() != 4 || batch_y.ndim() != 4)
        throw std::invalid_argument("cycle_loss: batches must be [N,C,H,W]");
    const int nx = batch_x.shape[0], ny = batch_y.shape[0];
    double term_x = 0.0, term_y = 0.0;
    for (int i = 0; i < nx; ++i) {
        const Tensor x = batch_example(batch_x, i);
        const Tensor rec = G(F(x));
        if (rec.shape != x.shape)
            throw std::invalid_argument("cycle_loss: round trip changed the shape");
        double acc = 0.0;
        for (int j = 0; j < x.numel(); ++j) acc += std::abs(rec[size_t(j)] - x[size_t(j)]);
        term_x += acc / x.numel();
    }
    for (int i = 0; i < ny; ++i) {
        const Tensor y = batch_example(batch_y, i);
        const Tensor rec = F(G(y));
        if (rec.shape != y.shape)
            throw std::invalid_argument("cycle_loss: round trip changed the shape");
        double acc = 0.0;
        for (int j = 0; j < y.numel(); ++j) acc += std::abs(rec[size_t(j)] - y[size_t(j)]);
        term_y += acc / y.numel();
    }
    return term_x / nx + term_y / ny;
}

double cycle_loss(const Generator& F, const Generator& G, const Tensor& batch_x,
                  const Tensor& batch_y) {
    return cycle_loss_fn([&](const Tensor& v) { return F.apply_detached(v); },
                         [&](const Tensor& v) { return G.apply_detached(v); }, batch_x, batch_y);
}

double nll_loss_fn(const ArModel& P, const ImageMap& F, const Tensor& batch_x) {
    if (batch_x.ndim() != 4) throw std::invalid_argument("nll_loss: batch must be [N,C,H,W]");
    const int n = batch_x.shape[0];
    std::vector<double> vals(static_cast<size_t>(n), 0.0);
    parallel_for(n, [&](int i) {
        Tape t;
        const Ref fx = t.constant(F(batch_example(batch_x, i)));
        vals[size_t(i)] = -t.val(P.bind_ref(t, fx, false).logprob).item();
    });
    double s = 0.0;
    for (double v : vals) s += v;
    return s / n;
}

double nll_loss(const ArModel& P, const Generator& F, const Tensor& batch_x) {
    return nll_loss_fn(P, [&](const Tensor& v) { return F.apply_detached(v); }, batch_x);
}

double arcycle_total(const Generator& F, const Generator& G, const ArModel& P_X,
                     const ArModel& P_Y, const Tensor& batch_x, const Tensor& batch_y,
                     double beta) {
    return nll_loss(P_Y, F, batch_x) + nll_loss(P_X, G, batch_y) +
           beta * cycle_loss(F, G, batch_x, batch_y);
}

ArCycleReport train_arcycle(Generator& F, Generator& G, const ArModel& P_X, const ArModel& P_Y,
                            const Dataset& X, const Dataset& Y, const ArCycleConfig& cfg) {
    cfg.validate();
    if (X.size() < 1 || Y.size() < 1) throw std::invalid_argument("arcycle: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const int dims_x = int(numel_of(Shape(X.examples.shape.begin() + 1, X.examples.shape.end())));
    const int dims_y = int(numel_of(Shape(Y.examples.shape.begin() + 1, Y.examples.shape.end())));

    Rng rng(cfg.seed);
    ArCycleReport report;

    OptConfig opt_cfg;
    opt_cfg.learning_rate = cfg.learning_rate;
    opt_cfg.beta1 = cfg.beta1;
    opt_cfg.beta2 = cfg.beta2;
    opt_cfg.epsilon = cfg.epsilon;
    opt_cfg.batch_size = cfg.batch_size;
    AdamState f_opt, g_opt, f_pre_opt, g_pre_opt;

    // supervised warmup on index-paired examples
    if (cfg.pretrain_steps > 0) {
        if (X.size() != Y.size())
            throw std::invalid_argument("arcycle: pretraining needs index-paired datasets");
        for (int step = 0; step < cfg.pretrain_steps; ++step) {
            std::vector<int> idx(size_t(cfg.batch_size), 0);
            for (auto& i : idx) i = rng.uniform_int(X.size());
            std::vector<Tensor> f_grads, g_grads;
            std::vector<std::vector<Tensor>> f_slots{idx.size()}, g_slots{idx.size()};
            parallel_for(int(idx.size()), [&](int i) {
                const Tensor x = batch_example(X.examples, idx[size_t(i)]);
                const Tensor y = batch_example(Y.examples, idx[size_t(i)]);
                {
                    Tape t;
                    std::vector<Ref> refs;
                    const Ref fx = F.apply(t, t.constant(x), &refs, true);
                    const Ref loss = l1_mean(t, fx, t.constant(y));
                    t.backward(loss);
                    for (const Ref r : refs) f_slots[size_t(i)].push_back(t.grad(r));
                }
                {
                    Tape t;
                    std::vector<Ref> refs;
                    const Ref gy = G.apply(t, t.constant(y), &refs, true);
                    const Ref loss = l1_mean(t, gy, t.constant(x));
                    t.backward(loss);
                    for (const Ref r : refs) g_slots[size_t(i)].push_back(t.grad(r));
                }
            });
            auto reduce = [&](std::vector<std::vector<Tensor>>& slots, std::vector<Tensor>& out) {
                out.clear();
                for (const Tensor& g : slots[0]) out.emplace_back(g.shape);
                for (size_t i = 0; i < slots.size(); ++i)
                    for (size_t p = 0; p < out.size(); ++p)
                        for (int j = 0; j < out[p].numel(); ++j)
                            out[p][size_t(j)] += slots[i][p][size_t(j)] / double(slots.size());
            };
            reduce(f_slots, f_grads);
            reduce(g_slots, g_grads);
            adam_step(F.params(), f_grads, f_pre_opt, opt_cfg);
            adam_step(G.params(), g_grads, g_pre_opt, opt_cfg);
        }
    }

    double beta = cfg.beta;
    auto take_snapshot = [&](int iter) {
        ArCycleSnapshot snap;
        snap.iteration = iter;
        const int rows = std::min({cfg.snapshot_rows, X.size(), Y.size()});
        std::vector<Tensor> xs, fxs, gfxs, ys, gys, fgys;
        for (int i = 0; i < rows; ++i) {
            const Tensor x = batch_example(X.examples, i);
            const Tensor y = batch_example(Y.examples, i);
            const Tensor fx = F.apply_detached(x);
            const Tensor gy = G.apply_detached(y);
            xs.push_back(x);
            fxs.push_back(fx);
            gfxs.push_back(G.apply_detached(fx));
            ys.push_back(y);
            gys.push_back(gy);
            fgys.push_back(F.apply_detached(gy));
        }
        snap.x = batch_stack(xs);
        snap.fx = batch_stack(fxs);
        snap.gfx = batch_stack(gfxs);
        snap.y = batch_stack(ys);
        snap.gy = batch_stack(gys);
        snap.fgy = batch_stack(fgys);
        if (!cfg.out_dir.empty()) {
            const std::string tag = std::to_string(iter);
            snap.f_checkpoint = cfg.out_dir + "/gen_f_iter" + tag + ".ardx";
            snap.g_checkpoint = cfg.out_dir + "/gen_g_iter" + tag + ".ardx";
            F.save(snap.f_checkpoint);
            G.save(snap.g_checkpoint);
        }
        report.snapshots.push_back(std::move(snap));
    };

    take_snapshot(0);
    for (int iter = 0; iter < cfg.max_steps; ++iter) {
        std::vector<int> ix(size_t(cfg.batch_size), 0), iy(size_t(cfg.batch_size), 0);
        for (auto& i : ix) i = rng.uniform_int(X.size());
        for (auto& i : iy) i = rng.uniform_int(Y.size());

        // beta balancing, once, from the first batch's raw magnitudes
        if (iter == 0 && cfg.auto_beta && cfg.ablation != Ablation::cyc_only) {
            double nll0 = 0.0, cyc0 = 0.0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                const ExampleGraph eg = run_example(
                    F, G, P_X, P_Y, batch_example(X.examples, ix[size_t(i)]),
                    batch_example(Y.examples, iy[size_t(i)]), cfg, 0.0, false, false, nullptr,
                    nullptr);
                nll0 += eg.nll_x_nats + eg.nll_y_nats;
                cyc0 += eg.cyc;
            }
            beta = cyc0 > 0.0 ? nll0 / cyc0 : cfg.beta;
        }

        const bool update_f = iter % 2 == 0;
        std::vector<Tensor> f_grads, g_grads;
        std::vector<ExampleGraph> stats{size_t(cfg.batch_size)};
        std::vector<std::vector<Tensor>> slots{size_t(cfg.batch_size)};
        parallel_for(cfg.batch_size, [&](int i) {
            std::vector<Tensor> local_f, local_g;
            stats[size_t(i)] = run_example(F, G, P_X, P_Y,
                                           batch_example(X.examples, ix[size_t(i)]),
                                           batch_example(Y.examples, iy[size_t(i)]), cfg, beta,
                                           update_f, !update_f,
                                           update_f ? &local_f : nullptr,
                                           update_f ? nullptr : &local_g);
            slots[size_t(i)] = update_f ? std::move(local_f) : std::move(local_g);
        });
        std::vector<Tensor>& grads = update_f ? f_grads : g_grads;
        for (const Tensor& g : slots[0]) grads.emplace_back(g.shape);
        for (int i = 0; i < cfg.batch_size; ++i)
            for (size_t p = 0; p < grads.size(); ++p)
                for (int j = 0; j < grads[p].numel(); ++j)
                    grads[p][size_t(j)] += slots[size_t(i)][p][size_t(j)] / double(cfg.batch_size);

        ArCycleStat st;
        st.iteration = iter;
        for (const auto& eg : stats) {
            st.l_cyc += eg.cyc / cfg.batch_size;
            st.nll_x_bits += bits_per_dim(eg.nll_x_nats, dims_x) / cfg.batch_size;
            st.nll_y_bits += bits_per_dim(eg.nll_y_nats, dims_y) / cfg.batch_size;
        }
        report.steps.push_back(st);

        if (update_f)
            adam_step(F.params(), f_grads, f_opt, opt_cfg);
        else
            adam_step(G.params(), g_grads, g_opt, opt_cfg);

        if ((iter + 1) % cfg.snapshot_every == 0 || iter + 1 == cfg.max_steps)
            take_snapshot(iter + 1);
    }
    report.beta_used = beta;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace ardx
