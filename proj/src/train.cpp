#include "ardx/train.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "ardx/checkpoint.hpp"
#include "ardx/likelihood.hpp"
#include "ardx/rng.hpp"

namespace ardx {

void OptConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("OptConfig: learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("OptConfig: betas must lie in [0, 1)");
    if (batch_size < 1) throw std::invalid_argument("OptConfig: batch_size must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("OptConfig: max_steps must be >= 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw std::invalid_argument("OptConfig: validation_fraction must lie in [0, 1)");
}

void adam_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
               AdamState& state, const OptConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads length mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor->shape);
            state.v.emplace_back(p.tensor->shape);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: stale state");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& w = *params[p].tensor;
        const Tensor& g = grads[p];
        if (g.shape != w.shape)
            throw std::invalid_argument("adam_step: grad shape mismatch for " + params[p].name);
        Tensor& m = state.m[p];
        Tensor& v = state.v[p];
        for (int i = 0; i < w.numel(); ++i) {
            const double gi = g[size_t(i)];
            m[size_t(i)] = cfg.beta1 * m[size_t(i)] + (1.0 - cfg.beta1) * gi;
            v[size_t(i)] = cfg.beta2 * v[size_t(i)] + (1.0 - cfg.beta2) * gi * gi;
            const double mh = m[size_t(i)] / bc1;
            const double vh = v[size_t(i)] / bc2;
            w[size_t(i)] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
        }
    }
}

double eval_nll(const ArModel& model, const Tensor& dataset) {
    const std::vector<double> lp = logprob_batch(model, dataset);
    double s = 0.0;
    for (double v : lp) s += v;
    return -s / double(lp.size());
}

namespace {

Tensor gather_batch(const Tensor& dataset, const std::vector<int>& idx) {
    Shape s = dataset.shape;
    s[0] = int(idx.size());
    Tensor out(s);
    const size_t m = size_t(numel_of(Shape(s.begin() + 1, s.end())));
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(dataset.data.data() + size_t(idx[i]) * m, m, out.data.data() + i * m);
    return out;
}

// mean NLL over a batch plus parameter gradients, via one batched tape or
// per-example tapes reduced in example order
double nll_and_grads(ArModel& model, const Tensor& batch, std::vector<Tensor>& grads) {
    const std::vector<ParamRef> params = model.params();
    grads.clear();
    for (const auto& p : params) grads.emplace_back(p.tensor->shape);
    const int b = batch.shape[0];
    if (model.batched_graph()) {
        Tape t;
        const auto bound = model.bind(t, batch, false, true);
        const Ref loss = t.scale(t.mean(bound.logprob), -1.0);
        const double nll = t.val(loss).item();
        t.backward(loss);
        for (size_t p = 0; p < params.size(); ++p) grads[p] = t.grad(bound.param_refs[p]);
        return nll;
    }
    std::vector<double> nlls(size_t(b), 0.0);
    std::vector<std::vector<Tensor>> slots{size_t(b)};
    parallel_for(b, [&](int i) {
        Tape t;
        const auto bound = model.bind(t, batch_example(batch, i), false, true);
        const Ref loss = t.scale(bound.logprob, -1.0);
        nlls[size_t(i)] = t.val(loss).item();
        t.backward(loss);
        auto& g = slots[size_t(i)];
        g.reserve(params.size());
        for (const Ref pr : bound.param_refs) g.push_back(t.grad(pr));
    });
    double nll = 0.0;
    for (int i = 0; i < b; ++i) {
        nll += nlls[size_t(i)];
        for (size_t p = 0; p < params.size(); ++p) {
            const Tensor& g = slots[size_t(i)][p];
            for (int j = 0; j < g.numel(); ++j) grads[p][size_t(j)] += g[size_t(j)] / double(b);
        }
    }
    return nll / double(b);
}

void append_trainer_state(NamedArrays& arrays, const AdamState& opt, const Rng::State& rng,
                          int step) {
    arrays.emplace_back("opt.t", Tensor::scalar(double(opt.t)));
    for (size_t p = 0; p < opt.m.size(); ++p) {
        arrays.emplace_back("opt.m" + std::to_string(p), opt.m[p]);
        arrays.emplace_back("opt.v" + std::to_string(p), opt.v[p]);
    }
    Tensor r(Shape{10});
    for (int i = 0; i < 4; ++i) {
        r[size_t(2 * i)] = double(rng.s[i] >> 32);
        r[size_t(2 * i) + 1] = double(rng.s[i] & 0xffffffffull);
    }
    r[8] = rng.has_spare ? 1.0 : 0.0;
    r[9] = rng.spare;
    arrays.emplace_back("trainer.rng", std::move(r));
    arrays.emplace_back("trainer.step", Tensor::scalar(double(step)));
}

} // namespace

TrainReport train_mle(ArModel& model, const Tensor& dataset, const OptConfig& cfg,
                      const std::string& resume_checkpoint) {
    cfg.validate();
    if (dataset.ndim() < 2 || dataset.shape[0] < 1)
        throw std::invalid_argument("train_mle: dataset must be a nonempty batch");
    {
        const Shape want = model.input_shape();
        const Shape got(dataset.shape.begin() + 1, dataset.shape.end());
        if (got != want)
            throw std::invalid_argument("train_mle: dataset examples " + shape_str(got) +
                                        " do not match model input " + shape_str(want));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const int n = dataset.shape[0];

    // held-out split, derived from the seed alone
    std::vector<int> train_idx, val_idx;
    {
        Rng split_rng(cfg.seed);
        const std::vector<int> perm = split_rng.permutation(n);
        int n_val = int(std::floor(cfg.validation_fraction * n));
        if (n_val >= n) n_val = n - 1;
        for (int i = 0; i < n; ++i)
            (i < n_val ? val_idx : train_idx).push_back(perm[size_t(i)]);
    }
    const Tensor val_set = val_idx.empty() ? Tensor{} : gather_batch(dataset, val_idx);

    Rng batch_rng(cfg.seed ^ 0xa02f3c1d5b7e9461ull);
    AdamState opt;
    int start_step = 0;
    if (!resume_checkpoint.empty()) {
        const NamedArrays arrays = load_arrays(resume_checkpoint);
        opt.t = (long long)find_array(arrays, "opt.t").item();
        for (size_t p = 0;; ++p) {
            const std::string suffix = std::to_string(p);
            if (!has_array(arrays, "opt.m" + suffix)) break;
            opt.m.push_back(find_array(arrays, "opt.m" + suffix));
            opt.v.push_back(find_array(arrays, "opt.v" + suffix));
        }
        const Tensor& r = find_array(arrays, "trainer.rng");
        Rng::State st{};
        for (int i = 0; i < 4; ++i)
            st.s[i] = (uint64_t(r[size_t(2 * i)]) << 32) | uint64_t(r[size_t(2 * i) + 1]);
        st.has_spare = r[8] != 0.0;
        st.spare = r[9];
        batch_rng.set_state(st);
        start_step = int(find_array(arrays, "trainer.step").item());
    }

    TrainReport report;
    auto save_ckpt = [&](int step, bool final_one) {
        if (cfg.checkpoint_dir.empty()) return;
        NamedArrays arrays = model.to_arrays();
        append_trainer_state(arrays, opt, batch_rng.state(), step);
        const std::string path = cfg.checkpoint_dir + "/" + cfg.checkpoint_prefix +
                                 (final_one ? "_final" : "_step" + std::to_string(step)) + ".ardx";
        save_arrays(path, arrays);
        report.checkpoints.push_back(path);
        if (final_one) report.final_checkpoint = path;
        if (!val_idx.empty()) {
            const double v = eval_nll(model, val_set);
            report.val_steps.push_back({step, v, bits_per_dim(v, model.dims())});
        }
    };

    std::vector<int> idx(size_t(cfg.batch_size), 0);
    std::vector<Tensor> grads;
    for (int step = start_step; step < cfg.max_steps; ++step) {
        for (auto& i : idx) i = train_idx[size_t(batch_rng.uniform_int(int(train_idx.size())))];
        const Tensor batch = gather_batch(dataset, idx);
        const double nll = nll_and_grads(model, batch, grads);
        if (!std::isfinite(nll))
            throw std::runtime_error("train_mle: non-finite loss at step " + std::to_string(step));
        report.steps.push_back({step, nll, bits_per_dim(nll, model.dims())});
        adam_step(model.params(), grads, opt, cfg);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.max_steps)
            save_ckpt(step + 1, false);
    }
    save_ckpt(cfg.max_steps, true);
    if (!val_idx.empty() && !report.val_steps.empty())
        report.final_val_nll_bits = report.val_steps.back().bits_per_dim;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace ardx
