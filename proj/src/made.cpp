#include "ardx/made.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ardx/checkpoint.hpp"
#include "ardx/rng.hpp"

namespace ardx {

static std::vector<int> rank_from_ordering(const std::vector<int>& ordering) {
    const int d = int(ordering.size());
    std::vector<int> rank(size_t(d), -1);
    for (int pos = 0; pos < d; ++pos) {
        const int dim = ordering[size_t(pos)];
        if (dim < 0 || dim >= d || rank[size_t(dim)] != -1)
            throw std::invalid_argument("MADE: ordering is not a permutation");
        rank[size_t(dim)] = pos;
    }
    return rank;
}

std::vector<Tensor> build_made_masks(const std::vector<int>& layer_sizes,
                                     const std::vector<int>& ordering, uint64_t seed) {
    if (layer_sizes.size() < 2)
        throw std::invalid_argument("build_made_masks: need at least input and output layers");
    const int d = layer_sizes.front();
    if (layer_sizes.back() != d)
        throw std::invalid_argument("build_made_masks: output group count must equal D");
    const std::vector<int> rank = rank_from_ordering(ordering);
    if (int(ordering.size()) != d)
        throw std::invalid_argument("build_made_masks: ordering size must equal D");

    Rng rng(seed);
    std::vector<int> m_prev(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) m_prev[size_t(j)] = rank[size_t(j)];

    std::vector<Tensor> masks;
    const int n_hidden = int(layer_sizes.size()) - 2;
    for (int l = 0; l < n_hidden; ++l) {
        const int in = layer_sizes[size_t(l)];
        const int out = layer_sizes[size_t(l) + 1];
        const int lo = *std::min_element(m_prev.begin(), m_prev.end());
        std::vector<int> m_cur(static_cast<size_t>(out));
        for (int u = 0; u < out; ++u) m_cur[size_t(u)] = lo + rng.uniform_int(d - lo);
        Tensor mask(Shape{in, out});
        for (int i = 0; i < in; ++i)
            for (int o = 0; o < out; ++o)
                mask[size_t(i) * out + o] = m_cur[size_t(o)] >= m_prev[size_t(i)] ? 1.0 : 0.0;
        masks.push_back(std::move(mask));
        m_prev = std::move(m_cur);
    }
    // output group mask: strict inequality
    const int in = layer_sizes[size_t(layer_sizes.size() - 2)];
    Tensor out_mask(Shape{in, d});
    for (int i = 0; i < in; ++i)
        for (int dim = 0; dim < d; ++dim)
            out_mask[size_t(i) * d + dim] = rank[size_t(dim)] > m_prev[size_t(i)] ? 1.0 : 0.0;
    masks.push_back(std::move(out_mask));
    return masks;
}

MadeModel MadeModel::create(const BinSpec& bins, std::vector<int> hidden,
                            std::vector<int> ordering, uint64_t seed) {
    MadeModel m;
    m.bins_ = bins;
    m.dims_ = int(ordering.size());
    m.ordering = std::move(ordering);
    m.rank_ = rank_from_ordering(m.ordering);

    std::vector<int> layer_sizes;
    layer_sizes.push_back(m.dims_);
    for (int h : hidden) layer_sizes.push_back(h);
    layer_sizes.push_back(m.dims_);
    std::vector<Tensor> group_masks = build_made_masks(layer_sizes, m.ordering, seed);

    Rng rng(seed + 0x9e3779b97f4a7c15ull);
    const int n_layers = int(group_masks.size());
    for (int l = 0; l < n_layers; ++l) {
        const bool final_layer = l == n_layers - 1;
        const int in = group_masks[size_t(l)].shape[0];
        const int group_out = group_masks[size_t(l)].shape[1];
        const int out = final_layer ? 2 * m.dims_ : group_out;
        Tensor w(Shape{in, out});
        if (!final_layer) {
            const double s = 1.0 / std::sqrt(double(in));
            for (auto& v : w.data) v = rng.normal() * s;
        }
        Tensor mask(Shape{in, out});
        if (final_layer) {
            // duplicate the group mask for the mu and log-sigma columns
            for (int i = 0; i < in; ++i)
                for (int dim = 0; dim < m.dims_; ++dim) {
                    const double mv = group_masks[size_t(l)][size_t(i) * m.dims_ + dim];
                    mask[size_t(i) * out + dim] = mv;
                    mask[size_t(i) * out + m.dims_ + dim] = mv;
                }
        } else {
            mask = group_masks[size_t(l)];
        }
        m.weights.push_back(std::move(w));
        m.biases.push_back(Tensor(Shape{out}));
        m.masks.push_back(std::move(mask));
    }
    return m;
}

std::vector<ParamRef> MadeModel::params() {
    std::vector<ParamRef> out;
    for (size_t l = 0; l < weights.size(); ++l) {
        out.push_back({"w" + std::to_string(l), &weights[l]});
        out.push_back({"b" + std::to_string(l), &biases[l]});
    }
    return out;
}

MadeModel::HeadBound MadeModel::bind_heads(Tape& t, Ref x, bool params_require_grad) const {
    const Shape& xs = t.val(x).shape;
    if (xs.size() != 2 || xs[1] != dims_)
        throw std::invalid_argument("MADE: input must be [B " + std::to_string(dims_) + "], got " +
                                    shape_str(xs));
    const int b = xs[0];
    HeadBound hb;
    hb.bound.x = x;
    Ref h = hb.bound.x;
    for (size_t l = 0; l < weights.size(); ++l) {
        const Ref w = t.leaf(weights[l], params_require_grad);
        const Ref bias = t.leaf(biases[l], params_require_grad);
        hb.bound.param_refs.push_back(w);
        hb.bound.param_refs.push_back(bias);
        h = t.add(t.masked_matmul(h, w, masks[l]), bias);
        if (l + 1 < weights.size()) h = t.tanh(h);
    }
    hb.mu = t.slice(h, {0, 0}, {b, dims_}, {1, 1});
    hb.log_sigma = t.slice(h, {0, dims_}, {b, 2 * dims_}, {1, 1});
    Ref lp = t.gaussian_bin_logpmf(hb.bound.x, hb.mu, hb.log_sigma, bins_, head_floor);
    Ref per_example = t.sum_last(lp);
    if (joint_floor) per_example = t.max_const(per_example, *joint_floor);
    hb.bound.logprob = per_example;
    return hb;
}

ArModel::Bound MadeModel::bind_ref(Tape& t, Ref x, bool params_require_grad) const {
    return bind_heads(t, x, params_require_grad).bound;
}

Tensor MadeModel::sample(int n, uint64_t seed) const {
    if (n < 1) throw std::invalid_argument("MADE sample: need n >= 1");
    Rng rng(seed);
    Tensor xs(Shape{n, dims_});
    for (int r = 0; r < dims_; ++r) {
        const int dim = ordering[size_t(r)];
        Tape t;
        const HeadBound hb = bind_heads(t, t.constant(xs), false);
        const Tensor& mu = t.val(hb.mu);
        const Tensor& ls = t.val(hb.log_sigma);
        for (int i = 0; i < n; ++i) {
            const GaussianParams p{mu[size_t(i) * dims_ + dim], ls[size_t(i) * dims_ + dim]};
            const std::vector<double> pmf = gaussian_bin_pmf(p, bins_, head_floor);
            double total = 0.0;
            for (double v : pmf) total += v;
            const double u = rng.uniform01() * total;
            double cum = 0.0;
            int pick = bins_.count - 1;
            for (int k = 0; k < bins_.count; ++k) {
                cum += pmf[size_t(k)];
                if (u < cum) {
                    pick = k;
                    break;
                }
            }
            xs[size_t(i) * dims_ + dim] = bins_.center(pick);
        }
    }
    return xs;
}

NamedArrays MadeModel::to_arrays() const {
    NamedArrays arrays;
    arrays.emplace_back("meta.kind", Tensor::scalar(0.0));
    arrays.emplace_back("meta.bins", Tensor(Shape{3}, {bins_.lo, bins_.hi, double(bins_.count)}));
    arrays.emplace_back("meta.head_floor", Tensor::scalar(head_floor));
    arrays.emplace_back("meta.joint_floor",
                        Tensor(Shape{2}, {joint_floor ? 1.0 : 0.0, joint_floor.value_or(0.0)}));
    Tensor ord(Shape{dims_});
    for (int i = 0; i < dims_; ++i) ord[size_t(i)] = double(ordering[size_t(i)]);
    arrays.emplace_back("meta.ordering", std::move(ord));
    for (size_t l = 0; l < weights.size(); ++l) {
        arrays.emplace_back("w" + std::to_string(l), weights[l]);
        arrays.emplace_back("b" + std::to_string(l), biases[l]);
        arrays.emplace_back("mask" + std::to_string(l), masks[l]);
    }
    return arrays;
}

MadeModel MadeModel::load_file(const std::string& path) {
    const NamedArrays arrays = load_arrays(path);
    if (find_array(arrays, "meta.kind").item() != 0.0)
        throw std::runtime_error("checkpoint " + path + " is not a MADE model");
    MadeModel m;
    const Tensor& b = find_array(arrays, "meta.bins");
    m.bins_ = BinSpec(b[0], b[1], int(b[2]));
    m.head_floor = find_array(arrays, "meta.head_floor").item();
    const Tensor& jf = find_array(arrays, "meta.joint_floor");
    if (jf[0] != 0.0) m.joint_floor = jf[1];
    const Tensor& ord = find_array(arrays, "meta.ordering");
    m.dims_ = ord.numel();
    for (int i = 0; i < m.dims_; ++i) m.ordering.push_back(int(ord[size_t(i)]));
    m.rank_ = rank_from_ordering(m.ordering);
    for (size_t l = 0;; ++l) {
        const std::string suffix = std::to_string(l);
        if (!has_array(arrays, "w" + suffix)) break;
        m.weights.push_back(find_array(arrays, "w" + suffix));
        m.biases.push_back(find_array(arrays, "b" + suffix));
        m.masks.push_back(find_array(arrays, "mask" + suffix));
    }
    if (m.weights.empty()) throw std::runtime_error("checkpoint " + path + " has no layers");
    return m;
}

} // namespace ardx
