#include "ardx/pixel_ar.hpp"

#include <cmath>
#include <stdexcept>

#include "ardx/checkpoint.hpp"
#include "ardx/rng.hpp"

namespace ardx {

static Tensor make_kernel_mask(int k, bool include_center) {
    Tensor m(Shape{k, k});
    const int c = k / 2;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            const bool before = y < c || (y == c && x < c);
            m[size_t(y) * k + x] = before || (include_center && y == c && x == c) ? 1.0 : 0.0;
        }
    return m;
}

PixelArModel PixelArModel::create(const BinSpec& bins, int channels, int height, int width,
                                  int hidden_channels, int n_layers, int mix_k, int kernel,
                                  uint64_t seed) {
    if (n_layers < 2) throw std::invalid_argument("PixelAR: need at least 2 layers");
    if (kernel % 2 == 0) throw std::invalid_argument("PixelAR: kernel must be odd");
    if (mix_k < 1) throw std::invalid_argument("PixelAR: mixture needs K >= 1");
    PixelArModel m;
    m.bins_ = bins;
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.hidden_channels = hidden_channels;
    m.n_layers = n_layers;
    m.mix_k = mix_k;
    m.kernel = kernel;
    m.mask_first = make_kernel_mask(kernel, false);
    m.mask_rest = make_kernel_mask(kernel, true);

    Rng rng(seed);
    for (int l = 0; l < n_layers; ++l) {
        const bool final_layer = l == n_layers - 1;
        const int cin = l == 0 ? channels : hidden_channels;
        const int cout = final_layer ? 3 * mix_k * channels : hidden_channels;
        const int k = final_layer ? 1 : kernel;
        Tensor w(Shape{cout, cin, k, k});
        if (!final_layer) {
            const double s = 1.0 / std::sqrt(double(cin * k * k));
            for (auto& v : w.data) v = rng.normal() * s;
        }
        m.conv_w.push_back(std::move(w));
        m.conv_b.push_back(Tensor(Shape{cout}));
    }
    return m;
}

std::vector<ParamRef> PixelArModel::params() {
    std::vector<ParamRef> out;
    for (size_t l = 0; l < conv_w.size(); ++l) {
        out.push_back({"w" + std::to_string(l), &conv_w[l]});
        out.push_back({"b" + std::to_string(l), &conv_b[l]});
    }
    return out;
}

PixelArModel::HeadBound PixelArModel::bind_heads(Tape& t, Ref x, bool params_require_grad) const {
    if (t.val(x).shape != Shape{channels, height, width})
        throw std::invalid_argument("PixelAR: input must be " +
                                    shape_str(Shape{channels, height, width}) + ", got " +
                                    shape_str(t.val(x).shape));
    const int pad = kernel / 2;
    HeadBound hb;
    hb.bound.x = x;
    Ref h = hb.bound.x;
    for (int l = 0; l < n_layers; ++l) {
        const bool final_layer = l == n_layers - 1;
        const Ref w = t.leaf(conv_w[size_t(l)], params_require_grad);
        const Ref b = t.leaf(conv_b[size_t(l)], params_require_grad);
        hb.bound.param_refs.push_back(w);
        hb.bound.param_refs.push_back(b);
        if (final_layer) {
            h = t.conv2d(h, w, b, Tensor{}, 0, 0); // 1x1 head conv
        } else {
            h = t.tanh(t.conv2d(h, w, b, l == 0 ? mask_first : mask_rest, pad, pad));
        }
    }
    hb.head = h;

    const int k3 = 3 * mix_k;
    Ref total{};
    for (int c = 0; c < channels; ++c) {
        const int base = c * k3;
        Ref slab = t.slice(h, {base, 0, 0}, {base + k3, height, width}, {1, 1, 1});
        Ref logits = t.slice(slab, {0, 0, 0}, {mix_k, height, width}, {1, 1, 1});
        Ref mus = t.slice(slab, {mix_k, 0, 0}, {2 * mix_k, height, width}, {1, 1, 1});
        Ref lss = t.slice(slab, {2 * mix_k, 0, 0}, {3 * mix_k, height, width}, {1, 1, 1});
        Ref xc = t.reshape(t.slice(hb.bound.x, {c, 0, 0}, {c + 1, height, width}, {1, 1, 1}),
                           Shape{height, width});
        Ref lw = t.log_softmax(t.permute(logits, {1, 2, 0}));
        Ref lm = t.permute(t.logistic_bin_logpmf(xc, mus, lss, bins_, head_floor), {1, 2, 0});
        Ref lp = t.max_const(t.logsumexp(t.add(lw, lm)), head_floor); // [H,W]
        Ref s = t.sum(lp);
        total = c == 0 ? s : t.add(total, s);
    }
    if (joint_floor) total = t.max_const(total, *joint_floor);
    hb.bound.logprob = total;
    return hb;
}

ArModel::Bound PixelArModel::bind_ref(Tape& t, Ref x, bool params_require_grad) const {
    return bind_heads(t, x, params_require_grad).bound;
}

LogisticMixtureParams PixelArModel::conditional_at(const Tensor& image, int c, int y, int x) const {
    Tape t;
    const HeadBound hb = bind_heads(t, t.constant(image), false);
    const Tensor& head = t.val(hb.head);
    LogisticMixtureParams p(static_cast<size_t>(mix_k));
    const int k3 = 3 * mix_k;
    for (int k = 0; k < mix_k; ++k) {
        const auto at = [&](int ch) {
            return head[(size_t(c * k3 + ch) * height + y) * width + x];
        };
        p[size_t(k)] = {at(k), at(mix_k + k), at(2 * mix_k + k)};
    }
    return p;
}

Tensor PixelArModel::sample(int n, uint64_t seed) const {
    if (n < 1) throw std::invalid_argument("PixelAR sample: need n >= 1");
    Tensor out(Shape{n, channels, height, width});
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Tensor img(Shape{channels, height, width});
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                Tape t;
                const HeadBound hb = bind_heads(t, t.constant(img), false);
                const Tensor& head = t.val(hb.head);
                const int k3 = 3 * mix_k;
                for (int c = 0; c < channels; ++c) {
                    LogisticMixtureParams p(static_cast<size_t>(mix_k));
                    for (int k = 0; k < mix_k; ++k) {
                        const auto at = [&](int ch) {
                            return head[(size_t(c * k3 + ch) * height + y) * width + x];
                        };
                        p[size_t(k)] = {at(k), at(mix_k + k), at(2 * mix_k + k)};
                    }
                    const std::vector<double> pmf = logistic_mixture_bin_pmf(p, bins_, head_floor);
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
                    img[(size_t(c) * height + y) * width + x] = bins_.center(pick);
                }
            }
        for (int j = 0; j < img.numel(); ++j) out[size_t(i) * img.numel() + j] = img[size_t(j)];
    }
    return out;
}

NamedArrays PixelArModel::to_arrays() const {
    NamedArrays arrays;
    arrays.emplace_back("meta.kind", Tensor::scalar(1.0));
    arrays.emplace_back("meta.bins", Tensor(Shape{3}, {bins_.lo, bins_.hi, double(bins_.count)}));
    arrays.emplace_back("meta.head_floor", Tensor::scalar(head_floor));
    arrays.emplace_back("meta.joint_floor",
                        Tensor(Shape{2}, {joint_floor ? 1.0 : 0.0, joint_floor.value_or(0.0)}));
    arrays.emplace_back("meta.geom",
                        Tensor(Shape{7}, {double(channels), double(height), double(width),
                                          double(hidden_channels), double(n_layers),
                                          double(mix_k), double(kernel)}));
    arrays.emplace_back("meta.mask_first", mask_first);
    arrays.emplace_back("meta.mask_rest", mask_rest);
    for (size_t l = 0; l < conv_w.size(); ++l) {
        arrays.emplace_back("w" + std::to_string(l), conv_w[l]);
        arrays.emplace_back("b" + std::to_string(l), conv_b[l]);
    }
    return arrays;
}

PixelArModel PixelArModel::load_file(const std::string& path) {
    const NamedArrays arrays = load_arrays(path);
    if (find_array(arrays, "meta.kind").item() != 1.0)
        throw std::runtime_error("checkpoint " + path + " is not a pixel AR model");
    PixelArModel m;
    const Tensor& b = find_array(arrays, "meta.bins");
    m.bins_ = BinSpec(b[0], b[1], int(b[2]));
    m.head_floor = find_array(arrays, "meta.head_floor").item();
    const Tensor& jf = find_array(arrays, "meta.joint_floor");
    if (jf[0] != 0.0) m.joint_floor = jf[1];
    const Tensor& g = find_array(arrays, "meta.geom");
    m.channels = int(g[0]);
    m.height = int(g[1]);
    m.width = int(g[2]);
    m.hidden_channels = int(g[3]);
    m.n_layers = int(g[4]);
    m.mix_k = int(g[5]);
    m.kernel = int(g[6]);
    m.mask_first = find_array(arrays, "meta.mask_first");
    m.mask_rest = find_array(arrays, "meta.mask_rest");
    for (size_t l = 0;; ++l) {
        const std::string suffix = std::to_string(l);
        if (!has_array(arrays, "w" + suffix)) break;
        m.conv_w.push_back(find_array(arrays, "w" + suffix));
        m.conv_b.push_back(find_array(arrays, "b" + suffix));
    }
    if (int(m.conv_w.size()) != m.n_layers)
        throw std::runtime_error("checkpoint " + path + " layer count mismatch");
    return m;
}

bool pixel_receptive_field_check(const PixelArModel& model, int y, int x, uint64_t seed) {
    const int h = model.height, w = model.width, c = model.channels;
    Rng rng(seed);
    const BinSpec& bins = model.bins();
    Tensor base(Shape{c, h, w});
    for (auto& v : base.data) v = bins.center(rng.uniform_int(bins.count));

    // reference conditional parameters at (y, x), all channels
    std::vector<double> ref;
    {
        Tape t;
        const auto hb = model.bind_heads(t, t.constant(base), false);
        const Tensor& head = t.val(hb.head);
        const int hc = head.shape[0];
        for (int ch = 0; ch < hc; ++ch) ref.push_back(head[(size_t(ch) * h + y) * w + x]);
    }
    // exhaustively perturb every raster-later pixel (one random channel each)
    for (int p = y * w + x + 1; p < h * w; ++p) {
        Tensor probe = base;
        const int ci = c == 1 ? 0 : rng.uniform_int(c);
        const int py = p / w, px = p % w;
        double& cell = probe[(size_t(ci) * h + py) * w + px];
        const double old = cell;
        do {
            cell = bins.center(rng.uniform_int(bins.count));
        } while (cell == old);
        Tape t;
        const auto hb = model.bind_heads(t, t.constant(probe), false);
        const Tensor& head = t.val(hb.head);
        const int hc = head.shape[0];
        for (int ch = 0; ch < hc; ++ch)
            if (head[(size_t(ch) * h + y) * w + x] != ref[size_t(ch)]) return false;
    }
    return true;
}

} // namespace ardx
