#include "ardx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ardx {

long long numel_of(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << " ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static void check_shape(const Shape& s) {
    for (int d : s) {
        if (d < 1) throw std::invalid_argument("Tensor: extents must be positive, got " + shape_str(s));
    }
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(size_t(numel_of(shape)), 0.0);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape(shape);
    if (numel_of(shape) != (long long)data.size())
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: numel " + std::to_string(numel()));
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::same_values(const Tensor& o) const {
    return shape == o.shape && data == o.data;
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MaxConst: return "max_const";
        case Op::Matmul: return "matmul";
        case Op::MaskedMatmul: return "masked_matmul";
        case Op::Conv2d: return "conv2d";
        case Op::ReflectPad: return "reflect_pad";
        case Op::Abs: return "abs";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Softplus: return "softplus";
        case Op::LogSoftmax: return "log_softmax";
        case Op::LogSumExp: return "logsumexp";
        case Op::SumAll: return "sum";
        case Op::MeanAll: return "mean";
        case Op::SumLast: return "sum_last";
        case Op::Slice: return "slice";
        case Op::Concat: return "concat";
        case Op::Reshape: return "reshape";
        case Op::Permute: return "permute";
        case Op::GaussCdf: return "gaussian_cdf";
        case Op::LogisticCdf: return "logistic_cdf";
        case Op::GaussBinLogPmf: return "gaussian_bin_logpmf";
        case Op::LogisticBinLogPmf: return "logistic_bin_logpmf";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(Op op, const std::string& msg) {
    throw std::invalid_argument(std::string(op_name(op)) + ": " + msg);
}

// broadcast classification for elementwise binaries
enum class Bc { Same, BScalar, AScalar, BTail };

Bc classify_broadcast(Op op, const Shape& a, const Shape& b) {
    if (a == b) return Bc::Same;
    if (numel_of(b) == 1) return Bc::BScalar;
    if (numel_of(a) == 1) return Bc::AScalar;
    if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return Bc::BTail;
    fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

double ew_forward(Op op, double x, double y) {
    switch (op) {
        case Op::Add: return x + y;
        case Op::Sub: return x - y;
        case Op::Mul: return x * y;
        default: break;
    }
    return 0.0;
}

struct Strides {
    std::vector<long long> v;
    explicit Strides(const Shape& s) : v(s.size(), 1) {
        for (int i = int(s.size()) - 2; i >= 0; --i) v[i] = v[i + 1] * s[i + 1];
    }
};

} // namespace

int Tape::push(TapeNode n) {
    if (backward_ran_) throw std::logic_error("Tape: cannot record after backward");
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

const TapeNode& Tape::node(Ref r) const {
    if (!r.valid() || r.id >= int(nodes_.size())) throw std::logic_error("Tape: bad ref");
    return nodes_[size_t(r.id)];
}

const Tensor& Tape::val(Ref r) const { return node(r).val; }

const Tensor& Tape::grad(Ref r) const {
    const TapeNode& n = node(r);
    if (!backward_ran_) throw std::logic_error("Tape: backward has not run");
    if (!n.requires_grad) throw std::logic_error("Tape: node does not require gradients");
    return n.grad;
}

Ref Tape::leaf(const Tensor& v, bool requires_grad) {
    TapeNode n;
    n.op = Op::Leaf;
    n.val = v;
    n.requires_grad = requires_grad;
    return Ref{push(std::move(n))};
}

Ref Tape::binary_ew(Op op, Ref a, Ref b) {
    const TapeNode& na = node(a);
    const TapeNode& nb = node(b);
    const Bc bc = classify_broadcast(op, na.val.shape, nb.val.shape);
    TapeNode n;
    n.op = op;
    n.ins = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    const Tensor& ta = na.val;
    const Tensor& tb = nb.val;
    switch (bc) {
        case Bc::Same: {
            n.val = Tensor(ta.shape);
            for (int i = 0; i < ta.numel(); ++i) n.val[i] = ew_forward(op, ta[i], tb[i]);
            break;
        }
        case Bc::BScalar: {
            n.val = Tensor(ta.shape);
            const double y = tb[0];
            for (int i = 0; i < ta.numel(); ++i) n.val[i] = ew_forward(op, ta[i], y);
            break;
        }
        case Bc::AScalar: {
            n.val = Tensor(tb.shape);
            const double x = ta[0];
            for (int i = 0; i < tb.numel(); ++i) n.val[i] = ew_forward(op, x, tb[i]);
            break;
        }
        case Bc::BTail: {
            n.val = Tensor(ta.shape);
            const int m = tb.numel();
            const int batch = ta.numel() / m;
            for (int r = 0; r < batch; ++r)
                for (int i = 0; i < m; ++i)
                    n.val[size_t(r) * m + i] = ew_forward(op, ta[size_t(r) * m + i], tb[i]);
            break;
        }
    }
    return Ref{push(std::move(n))};
}

Ref Tape::add(Ref a, Ref b) { return binary_ew(Op::Add, a, b); }
Ref Tape::sub(Ref a, Ref b) { return binary_ew(Op::Sub, a, b); }
Ref Tape::mul(Ref a, Ref b) { return binary_ew(Op::Mul, a, b); }

Ref Tape::scale(Ref a, double c) {
    const TapeNode& na = node(a);
    TapeNode n;
    n.op = Op::Scale;
    n.ins = {a.id};
    n.f0 = c;
    n.requires_grad = na.requires_grad;
    n.val = Tensor(na.val.shape);
    for (int i = 0; i < na.val.numel(); ++i) n.val[i] = na.val[i] * c;
    return Ref{push(std::move(n))};
}

Ref Tape::max_const(Ref a, double c) {
    const TapeNode& na = node(a);
    TapeNode n;
    n.op = Op::MaxConst;
    n.ins = {a.id};
    n.f0 = c;
    n.requires_grad = na.requires_grad;
    n.val = Tensor(na.val.shape);
    for (int i = 0; i < na.val.numel(); ++i) n.val[i] = std::max(na.val[i], c);
    return Ref{push(std::move(n))};
}

Ref Tape::matmul(Ref a, Ref b) { return masked_matmul(a, b, Tensor{}); }

Ref Tape::masked_matmul(Ref a, Ref w, const Tensor& mask) {
    const TapeNode& na = node(a);
    const TapeNode& nw = node(w);
    const Op op = mask.numel() ? Op::MaskedMatmul : Op::Matmul;
    const Shape& sa = na.val.shape;
    const Shape& sw = nw.val.shape;
    if (sw.size() != 2) fail(op, "weight must be 2-d, got " + shape_str(sw));
    if (sa.size() != 1 && sa.size() != 2)
        fail(op, "input must be 1-d or 2-d, got " + shape_str(sa));
    const int k = sa.back();
    if (k != sw[0]) fail(op, "inner extents differ: " + shape_str(sa) + " vs " + shape_str(sw));
    if (op == Op::MaskedMatmul && mask.shape != sw)
        fail(op, "mask shape " + shape_str(mask.shape) + " must match weight " + shape_str(sw));
    const int rows = sa.size() == 2 ? sa[0] : 1;
    const int m = sw[1];

    TapeNode n;
    n.op = op;
    n.ins = {a.id, w.id};
    n.requires_grad = na.requires_grad || nw.requires_grad;
    n.tattr = mask;
    n.val = Tensor(sa.size() == 2 ? Shape{rows, m} : Shape{m});
    const double* A = na.val.data.data();
    const double* W = nw.val.data.data();
    const double* M = mask.numel() ? mask.data.data() : nullptr;
    double* out = n.val.data.data();
    for (int r = 0; r < rows; ++r) {
        double* orow = out + size_t(r) * m;
        for (int j = 0; j < m; ++j) orow[j] = 0.0;
        for (int i = 0; i < k; ++i) {
            const double av = A[size_t(r) * k + i];
            if (av == 0.0) continue;
            const double* wrow = W + size_t(i) * m;
            if (M) {
                const double* mrow = M + size_t(i) * m;
                for (int j = 0; j < m; ++j) orow[j] += av * wrow[j] * mrow[j];
            } else {
                for (int j = 0; j < m; ++j) orow[j] += av * wrow[j];
            }
        }
    }
    return Ref{push(std::move(n))};
}

// ia layout for Conv2d: [Cin,H,W,Cout,kh,kw,ph,pw,has_bias]
Ref Tape::conv2d(Ref x, Ref w, Ref bias, const Tensor& mask, int pad_h, int pad_w) {
    const TapeNode& nx = node(x);
    const TapeNode& nw = node(w);
    const Shape& sx = nx.val.shape;
    const Shape& sw = nw.val.shape;
    if (sx.size() != 3) fail(Op::Conv2d, "input must be [C,H,W], got " + shape_str(sx));
    if (sw.size() != 4) fail(Op::Conv2d, "weight must be [Cout,Cin,kh,kw], got " + shape_str(sw));
    if (sw[1] != sx[0])
        fail(Op::Conv2d, "channel mismatch: input " + shape_str(sx) + " weight " + shape_str(sw));
    const int cin = sx[0], h = sx[1], wid = sx[2];
    const int cout = sw[0], kh = sw[2], kw = sw[3];
    if (mask.numel() && (mask.shape != Shape{kh, kw}))
        fail(Op::Conv2d, "mask shape " + shape_str(mask.shape) + " must be [kh kw]");
    const int oh = h + 2 * pad_h - kh + 1;
    const int ow = wid + 2 * pad_w - kw + 1;
    if (oh < 1 || ow < 1) fail(Op::Conv2d, "kernel larger than padded input");
    const bool has_bias = bias.valid();
    if (has_bias && node(bias).val.shape != Shape{cout})
        fail(Op::Conv2d, "bias must be [Cout]");

    TapeNode n;
    n.op = Op::Conv2d;
    n.ins = {x.id, w.id};
    if (has_bias) n.ins.push_back(bias.id);
    n.requires_grad = nx.requires_grad || nw.requires_grad || (has_bias && node(bias).requires_grad);
    n.tattr = mask;
    n.ia = {cin, h, wid, cout, kh, kw, pad_h, pad_w, has_bias ? 1 : 0};
    n.val = Tensor(Shape{cout, oh, ow});

    const double* X = nx.val.data.data();
    const double* W = nw.val.data.data();
    const double* M = mask.numel() ? mask.data.data() : nullptr;
    double* out = n.val.data.data();
    for (int co = 0; co < cout; ++co) {
        const double b0 = has_bias ? node(bias).val[size_t(co)] : 0.0;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) out[(size_t(co) * oh + oy) * ow + ox] = b0;
        for (int ci = 0; ci < cin; ++ci) {
            const double* wk = W + ((size_t(co) * cin + ci) * kh) * kw;
            const double* xc = X + size_t(ci) * h * wid;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wk[size_t(ky) * kw + kx] * (M ? M[size_t(ky) * kw + kx] : 1.0);
                    if (wv == 0.0) continue;
                    const int y0 = std::max(0, pad_h - ky);
                    const int y1 = std::min(oh, h + pad_h - ky);
                    const int x0 = std::max(0, pad_w - kx);
                    const int x1 = std::min(ow, wid + pad_w - kx);
                    for (int oy = y0; oy < y1; ++oy) {
                        const double* xrow = xc + size_t(oy + ky - pad_h) * wid;
                        double* orow = out + (size_t(co) * oh + oy) * ow;
                        for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox + kx - pad_w];
                    }
                }
            }
        }
    }
    return Ref{push(std::move(n))};
}

// ia: [C,H,W,r]
Ref Tape::reflect_pad2d(Ref x, int r) {
    const TapeNode& nx = node(x);
    const Shape& sx = nx.val.shape;
    if (sx.size() != 3) fail(Op::ReflectPad, "input must be [C,H,W], got " + shape_str(sx));
    const int c = sx[0], h = sx[1], w = sx[2];
    if (r < 0 || r >= h || r >= w) fail(Op::ReflectPad, "radius " + std::to_string(r) + " out of range");
    TapeNode n;
    n.op = Op::ReflectPad;
    n.ins = {x.id};
    n.requires_grad = nx.requires_grad;
    n.ia = {c, h, w, r};
    n.val = Tensor(Shape{c, h + 2 * r, w + 2 * r});
    auto refl = [](int i, int nL) { return i < 0 ? -i : (i >= nL ? 2 * nL - 2 - i : i); };
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h + 2 * r; ++y) {
            const int sy = refl(y - r, h);
            for (int xx = 0; xx < w + 2 * r; ++xx) {
                const int sx2 = refl(xx - r, w);
                n.val[(size_t(ci) * (h + 2 * r) + y) * (w + 2 * r) + xx] =
                    nx.val[(size_t(ci) * h + sy) * w + sx2];
            }
        }
    return Ref{push(std::move(n))};
}

Ref Tape::unary_ew(Op op, Ref a) {
    const TapeNode& na = node(a);
    TapeNode n;
    n.op = op;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.val = Tensor(na.val.shape);
    for (int i = 0; i < na.val.numel(); ++i) {
        const double x = na.val[i];
        double y = 0.0;
        switch (op) {
            case Op::Abs: y = std::abs(x); break;
            case Op::Tanh: y = std::tanh(x); break;
            case Op::Sigmoid: y = distmath::sigmoid(x); break;
            case Op::Exp: y = std::exp(x); break;
            case Op::Log:
                if (!(x > 0.0)) fail(op, "non-positive operand " + std::to_string(x));
                y = std::log(x);
                break;
            case Op::Softplus: y = distmath::softplus(x); break;
            case Op::GaussCdf: y = distmath::norm_cdf(x); break;
            case Op::LogisticCdf: y = distmath::sigmoid(x); break;
            default: break;
        }
        n.val[i] = y;
    }
    if (op == Op::Exp && !n.val.all_finite()) fail(op, "overflow to non-finite values");
    return Ref{push(std::move(n))};
}

Ref Tape::abs(Ref a) { return unary_ew(Op::Abs, a); }
Ref Tape::tanh(Ref a) { return unary_ew(Op::Tanh, a); }
Ref Tape::sigmoid(Ref a) { return unary_ew(Op::Sigmoid, a); }
Ref Tape::exp(Ref a) { return unary_ew(Op::Exp, a); }
Ref Tape::log(Ref a) { return unary_ew(Op::Log, a); }
Ref Tape::softplus(Ref a) { return unary_ew(Op::Softplus, a); }
Ref Tape::gaussian_cdf(Ref a) { return unary_ew(Op::GaussCdf, a); }
Ref Tape::logistic_cdf(Ref a) { return unary_ew(Op::LogisticCdf, a); }

Ref Tape::log_softmax(Ref a) {
    const TapeNode& na = node(a);
    if (na.val.ndim() < 1) fail(Op::LogSoftmax, "needs at least 1 axis");
    const int c = na.val.shape.back();
    const int rows = na.val.numel() / c;
    TapeNode n;
    n.op = Op::LogSoftmax;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.val = Tensor(na.val.shape);
    for (int r = 0; r < rows; ++r) {
        const double* x = na.val.data.data() + size_t(r) * c;
        double* y = n.val.data.data() + size_t(r) * c;
        double mx = x[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int i = 0; i < c; ++i) s += std::exp(x[i] - mx);
        const double lse = mx + std::log(s);
        for (int i = 0; i < c; ++i) y[i] = x[i] - lse;
    }
    return Ref{push(std::move(n))};
}

Ref Tape::logsumexp(Ref a) {
    const TapeNode& na = node(a);
    if (na.val.ndim() < 1) fail(Op::LogSumExp, "needs at least 1 axis");
    const int c = na.val.shape.back();
    const int rows = na.val.numel() / c;
    Shape os(na.val.shape.begin(), na.val.shape.end() - 1);
    TapeNode n;
    n.op = Op::LogSumExp;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.val = Tensor(os);
    for (int r = 0; r < rows; ++r) {
        const double* x = na.val.data.data() + size_t(r) * c;
        double mx = x[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int i = 0; i < c; ++i) s += std::exp(x[i] - mx);
        n.val[size_t(r)] = mx + std::log(s);
    }
    return Ref{push(std::move(n))};
}

Ref Tape::sum(Ref a) {
    const TapeNode& na = node(a);
    TapeNode n;
    n.op = Op::SumAll;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    double s = 0.0;
    for (int i = 0; i < na.val.numel(); ++i) s += na.val[i];
    n.val = Tensor::scalar(s);
    return Ref{push(std::move(n))};
}

Ref Tape::mean(Ref a) {
    const TapeNode& na = node(a);
    TapeNode n;
    n.op = Op::MeanAll;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    double s = 0.0;
    for (int i = 0; i < na.val.numel(); ++i) s += na.val[i];
    n.val = Tensor::scalar(s / na.val.numel());
    return Ref{push(std::move(n))};
}

Ref Tape::sum_last(Ref a) {
    const TapeNode& na = node(a);
    if (na.val.ndim() < 1) fail(Op::SumLast, "needs at least 1 axis");
    const int c = na.val.shape.back();
    const int rows = na.val.numel() / c;
    Shape os(na.val.shape.begin(), na.val.shape.end() - 1);
    TapeNode n;
    n.op = Op::SumLast;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.val = Tensor(os);
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int i = 0; i < c; ++i) s += na.val[size_t(r) * c + i];
        n.val[size_t(r)] = s;
    }
    return Ref{push(std::move(n))};
}

// ia: ndim triples (start, stop, step) per axis
Ref Tape::slice(Ref a, const std::vector<int>& start, const std::vector<int>& stop,
                const std::vector<int>& step) {
    const TapeNode& na = node(a);
    const Shape& s = na.val.shape;
    const size_t nd = s.size();
    if (start.size() != nd || stop.size() != nd || step.size() != nd)
        fail(Op::Slice, "spec rank must match tensor rank " + shape_str(s));
    Shape os(nd);
    for (size_t i = 0; i < nd; ++i) {
        if (step[i] < 1) fail(Op::Slice, "step must be >= 1");
        if (start[i] < 0 || stop[i] > s[i] || start[i] >= stop[i])
            fail(Op::Slice, "range [" + std::to_string(start[i]) + "," + std::to_string(stop[i]) +
                                ") invalid for extent " + std::to_string(s[i]));
        os[i] = (stop[i] - start[i] + step[i] - 1) / step[i];
    }
    TapeNode n;
    n.op = Op::Slice;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    for (size_t i = 0; i < nd; ++i) {
        n.ia.push_back(start[i]);
        n.ia.push_back(stop[i]);
        n.ia.push_back(step[i]);
    }
    n.val = Tensor(os);
    const Strides in_st(s);
    std::vector<int> idx(nd, 0);
    for (int o = 0; o < n.val.numel(); ++o) {
        long long off = 0;
        for (size_t i = 0; i < nd; ++i) off += (start[i] + (long long)idx[i] * step[i]) * in_st.v[i];
        n.val[size_t(o)] = na.val[size_t(off)];
        for (int i = int(nd) - 1; i >= 0; --i) {
            if (++idx[size_t(i)] < os[size_t(i)]) break;
            idx[size_t(i)] = 0;
        }
    }
    return Ref{push(std::move(n))};
}

// ia: [axis]
Ref Tape::concat(const std::vector<Ref>& parts, int axis) {
    if (parts.empty()) fail(Op::Concat, "needs at least one input");
    const Shape& s0 = node(parts[0]).val.shape;
    if (axis < 0 || axis >= int(s0.size())) fail(Op::Concat, "axis out of range");
    Shape os = s0;
    bool rq = false;
    for (const Ref& p : parts) {
        const Shape& sp = node(p).val.shape;
        if (sp.size() != s0.size()) fail(Op::Concat, "rank mismatch " + shape_str(sp));
        for (size_t i = 0; i < sp.size(); ++i)
            if (int(i) != axis && sp[i] != s0[i])
                fail(Op::Concat, "shape mismatch " + shape_str(sp) + " vs " + shape_str(s0));
        if (&p != &parts[0]) os[size_t(axis)] += sp[size_t(axis)];
        rq = rq || node(p).requires_grad;
    }
    TapeNode n;
    n.op = Op::Concat;
    for (const Ref& p : parts) n.ins.push_back(p.id);
    n.requires_grad = rq;
    n.ia = {axis};
    n.val = Tensor(os);
    // outer = product of dims before axis, inner = product after
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
    long long dst_axis_off = 0;
    const long long out_row = (long long)os[size_t(axis)] * inner;
    for (const Ref& p : parts) {
        const Tensor& tv = node(p).val;
        const long long ax = tv.shape[size_t(axis)];
        for (long long o = 0; o < outer; ++o) {
            const double* src = tv.data.data() + o * ax * inner;
            double* dst = n.val.data.data() + o * out_row + dst_axis_off * inner;
            std::copy(src, src + ax * inner, dst);
        }
        dst_axis_off += ax;
    }
    return Ref{push(std::move(n))};
}

Ref Tape::reshape(Ref a, const Shape& s) {
    const TapeNode& na = node(a);
    if (numel_of(s) != na.val.numel())
        fail(Op::Reshape, "cannot reshape " + shape_str(na.val.shape) + " to " + shape_str(s));
    TapeNode n;
    n.op = Op::Reshape;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.val = Tensor(s, na.val.data);
    return Ref{push(std::move(n))};
}

// ia: the permutation
Ref Tape::permute(Ref a, const std::vector<int>& perm) {
    const TapeNode& na = node(a);
    const Shape& s = na.val.shape;
    const size_t nd = s.size();
    if (perm.size() != nd) fail(Op::Permute, "permutation rank mismatch");
    std::vector<bool> seen(nd, false);
    for (int p : perm) {
        if (p < 0 || p >= int(nd) || seen[size_t(p)]) fail(Op::Permute, "not a permutation");
        seen[size_t(p)] = true;
    }
    Shape os(nd);
    for (size_t i = 0; i < nd; ++i) os[i] = s[size_t(perm[i])];
    TapeNode n;
    n.op = Op::Permute;
    n.ins = {a.id};
    n.requires_grad = na.requires_grad;
    n.ia.assign(perm.begin(), perm.end());
    n.val = Tensor(os);
    const Strides in_st(s);
    std::vector<int> idx(nd, 0);
    for (int o = 0; o < n.val.numel(); ++o) {
        long long off = 0;
        for (size_t i = 0; i < nd; ++i) off += (long long)idx[i] * in_st.v[size_t(perm[i])];
        n.val[size_t(o)] = na.val[size_t(off)];
        for (int i = int(nd) - 1; i >= 0; --i) {
            if (++idx[size_t(i)] < os[size_t(i)]) break;
            idx[size_t(i)] = 0;
        }
    }
    return Ref{push(std::move(n))};
}

Ref Tape::gaussian_bin_logpmf(Ref x, Ref mu, Ref log_sigma, const BinSpec& bins, double floor) {
    const TapeNode& nx = node(x);
    const TapeNode& nm = node(mu);
    const TapeNode& ns = node(log_sigma);
    const Op op = Op::GaussBinLogPmf;
    if (nm.val.shape != ns.val.shape)
        fail(op, "mu " + shape_str(nm.val.shape) + " vs log_sigma " + shape_str(ns.val.shape));
    const Bc bc = classify_broadcast(op, nm.val.shape, nx.val.shape); // x may broadcast over mu's lead axis
    if (bc == Bc::AScalar) fail(op, "x larger than parameter tensors");
    TapeNode n;
    n.op = op;
    n.ins = {x.id, mu.id, log_sigma.id};
    n.requires_grad = nx.requires_grad || nm.requires_grad || ns.requires_grad;
    n.f0 = floor;
    n.bins = bins;
    n.val = Tensor(nm.val.shape);
    const int m = nx.val.numel();
    for (int i = 0; i < nm.val.numel(); ++i) {
        const double xv = nx.val[size_t(i % m)];
        n.val[size_t(i)] =
            distmath::gauss_bin_eval(xv, nm.val[size_t(i)], ns.val[size_t(i)], bins, floor).val;
    }
    return Ref{push(std::move(n))};
}

Ref Tape::logistic_bin_logpmf(Ref x, Ref mu, Ref log_scale, const BinSpec& bins, double floor) {
    const TapeNode& nx = node(x);
    const TapeNode& nm = node(mu);
    const TapeNode& ns = node(log_scale);
    const Op op = Op::LogisticBinLogPmf;
    if (nm.val.shape != ns.val.shape)
        fail(op, "mu " + shape_str(nm.val.shape) + " vs log_scale " + shape_str(ns.val.shape));
    const Bc bc = classify_broadcast(op, nm.val.shape, nx.val.shape);
    if (bc == Bc::AScalar) fail(op, "x larger than parameter tensors");
    TapeNode n;
    n.op = op;
    n.ins = {x.id, mu.id, log_scale.id};
    n.requires_grad = nx.requires_grad || nm.requires_grad || ns.requires_grad;
    n.f0 = floor;
    n.bins = bins;
    n.val = Tensor(nm.val.shape);
    const int m = nx.val.numel();
    for (int i = 0; i < nm.val.numel(); ++i) {
        const double xv = nx.val[size_t(i % m)];
        n.val[size_t(i)] =
            distmath::logistic_bin_eval(xv, nm.val[size_t(i)], ns.val[size_t(i)], bins, floor).val;
    }
    return Ref{push(std::move(n))};
}

Tensor& Tape::grad_buf(int id) {
    TapeNode& n = nodes_[size_t(id)];
    if (!n.grad_ready) {
        n.grad = Tensor(n.val.shape);
        n.grad_ready = true;
    }
    return n.grad;
}

void Tape::backward(Ref loss) {
    if (backward_ran_) throw std::logic_error("Tape: backward already ran");
    const TapeNode& ln = node(loss);
    if (ln.val.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(ln.val.shape));
    backward_ran_ = true;
    if (ln.requires_grad) {
        grad_buf(loss.id)[0] = 1.0;
        for (int id = loss.id; id >= 0; --id) {
            const TapeNode& n = nodes_[size_t(id)];
            if (!n.requires_grad || !n.grad_ready || n.op == Op::Leaf) continue;
            backprop_node(id);
        }
    }
    // untouched differentiable leaves read as zero gradients
    for (int id = 0; id < int(nodes_.size()); ++id)
        if (nodes_[size_t(id)].requires_grad && !nodes_[size_t(id)].grad_ready) grad_buf(id);
}

void Tape::backprop_node(int id) {
    TapeNode& n = nodes_[size_t(id)];
    const Tensor& g = n.grad;
    auto in_node = [&](int slot) -> TapeNode& { return nodes_[size_t(n.ins[size_t(slot)])]; };
    auto in_grad = [&](int slot) -> Tensor& { return grad_buf(n.ins[size_t(slot)]); };
    auto wants = [&](int slot) { return in_node(slot).requires_grad; };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const TapeNode& na = in_node(0);
            const TapeNode& nb = in_node(1);
            const Bc bc = classify_broadcast(n.op, na.val.shape, nb.val.shape);
            const int total = n.val.numel();
            const int m = nb.val.numel();
            const double sign = n.op == Op::Sub ? -1.0 : 1.0;
            if (wants(0)) {
                Tensor& ga = in_grad(0);
                if (bc == Bc::AScalar) {
                    double s = 0.0;
                    if (n.op == Op::Mul)
                        for (int i = 0; i < total; ++i) s += g[size_t(i)] * nb.val[size_t(i)];
                    else
                        for (int i = 0; i < total; ++i) s += g[size_t(i)];
                    ga[0] += s;
                } else {
                    for (int i = 0; i < total; ++i) {
                        double gv = g[size_t(i)];
                        if (n.op == Op::Mul) {
                            const double bv = bc == Bc::Same ? nb.val[size_t(i)]
                                              : bc == Bc::BScalar ? nb.val[0]
                                                                  : nb.val[size_t(i % m)];
                            gv *= bv;
                        }
                        ga[size_t(i)] += gv;
                    }
                }
            }
            if (wants(1)) {
                Tensor& gb = in_grad(1);
                for (int i = 0; i < total; ++i) {
                    double gv = g[size_t(i)] * sign;
                    if (n.op == Op::Mul) {
                        const double av = bc == Bc::AScalar ? na.val[0] : na.val[size_t(i)];
                        gv = g[size_t(i)] * av;
                    }
                    if (bc == Bc::Same)
                        gb[size_t(i)] += gv;
                    else if (bc == Bc::BScalar)
                        gb[0] += gv;
                    else if (bc == Bc::AScalar)
                        gb[size_t(i)] += gv;
                    else
                        gb[size_t(i % m)] += gv;
                }
            }
            break;
        }
        case Op::Scale: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            for (int i = 0; i < n.val.numel(); ++i) ga[size_t(i)] += g[size_t(i)] * n.f0;
            break;
        }
        case Op::MaxConst: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const Tensor& x = in_node(0).val;
            for (int i = 0; i < n.val.numel(); ++i)
                if (x[size_t(i)] > n.f0) ga[size_t(i)] += g[size_t(i)];
            break;
        }
        case Op::Matmul:
        case Op::MaskedMatmul: {
            const TapeNode& na = in_node(0);
            const TapeNode& nw = in_node(1);
            const Shape& sa = na.val.shape;
            const int k = sa.back();
            const int rows = sa.size() == 2 ? sa[0] : 1;
            const int m = nw.val.shape[1];
            const double* M = n.tattr.numel() ? n.tattr.data.data() : nullptr;
            if (wants(0)) {
                Tensor& ga = in_grad(0);
                for (int r = 0; r < rows; ++r)
                    for (int i = 0; i < k; ++i) {
                        double s = 0.0;
                        const double* wrow = nw.val.data.data() + size_t(i) * m;
                        const double* grow = g.data.data() + size_t(r) * m;
                        if (M) {
                            const double* mrow = M + size_t(i) * m;
                            for (int j = 0; j < m; ++j) s += grow[j] * wrow[j] * mrow[j];
                        } else {
                            for (int j = 0; j < m; ++j) s += grow[j] * wrow[j];
                        }
                        ga[size_t(r) * k + i] += s;
                    }
            }
            if (wants(1)) {
                Tensor& gw = in_grad(1);
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < m; ++j) {
                        if (M && M[size_t(i) * m + j] == 0.0) continue;
                        double s = 0.0;
                        for (int r = 0; r < rows; ++r)
                            s += na.val[size_t(r) * k + i] * g[size_t(r) * m + j];
                        if (M) s *= M[size_t(i) * m + j];
                        gw[size_t(i) * m + j] += s;
                    }
            }
            break;
        }
        case Op::Conv2d: {
            const int cin = n.ia[0], h = n.ia[1], wid = n.ia[2];
            const int cout = n.ia[3], kh = n.ia[4], kw = n.ia[5];
            const int ph = n.ia[6], pw = n.ia[7];
            const bool has_bias = n.ia[8] != 0;
            const int oh = n.val.shape[1], ow = n.val.shape[2];
            const TapeNode& nx = in_node(0);
            const TapeNode& nw = in_node(1);
            const double* M = n.tattr.numel() ? n.tattr.data.data() : nullptr;
            if (wants(0)) {
                Tensor& gx = in_grad(0);
                for (int co = 0; co < cout; ++co)
                    for (int ci = 0; ci < cin; ++ci) {
                        const double* wk = nw.val.data.data() + ((size_t(co) * cin + ci) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wv =
                                    wk[size_t(ky) * kw + kx] * (M ? M[size_t(ky) * kw + kx] : 1.0);
                                if (wv == 0.0) continue;
                                const int y0 = std::max(0, ph - ky);
                                const int y1 = std::min(oh, h + ph - ky);
                                const int x0 = std::max(0, pw - kx);
                                const int x1 = std::min(ow, wid + pw - kx);
                                for (int oy = y0; oy < y1; ++oy) {
                                    const double* grow = g.data.data() + (size_t(co) * oh + oy) * ow;
                                    double* xrow =
                                        gx.data.data() + (size_t(ci) * h + (oy + ky - ph)) * wid;
                                    for (int ox = x0; ox < x1; ++ox)
                                        xrow[ox + kx - pw] += wv * grow[ox];
                                }
                            }
                    }
            }
            if (wants(1)) {
                Tensor& gw = in_grad(1);
                for (int co = 0; co < cout; ++co)
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                if (M && M[size_t(ky) * kw + kx] == 0.0) continue;
                                const int y0 = std::max(0, ph - ky);
                                const int y1 = std::min(oh, h + ph - ky);
                                const int x0 = std::max(0, pw - kx);
                                const int x1 = std::min(ow, wid + pw - kx);
                                double s = 0.0;
                                for (int oy = y0; oy < y1; ++oy) {
                                    const double* grow = g.data.data() + (size_t(co) * oh + oy) * ow;
                                    const double* xrow = nx.val.data.data() +
                                                         (size_t(ci) * h + (oy + ky - ph)) * wid;
                                    for (int ox = x0; ox < x1; ++ox)
                                        s += grow[ox] * xrow[ox + kx - pw];
                                }
                                gw[((size_t(co) * cin + ci) * kh + ky) * kw + kx] += s;
                            }
            }
            if (has_bias && wants(2)) {
                Tensor& gb = in_grad(2);
                for (int co = 0; co < cout; ++co) {
                    double s = 0.0;
                    const double* grow = g.data.data() + size_t(co) * oh * ow;
                    for (int i = 0; i < oh * ow; ++i) s += grow[i];
                    gb[size_t(co)] += s;
                }
            }
            break;
        }
        case Op::ReflectPad: {
            if (!wants(0)) break;
            const int c = n.ia[0], h = n.ia[1], w = n.ia[2], r = n.ia[3];
            Tensor& gx = in_grad(0);
            auto refl = [](int i, int nL) { return i < 0 ? -i : (i >= nL ? 2 * nL - 2 - i : i); };
            const int hp = h + 2 * r, wp = w + 2 * r;
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < hp; ++y) {
                    const int sy = refl(y - r, h);
                    for (int x = 0; x < wp; ++x) {
                        const int sx = refl(x - r, w);
                        gx[(size_t(ci) * h + sy) * w + sx] += g[(size_t(ci) * hp + y) * wp + x];
                    }
                }
            break;
        }
        case Op::Abs:
        case Op::Tanh:
        case Op::Sigmoid:
        case Op::Exp:
        case Op::Log:
        case Op::Softplus:
        case Op::GaussCdf:
        case Op::LogisticCdf: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const Tensor& x = in_node(0).val;
            for (int i = 0; i < n.val.numel(); ++i) {
                const double y = n.val[size_t(i)];
                double d = 0.0;
                switch (n.op) {
                    case Op::Abs:
                        d = x[size_t(i)] > 0.0 ? 1.0 : (x[size_t(i)] < 0.0 ? -1.0 : 0.0);
                        break;
                    case Op::Tanh: d = 1.0 - y * y; break;
                    case Op::Sigmoid:
                    case Op::LogisticCdf: d = y * (1.0 - y); break;
                    case Op::Exp: d = y; break;
                    case Op::Log: d = 1.0 / x[size_t(i)]; break;
                    case Op::Softplus: d = distmath::sigmoid(x[size_t(i)]); break;
                    case Op::GaussCdf: d = std::exp(distmath::log_norm_pdf(x[size_t(i)])); break;
                    default: break;
                }
                ga[size_t(i)] += g[size_t(i)] * d;
            }
            break;
        }
        case Op::LogSoftmax: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const int c = n.val.shape.back();
            const int rows = n.val.numel() / c;
            for (int r = 0; r < rows; ++r) {
                const double* y = n.val.data.data() + size_t(r) * c;
                const double* gr = g.data.data() + size_t(r) * c;
                double gs = 0.0;
                for (int i = 0; i < c; ++i) gs += gr[i];
                double* dst = ga.data.data() + size_t(r) * c;
                for (int i = 0; i < c; ++i) dst[i] += gr[i] - std::exp(y[i]) * gs;
            }
            break;
        }
        case Op::LogSumExp: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const Tensor& x = in_node(0).val;
            const int c = x.shape.back();
            const int rows = x.numel() / c;
            for (int r = 0; r < rows; ++r) {
                const double lse = n.val[size_t(r)];
                const double gv = g[size_t(r)];
                for (int i = 0; i < c; ++i)
                    ga[size_t(r) * c + i] += gv * std::exp(x[size_t(r) * c + i] - lse);
            }
            break;
        }
        case Op::SumAll: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const double gv = g[0];
            for (int i = 0; i < ga.numel(); ++i) ga[size_t(i)] += gv;
            break;
        }
        case Op::MeanAll: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const double gv = g[0] / ga.numel();
            for (int i = 0; i < ga.numel(); ++i) ga[size_t(i)] += gv;
            break;
        }
        case Op::SumLast: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const int c = ga.shape.back();
            const int rows = ga.numel() / c;
            for (int r = 0; r < rows; ++r) {
                const double gv = g[size_t(r)];
                for (int i = 0; i < c; ++i) ga[size_t(r) * c + i] += gv;
            }
            break;
        }
        case Op::Slice: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const size_t nd = ga.shape.size();
            const Strides in_st(ga.shape);
            std::vector<int> idx(nd, 0);
            for (int o = 0; o < n.val.numel(); ++o) {
                long long off = 0;
                for (size_t i = 0; i < nd; ++i)
                    off += (n.ia[3 * i] + (long long)idx[i] * n.ia[3 * i + 2]) * in_st.v[i];
                ga[size_t(off)] += g[size_t(o)];
                for (int i = int(nd) - 1; i >= 0; --i) {
                    if (++idx[size_t(i)] < n.val.shape[size_t(i)]) break;
                    idx[size_t(i)] = 0;
                }
            }
            break;
        }
        case Op::Concat: {
            const int axis = n.ia[0];
            const Shape& os = n.val.shape;
            long long outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= os[size_t(i)];
            for (size_t i = size_t(axis) + 1; i < os.size(); ++i) inner *= os[i];
            const long long out_row = (long long)os[size_t(axis)] * inner;
            long long dst_axis_off = 0;
            for (size_t p = 0; p < n.ins.size(); ++p) {
                const TapeNode& np = nodes_[size_t(n.ins[p])];
                const long long ax = np.val.shape[size_t(axis)];
                if (np.requires_grad) {
                    Tensor& gp = grad_buf(n.ins[p]);
                    for (long long o = 0; o < outer; ++o) {
                        const double* src = g.data.data() + o * out_row + dst_axis_off * inner;
                        double* dst = gp.data.data() + o * ax * inner;
                        for (long long i = 0; i < ax * inner; ++i) dst[i] += src[i];
                    }
                }
                dst_axis_off += ax;
            }
            break;
        }
        case Op::Reshape: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            for (int i = 0; i < n.val.numel(); ++i) ga[size_t(i)] += g[size_t(i)];
            break;
        }
        case Op::Permute: {
            if (!wants(0)) break;
            Tensor& ga = in_grad(0);
            const size_t nd = ga.shape.size();
            const Strides in_st(ga.shape);
            std::vector<int> idx(nd, 0);
            for (int o = 0; o < n.val.numel(); ++o) {
                long long off = 0;
                for (size_t i = 0; i < nd; ++i) off += (long long)idx[i] * in_st.v[size_t(n.ia[i])];
                ga[size_t(off)] += g[size_t(o)];
                for (int i = int(nd) - 1; i >= 0; --i) {
                    if (++idx[size_t(i)] < n.val.shape[size_t(i)]) break;
                    idx[size_t(i)] = 0;
                }
            }
            break;
        }
        case Op::GaussBinLogPmf:
        case Op::LogisticBinLogPmf: {
            const TapeNode& nx = in_node(0);
            const TapeNode& nm = in_node(1);
            const TapeNode& ns = in_node(2);
            const int m = nx.val.numel();
            const bool wx = nx.requires_grad, wm = nm.requires_grad, ws = ns.requires_grad;
            Tensor* gx = wx ? &grad_buf(n.ins[0]) : nullptr;
            Tensor* gm = wm ? &grad_buf(n.ins[1]) : nullptr;
            Tensor* gs = ws ? &grad_buf(n.ins[2]) : nullptr;
            for (int i = 0; i < n.val.numel(); ++i) {
                const double gv = g[size_t(i)];
                if (gv == 0.0) continue;
                const double xv = nx.val[size_t(i % m)];
                const distmath::PmfEval e = n.op == Op::GaussBinLogPmf
                                      ? distmath::gauss_bin_eval(xv, nm.val[size_t(i)], ns.val[size_t(i)],
                                                       n.bins, n.f0)
                                      : distmath::logistic_bin_eval(xv, nm.val[size_t(i)], ns.val[size_t(i)],
                                                          n.bins, n.f0);
                if (gx) (*gx)[size_t(i % m)] += gv * e.dx;
                if (gm) (*gm)[size_t(i)] += gv * e.dmu;
                if (gs) (*gs)[size_t(i)] += gv * e.dls;
            }
            break;
        }
    }
}

double finite_diff_check(const std::function<Ref(Tape&, Ref)>& build, const Tensor& point,
                         double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    Tensor analytic(point.shape);
    {
        Tape tape;
        const Ref x = tape.leaf(point, true);
        const Ref loss = build(tape, x);
        if (tape.val(loss).numel() != 1)
            throw std::invalid_argument("finite_diff_check: fn must produce a scalar");
        tape.backward(loss);
        analytic = tape.grad(x);
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        const Ref x = tape.leaf(p, false);
        return tape.val(build(tape, x)).item();
    };
    double worst = 0.0;
    Tensor probe = point;
    for (int i = 0; i < point.numel(); ++i) {
        const double x0 = point[size_t(i)];
        probe[size_t(i)] = x0 + step;
        const double fp = eval(probe);
        probe[size_t(i)] = x0 - step;
        const double fm = eval(probe);
        probe[size_t(i)] = x0;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic[size_t(i)];
        const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace ardx
