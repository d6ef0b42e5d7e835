#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ardx/bins.hpp"

namespace ardx {

using Shape = std::vector<int>;

long long numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major double tensor. Plain value type; no tape attachment.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor full(Shape s, double v);

    int numel() const { return int(data.size()); }
    int ndim() const { return int(shape.size()); }
    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }
    double item() const;
    bool all_finite() const;
    bool same_values(const Tensor& o) const; // shape and exact value equality
};

struct Ref {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MaxConst,
    Matmul,
    MaskedMatmul,
    Conv2d,
    ReflectPad,
    Abs,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    LogSoftmax,
    LogSumExp,
    SumAll,
    MeanAll,
    SumLast,
    Slice,
    Concat,
    Reshape,
    Permute,
    GaussCdf,
    LogisticCdf,
    GaussBinLogPmf,
    LogisticBinLogPmf,
};

const char* op_name(Op op);

struct TapeNode {
    Op op = Op::Leaf;
    std::vector<int> ins;
    Tensor val;
    Tensor grad;            // allocated during backward
    bool requires_grad = false;
    bool grad_ready = false;
    // op attributes
    double f0 = 0.0;        // scale factor / clamp threshold / pmf floor
    std::vector<int> ia;    // slice/permute/conv/reshape geometry
    Tensor tattr;           // binary mask for masked ops
    BinSpec bins;           // for the fused pmf ops
};

// Recorded computation trace. Rebuilt per forward pass (define-by-run);
// single-threaded by contract.
class Tape {
public:
    Ref leaf(const Tensor& v, bool requires_grad);
    Ref constant(const Tensor& v) { return leaf(v, false); }
    Ref constant(double v) { return leaf(Tensor::scalar(v), false); }

    // elementwise; the second operand may be a scalar or match the first
    // operand's shape with the leading batch dimension dropped
    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref mul(Ref a, Ref b);
    Ref scale(Ref a, double c);
    Ref max_const(Ref a, double c);

    Ref matmul(Ref a, Ref b);
    Ref masked_matmul(Ref a, Ref w, const Tensor& mask);
    // x: [Cin,H,W], w: [Cout,Cin,kh,kw], optional bias [Cout], optional
    // spatial mask [kh,kw]; zero padding (ph,pw)
    Ref conv2d(Ref x, Ref w, Ref bias, const Tensor& mask, int pad_h, int pad_w);
    Ref reflect_pad2d(Ref x, int r);

    Ref abs(Ref a);
    Ref tanh(Ref a);
    Ref sigmoid(Ref a);
    Ref exp(Ref a);
    Ref log(Ref a);
    Ref softplus(Ref a);
    Ref log_softmax(Ref a); // over last axis
    Ref logsumexp(Ref a);   // over last axis, drops it
    Ref sum(Ref a);         // -> scalar
    Ref mean(Ref a);        // -> scalar
    Ref sum_last(Ref a);    // drops last axis

    Ref slice(Ref a, const std::vector<int>& start, const std::vector<int>& stop,
              const std::vector<int>& step);
    Ref concat(const std::vector<Ref>& parts, int axis);
    Ref reshape(Ref a, const Shape& s);
    Ref permute(Ref a, const std::vector<int>& perm);

    Ref gaussian_cdf(Ref a);
    Ref logistic_cdf(Ref a);

    // Discretized-head log pmf, fused for numerical stability. x may have the
    // leading axis of mu/log_scale dropped (mixture components broadcast).
    // The value is the log mass of the width-delta interval centered at x
    // (open tail for the edge bins, selected by snapping x to the grid); at
    // bin centers this is the exact bin mass. Clamped at `floor` nats with
    // zero gradient in the clamped region.
    Ref gaussian_bin_logpmf(Ref x, Ref mu, Ref log_sigma, const BinSpec& bins,
                            double floor = kLogProbFloor);
    Ref logistic_bin_logpmf(Ref x, Ref mu, Ref log_scale, const BinSpec& bins,
                            double floor = kLogProbFloor);

    const Tensor& val(Ref r) const;
    // runs reverse accumulation from a scalar loss; call once per tape
    void backward(Ref loss);
    const Tensor& grad(Ref r) const;
    bool backward_ran() const { return backward_ran_; }
    int size() const { return int(nodes_.size()); }
    const TapeNode& node(Ref r) const;

private:
    int push(TapeNode n);
    Ref binary_ew(Op op, Ref a, Ref b);
    Ref unary_ew(Op op, Ref a);
    void backprop_node(int id);
    Tensor& grad_buf(int id);

    std::vector<TapeNode> nodes_;
    bool backward_ran_ = false;
};

// Max relative error between the analytic input gradient of the scalar
// produced by `build` and central finite differences at `point`.
// `build` assembles the graph on a fresh tape from the given input leaf.
double finite_diff_check(const std::function<Ref(Tape&, Ref)>& build,
                         const Tensor& point, double step);

} // namespace ardx
