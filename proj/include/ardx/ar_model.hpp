#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ardx/checkpoint.hpp"
#include "ardx/tensor.hpp"

namespace ardx {

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

// An autoregressive density over fixed-shape inputs: exact per-example
// log-probability (differentiable w.r.t. parameters and inputs) plus
// ancestral sampling. Parameters are plain tensors, mutable only between
// forward passes; bind() copies them onto the caller's tape as leaves.
class ArModel {
public:
    virtual ~ArModel() = default;

    virtual Shape input_shape() const = 0; // per example
    virtual int dims() const = 0;
    virtual const BinSpec& bins() const = 0;
    virtual std::vector<ParamRef> params() = 0;

    // true: bind() takes a whole batch [B, ...]; false: one example [...]
    virtual bool batched_graph() const = 0;

    struct Bound {
        Ref x;
        Ref logprob;                 // [B] when batched, scalar otherwise
        std::vector<Ref> param_refs; // same order as params()
    };
    // builds the log-probability graph on top of an existing tape node
    virtual Bound bind_ref(Tape& tape, Ref x, bool params_require_grad) const = 0;
    Bound bind(Tape& tape, const Tensor& x, bool x_requires_grad,
               bool params_require_grad) const {
        return bind_ref(tape, tape.leaf(x, x_requires_grad), params_require_grad);
    }

    virtual Tensor sample(int n, uint64_t seed) const = 0; // [n, ...input_shape]

    virtual NamedArrays to_arrays() const = 0;
    void save(const std::string& path) const { save_arrays(path, to_arrays()); }
};

// Per-example log-probability of a batch [N, ...input_shape], detached.
// Examples fan out across threads; results land in example order.
std::vector<double> logprob_batch(const ArModel& model, const Tensor& batch);

// slices example i out of a batch [N, ...]
Tensor batch_example(const Tensor& batch, int i);
// stacks equally-shaped examples back into a batch
Tensor batch_stack(const std::vector<Tensor>& examples);

// Loads a checkpoint written by any ArModel::save (dispatches on the stored
// kind tag).
std::unique_ptr<ArModel> load_ar_model(const std::string& path);

// Runs fn(i) for i in [0, n) across up to `threads` workers (0 = hardware
// default). Each index runs exactly once; callers write to disjoint slots.
void parallel_for(int n, const std::function<void(int)>& fn, int threads = 0);

} // namespace ardx
