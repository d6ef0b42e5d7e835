#pragma once

#include <optional>

#include "ardx/ar_model.hpp"
#include "ardx/likelihood.hpp"

namespace ardx {

// Binary connectivity masks for a masked autoencoder. layer_sizes is
// [D, h1, ..., hk, D] (the trailing D counts head groups, one per input
// dimension). Hidden units get a connectivity rank drawn uniformly from
// [min predecessor rank, D-1]; hidden connections need m(out) >= m(in),
// output connections need rank(dim) > m(in). Returned masks: one [l_i,
// l_{i+1}] matrix per hidden layer plus a final [h_k, D] group mask.
std::vector<Tensor> build_made_masks(const std::vector<int>& layer_sizes,
                                     const std::vector<int>& ordering, uint64_t seed);

// Masked-MLP autoregressive density over D-dimensional vectors with a
// discretized Gaussian head per dimension.
class MadeModel final : public ArModel {
public:
    // hidden layers random-initialized, final layer zero-initialized so a
    // fresh model is an exact discretized standard Gaussian per dimension
    static MadeModel create(const BinSpec& bins, std::vector<int> hidden,
                            std::vector<int> ordering, uint64_t seed);
    static MadeModel load_file(const std::string& path);

    Shape input_shape() const override { return {dims_}; }
    int dims() const override { return dims_; }
    const BinSpec& bins() const override { return bins_; }
    std::vector<ParamRef> params() override;
    bool batched_graph() const override { return true; }

    // x must be [B, D]; logprob lands as [B]
    Bound bind_ref(Tape& tape, Ref x, bool params_require_grad) const override;
    // also exposes the conditional head parameters
    struct HeadBound {
        Bound bound;
        Ref mu, log_sigma; // [B, D] each
    };
    HeadBound bind_heads(Tape& tape, Ref x, bool params_require_grad) const;

    Tensor sample(int n, uint64_t seed) const override;
    NamedArrays to_arrays() const override;

    int rank_of(int dim) const { return rank_[size_t(dim)]; }

    std::vector<int> ordering;
    std::vector<Tensor> weights; // [D,h1], ..., [h_k, 2D]
    std::vector<Tensor> biases;
    std::vector<Tensor> masks;   // matching shapes; final mask columns are [mu..., log_sigma...]
    // optional floor on the total per-example log-probability; used by the
    // 2-d manifold experiments where mass below the floor reads as zero
    std::optional<double> joint_floor;
    double head_floor = kLogProbFloor;

private:
    BinSpec bins_;
    int dims_ = 0;
    std::vector<int> rank_; // rank_[dim] = position of dim in the ordering
};

} // namespace ardx
