#pragma once

#include <optional>

#include "ardx/ar_model.hpp"
#include "ardx/likelihood.hpp"

namespace ardx {

// Masked-convolution autoregressive image model. The first layer's kernel
// mask excludes the center pixel, later layers include it, so the
// conditional at raster position p sees only positions strictly before p.
// Channels within a pixel are modeled conditionally independent given the
// preceding pixels; each channel gets its own discretized logistic mixture
// head.
class PixelArModel final : public ArModel {
public:
    static PixelArModel create(const BinSpec& bins, int channels, int height, int width,
                               int hidden_channels, int n_layers, int mix_k, int kernel,
                               uint64_t seed);
    static PixelArModel load_file(const std::string& path);

    Shape input_shape() const override { return {channels, height, width}; }
    int dims() const override { return channels * height * width; }
    const BinSpec& bins() const override { return bins_; }
    std::vector<ParamRef> params() override;
    bool batched_graph() const override { return false; }

    // x must be a single example [C,H,W]; logprob lands as a scalar
    Bound bind_ref(Tape& tape, Ref x, bool params_require_grad) const override;
    struct HeadBound {
        Bound bound;
        Ref head; // raw head output [3K*C, H, W]: per channel [logits | mu | log_scale]
    };
    HeadBound bind_heads(Tape& tape, Ref x, bool params_require_grad) const;

    // mixture parameters of channel `c` at (y, x), detached
    LogisticMixtureParams conditional_at(const Tensor& image, int c, int y, int x) const;

    Tensor sample(int n, uint64_t seed) const override;
    NamedArrays to_arrays() const override;

    int channels = 1, height = 0, width = 0;
    int hidden_channels = 0, n_layers = 0, mix_k = 0, kernel = 3;
    std::vector<Tensor> conv_w, conv_b;
    Tensor mask_first, mask_rest; // [k,k] binary
    std::optional<double> joint_floor;
    double head_floor = kLogProbFloor;

private:
    BinSpec bins_;
};

// true iff perturbing every raster-later pixel (one random channel/value
// each, exhaustive over positions) leaves the conditional parameters at
// (y, x) bitwise unchanged
bool pixel_receptive_field_check(const PixelArModel& model, int y, int x, uint64_t seed);

} // namespace ardx
