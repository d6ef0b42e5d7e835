#pragma once

#include "ardx/ar_model.hpp"
#include "ardx/data.hpp"

namespace ardx {

// Small convolutional encoder-decoder mapping images between domains at
// equal resolution; a final tanh squashes outputs into the bin range.
struct Generator {
    int in_channels = 1, out_channels = 1, height = 0, width = 0;
    int hidden = 16, n_layers = 3;
    BinSpec bins;
    std::vector<Tensor> w, b;

    static Generator create(int in_channels, int out_channels, int height, int width, int hidden,
                            int n_layers, const BinSpec& bins, uint64_t seed);
    static Generator load_file(const std::string& path);

    // builds the mapping on an existing tape; x: [in_channels,H,W]
    Ref apply(Tape& tape, Ref x, std::vector<Ref>* param_refs, bool params_require_grad) const;
    Tensor apply_detached(const Tensor& x) const;
    std::vector<ParamRef> params();

    NamedArrays to_arrays() const;
    void save(const std::string& path) const { save_arrays(path, to_arrays()); }
};

enum class Ablation { full, nll_only, cyc_only, blur };
Ablation ablation_from_string(const std::string& s);
const char* ablation_name(Ablation a);

struct ArCycleConfig {
    double beta = 1.0;
    bool auto_beta = true; // rescale beta once at step 0 so beta*L_cyc == L_NLL
    Ablation ablation = Ablation::full;
    double blur_sigma = 1.0;
    int snapshot_every = 25;
    int snapshot_rows = 3;
    int pretrain_steps = 0; // supervised warmup on index-paired examples
    int max_steps = 100;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    uint64_t seed = 0;
    std::string out_dir; // snapshots and generator checkpoints; empty keeps them in memory

    void validate() const;
};

struct ArCycleStat {
    int iteration = 0;
    double l_cyc = 0.0;      // per-pixel
    double nll_x_bits = 0.0; // G(y) under P_X
    double nll_y_bits = 0.0; // F(x) under P_Y
};

struct ArCycleSnapshot {
    int iteration = 0;
    Tensor x, fx, gfx; // real / translated / reconstructed, X side
    Tensor y, gy, fgy; // Y side
    std::string f_checkpoint, g_checkpoint;
};

struct ArCycleReport {
    double beta_used = 0.0;
    std::vector<ArCycleStat> steps;
    std::vector<ArCycleSnapshot> snapshots;
    double wall_seconds = 0.0;
};

using ImageMap = std::function<Tensor(const Tensor&)>;

// the two symmetric L1 reconstruction terms, each a mean over examples and
// pixels
double cycle_loss(const Generator& F, const Generator& G, const Tensor& batch_x,
                  const Tensor& batch_y);
double cycle_loss_fn(const ImageMap& F, const ImageMap& G, const Tensor& batch_x,
                     const Tensor& batch_y);
// mean -log P(F(x)) in nats over the batch, P frozen
double nll_loss(const ArModel& P, const Generator& F, const Tensor& batch_x);
double nll_loss_fn(const ArModel& P, const ImageMap& F, const Tensor& batch_x);
// L_NLL(P_Y, F) + L_NLL(P_X, G) + beta * L_cyc
double arcycle_total(const Generator& F, const Generator& G, const ArModel& P_X,
                     const ArModel& P_Y, const Tensor& batch_x, const Tensor& batch_y,
                     double beta);

// separable Gaussian convolution, kernel radius ceil(3*sigma), reflection
// edges, kernel normalized to sum 1
Tensor gaussian_blur(const Tensor& image, double sigma);
Ref gaussian_blur_graph(Tape& tape, Ref image, double sigma);

// Alternating minibatch updates: even iterations step F, odd iterations
// step G, both against the frozen density models.
ArCycleReport train_arcycle(Generator& F, Generator& G, const ArModel& P_X, const ArModel& P_Y,
                            const Dataset& X, const Dataset& Y, const ArCycleConfig& cfg);

} // namespace ardx
