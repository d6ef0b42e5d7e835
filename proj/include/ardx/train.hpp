#pragma once

#include <string>
#include <vector>

#include "ardx/ar_model.hpp"

namespace ardx {

struct OptConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 64;
    int max_steps = 1000;
    uint64_t seed = 0;
    int checkpoint_every = 0;          // 0: only the final checkpoint
    double validation_fraction = 0.1;  // 0: no held-out split
    std::string checkpoint_dir;        // empty: keep everything in memory
    std::string checkpoint_prefix = "model";

    void validate() const;
};

struct StepStat {
    int step = 0;
    double nll_nats = 0.0;     // mean per example
    double bits_per_dim = 0.0;
};

struct TrainReport {
    std::vector<StepStat> steps;
    std::vector<StepStat> val_steps;   // held-out NLL at checkpoint steps
    std::vector<std::string> checkpoints;
    std::string final_checkpoint;
    double wall_seconds = 0.0;
    double final_val_nll_bits = 0.0;   // 0 when no validation split
};

struct AdamState {
    std::vector<Tensor> m, v;
    long long t = 0;
};

// standard bias-corrected adaptive-moment update, in place
void adam_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
               AdamState& state, const OptConfig& cfg);

// Maximum-likelihood training of an AR model on dataset [N, ...input_shape].
// Deterministic under a fixed seed: batches are seeded uniform draws and
// gradient reduction is ordered. Checkpoints embed the optimizer and batch
// RNG state, so training resumed from one replays the uninterrupted run
// bitwise.
TrainReport train_mle(ArModel& model, const Tensor& dataset, const OptConfig& cfg,
                      const std::string& resume_checkpoint = "");

// mean NLL (nats per example) of a dataset under the model
double eval_nll(const ArModel& model, const Tensor& dataset);

} // namespace ardx
