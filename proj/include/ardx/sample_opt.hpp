#pragma once

#include <vector>

#include "ardx/ar_model.hpp"

namespace ardx {

struct TrajectoryPoint {
    int iteration = 0;
    Tensor batch;                  // sample snapshot [N, ...]
    std::vector<double> nll_bits;  // per example
    std::vector<double> grad_norm; // per example, L2 norm of the input gradient
};

struct OptimizeResult {
    std::vector<TrajectoryPoint> trajectory;
    Tensor final_batch;
    bool aborted = false; // non-finite gradient; final_batch is the last good snapshot
    int aborted_at = -1;
};

// Plain gradient descent on the inputs under a frozen model, minimizing
// -log p(x). Model parameters are never bound as differentiable, so the
// model is bitwise untouched. Samples clamp to the bin range after each
// step. Logs at iteration 0, every log_every, and the final iteration.
OptimizeResult optimize_samples(const ArModel& model, const Tensor& x0, int steps, double lr,
                                int log_every);

struct GradField {
    double x1_lo = 0, x1_hi = 0, x2_lo = 0, x2_hi = 0;
    int res1 = 0, res2 = 0;
    std::vector<double> norms; // row-major, x2 rows by x1 columns

    double at(int i2, int i1) const { return norms[size_t(i2) * res1 + i1]; }
    double x1_at(int i1) const { return x1_lo + (x1_hi - x1_lo) * i1 / double(res1 - 1); }
    double x2_at(int i2) const { return x2_lo + (x2_hi - x2_lo) * i2 / double(res2 - 1); }
};

// ||grad_x log p(x)||_2 over a regular grid; the model must be 2-dimensional
GradField gradient_field(const ArModel& model, double x1_lo, double x1_hi, double x2_lo,
                         double x2_hi, int res1, int res2);

enum class ProbeKind { digits, noise, black, gray, white };
ProbeKind probe_kind_from_string(const std::string& s);

// Starting batches for image-domain input optimization. `digit_source` is
// required for ProbeKind::digits (a seeded pick of n examples).
Tensor probe_start_set(ProbeKind kind, int n, const Shape& image_shape, const BinSpec& bins,
                       uint64_t seed, const Tensor* digit_source = nullptr);

} // namespace ardx
