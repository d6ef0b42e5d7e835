#pragma once

#include <string>
#include <vector>

#include "ardx/ar_model.hpp"
#include "ardx/classifier.hpp"

namespace ardx {

enum class IntervalKind { two_sd, one_sd, one_sided };
const char* interval_kind_name(IntervalKind k);

// NLL-interval outlier rule over bits/dim scores. Boundary values count as
// inliers (closed intervals).
struct IntervalDetector {
    double mu = 0.0;
    double sigma = 0.0;
    IntervalKind kind = IntervalKind::two_sd;

    bool inlier(double bits_per_dim) const;
};

// population mean / standard deviation over the training scores
IntervalDetector fit_interval(const std::vector<double>& train_bits_per_dim, IntervalKind kind);

// Class-conditional Gaussians over classifier features: per-class means, a
// tied covariance with diagonal shrinkage, and a threshold tau on the best
// class log-likelihood.
struct CcgDetector {
    std::vector<std::vector<double>> class_means;
    std::vector<double> chol;   // lower-triangular Cholesky factor of the shrunk covariance
    double logdet = 0.0;
    double tau = 0.0;
    int dim = 0;

    double max_class_loglik(const std::vector<double>& feature) const;
    bool inlier(const std::vector<double>& feature) const { return max_class_loglik(feature) >= tau; }
};

// Fits means and tied covariance, then calibrates tau to the q-th percentile
// of max-class log-likelihood over an internal seeded held-out split.
CcgDetector fit_ccg(const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels, double shrinkage = 0.05,
                    double tau_percentile = 5.0, double holdout_fraction = 0.2, uint64_t seed = 0);

struct ProbeSet {
    std::string name;
    Tensor images; // [N, ...model input shape]
};

struct DetectionMatrix {
    std::vector<std::string> row_names; // probe datasets
    std::vector<std::string> col_names; // detectors
    std::vector<double> percent;        // row-major, percent classified in-distribution

    double at(int r, int c) const { return percent[size_t(r) * col_names.size() + size_t(c)]; }
};

// Percent-inlier per (probe, detector) cell. The CCG column is present when
// both a fitted detector and the feature classifier are supplied.
DetectionMatrix detection_table(const ArModel& ar,
                                const std::vector<IntervalDetector>& interval_detectors,
                                const CcgDetector* ccg, const Classifier* features,
                                const std::vector<ProbeSet>& probes);

// exp of the mean KL between per-sample class posteriors and their average
double proxy_score_from_conditionals(const std::vector<std::vector<double>>& conditionals);
double proxy_perceptual_score(const Classifier& classifier, const Tensor& samples);

} // namespace ardx
