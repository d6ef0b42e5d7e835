#pragma once

#include <vector>

#include "ardx/bins.hpp"

namespace ardx {

struct GaussianParams {
    double mu = 0.0;
    double log_sigma = 0.0;
};

struct LogisticComponent {
    double logit_weight = 0.0;
    double mu = 0.0;
    double log_scale = 0.0;
};

using LogisticMixtureParams = std::vector<LogisticComponent>;

// Log mass of the bin interval around x under a discretized Gaussian;
// open tails on the edge bins, clamped at `floor` nats. Shares its kernel
// with the tape op of the same name.
double discretized_gaussian_logpmf(double x, const GaussianParams& p, const BinSpec& bins,
                                   double floor = kLogProbFloor);

// Same for a K-component discretized logistic mixture, composed in log
// space: logsumexp over components of log-softmax weight + interval mass.
double discretized_logistic_mixture_logpmf(double x, const LogisticMixtureParams& p,
                                           const BinSpec& bins, double floor = kLogProbFloor);

// total NLL in nats -> bits per dimension
double bits_per_dim(double total_nll_nats, long long dims);

// pmf evaluated at every bin center (used by ancestral sampling and the
// normalization oracles)
std::vector<double> gaussian_bin_pmf(const GaussianParams& p, const BinSpec& bins,
                                     double floor = kLogProbFloor);
std::vector<double> logistic_mixture_bin_pmf(const LogisticMixtureParams& p, const BinSpec& bins,
                                             double floor = kLogProbFloor);

} // namespace ardx
