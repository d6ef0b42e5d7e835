#include "ardx/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ardx {

double discretized_gaussian_logpmf(double x, const GaussianParams& p, const BinSpec& bins,
                                   double floor) {
    return distmath::gauss_bin_eval(x, p.mu, p.log_sigma, bins, floor).val;
}

double discretized_logistic_mixture_logpmf(double x, const LogisticMixtureParams& p,
                                           const BinSpec& bins, double floor) {
    if (p.empty()) throw std::invalid_argument("logistic mixture: needs K >= 1 components");
    // log-softmax of the component weights
    double mx = p[0].logit_weight;
    for (const auto& c : p) mx = std::max(mx, c.logit_weight);
    double z = 0.0;
    for (const auto& c : p) z += std::exp(c.logit_weight - mx);
    const double lse_w = mx + std::log(z);

    // logsumexp of log-weight + per-component clamped interval mass; this is
    // exactly the composition the tape route uses
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(p.size());
    for (size_t k = 0; k < p.size(); ++k) {
        const double lw = p[k].logit_weight - lse_w;
        const double lm = distmath::logistic_bin_eval(x, p[k].mu, p[k].log_scale, bins, floor).val;
        terms[k] = lw + lm;
        best = std::max(best, terms[k]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return std::max(best + std::log(acc), floor);
}

double bits_per_dim(double total_nll_nats, long long dims) {
    if (dims < 1) throw std::invalid_argument("bits_per_dim: dims must be >= 1");
    return total_nll_nats / (double(dims) * 0.69314718055994530942);
}

std::vector<double> gaussian_bin_pmf(const GaussianParams& p, const BinSpec& bins, double floor) {
    std::vector<double> pmf(static_cast<size_t>(bins.count));
    for (int k = 0; k < bins.count; ++k)
        pmf[size_t(k)] = std::exp(discretized_gaussian_logpmf(bins.center(k), p, bins, floor));
    return pmf;
}

std::vector<double> logistic_mixture_bin_pmf(const LogisticMixtureParams& p, const BinSpec& bins,
                                             double floor) {
    std::vector<double> pmf(static_cast<size_t>(bins.count));
    for (int k = 0; k < bins.count; ++k)
        pmf[size_t(k)] =
            std::exp(discretized_logistic_mixture_logpmf(bins.center(k), p, bins, floor));
    return pmf;
}

} // namespace ardx
