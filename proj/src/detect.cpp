#include "ardx/detect.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ardx/likelihood.hpp"
#include "ardx/rng.hpp"

namespace ardx {

const char* interval_kind_name(IntervalKind k) {
    switch (k) {
        case IntervalKind::two_sd: return "AR-2SD";
        case IntervalKind::one_sd: return "AR-1SD";
        case IntervalKind::one_sided: return "AR-One-sided";
    }
    return "?";
}

bool IntervalDetector::inlier(double bits) const {
    switch (kind) {
        case IntervalKind::two_sd: return bits >= mu - 2.0 * sigma && bits <= mu + 2.0 * sigma;
        case IntervalKind::one_sd: return bits >= mu - sigma && bits <= mu + sigma;
        case IntervalKind::one_sided: return bits <= mu + 2.0 * sigma;
    }
    return false;
}

IntervalDetector fit_interval(const std::vector<double>& scores, IntervalKind kind) {
    if (scores.size() < 2)
        throw std::invalid_argument("fit_interval: need at least 2 training scores");
    double mu = 0.0;
    for (double v : scores) mu += v;
    mu /= double(scores.size());
    double var = 0.0;
    for (double v : scores) var += (v - mu) * (v - mu);
    var /= double(scores.size()); // population standard deviation
    return IntervalDetector{mu, std::sqrt(var), kind};
}

namespace {

// lower-triangular Cholesky of a dense SPD matrix, row-major
std::vector<double> cholesky(const std::vector<double>& a, int d) {
    std::vector<double> l(a.size(), 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[size_t(i) * d + j];
            for (int k = 0; k < j; ++k) s -= l[size_t(i) * d + k] * l[size_t(j) * d + k];
            if (i == j) {
                if (s <= 0.0)
                    throw std::runtime_error("fit_ccg: covariance not positive definite");
                l[size_t(i) * d + j] = std::sqrt(s);
            } else {
                l[size_t(i) * d + j] = s / l[size_t(j) * d + j];
            }
        }
    }
    return l;
}

// solves L y = b in place, returns ||y||^2 (the squared Mahalanobis distance)
double forward_solve_sq(const std::vector<double>& l, int d, std::vector<double>& b) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
        double s = b[size_t(i)];
        for (int k = 0; k < i; ++k) s -= l[size_t(i) * d + k] * b[size_t(k)];
        const double y = s / l[size_t(i) * d + i];
        b[size_t(i)] = y;
        acc += y * y;
    }
    return acc;
}

} // namespace

double CcgDetector::max_class_loglik(const std::vector<double>& feature) const {
    if (int(feature.size()) != dim)
        throw std::invalid_argument("CCG: feature dimension " + std::to_string(feature.size()) +
                                    " does not match detector dimension " + std::to_string(dim));
    const double base = -0.5 * dim * 1.8378770664093454836 - 0.5 * logdet; // d*log(2*pi)
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> diff(static_cast<size_t>(dim));
    for (const auto& mean : class_means) {
        for (int j = 0; j < dim; ++j) diff[size_t(j)] = feature[size_t(j)] - mean[size_t(j)];
        const double m2 = forward_solve_sq(chol, dim, diff);
        best = std::max(best, base - 0.5 * m2);
    }
    return best;
}

CcgDetector fit_ccg(const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels, double shrinkage, double tau_percentile,
                    double holdout_fraction, uint64_t seed) {
    if (features.size() != labels.size() || features.empty())
        throw std::invalid_argument("fit_ccg: features/labels mismatch");
    const int n = int(features.size());
    const int d = int(features[0].size());
    for (const auto& f : features)
        if (int(f.size()) != d) throw std::invalid_argument("fit_ccg: ragged feature vectors");

    // seeded split: tau is calibrated on scores the fit never saw
    Rng rng(seed);
    const std::vector<int> perm = rng.permutation(n);
    int n_hold = int(std::floor(holdout_fraction * n));
    if (n_hold >= n) n_hold = n - 1;
    std::vector<int> hold(perm.begin(), perm.begin() + n_hold);
    std::vector<int> fit(perm.begin() + n_hold, perm.end());

    std::map<int, std::vector<int>> by_class;
    for (int i : fit) by_class[labels[size_t(i)]].push_back(i);
    for (const auto& [c, idx] : by_class)
        if (idx.size() < 2)
            throw std::invalid_argument("fit_ccg: class " + std::to_string(c) +
                                        " has fewer than 2 examples");

    CcgDetector det;
    det.dim = d;
    std::map<int, int> class_slot;
    for (const auto& [c, idx] : by_class) {
        std::vector<double> mean(size_t(d), 0.0);
        for (int i : idx)
            for (int j = 0; j < d; ++j) mean[size_t(j)] += features[size_t(i)][size_t(j)];
        for (auto& v : mean) v /= double(idx.size());
        class_slot[c] = int(det.class_means.size());
        det.class_means.push_back(std::move(mean));
    }

    // pooled within-class covariance
    std::vector<double> cov(size_t(d) * d, 0.0);
    for (const auto& [c, idx] : by_class) {
        const auto& mean = det.class_means[size_t(class_slot[c])];
        for (int i : idx)
            for (int a = 0; a < d; ++a) {
                const double da = features[size_t(i)][size_t(a)] - mean[size_t(a)];
                for (int b = 0; b <= a; ++b) {
                    const double db = features[size_t(i)][size_t(b)] - mean[size_t(b)];
                    cov[size_t(a) * d + b] += da * db;
                }
            }
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) {
            cov[size_t(a) * d + b] /= double(fit.size());
            cov[size_t(b) * d + a] = cov[size_t(a) * d + b];
        }
    // shrink toward the diagonal; jitter keeps degenerate features factorable
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            if (a != b) cov[size_t(a) * d + b] *= 1.0 - shrinkage;
    for (int a = 0; a < d; ++a) cov[size_t(a) * d + a] += 1e-12;

    det.chol = cholesky(cov, d);
    det.logdet = 0.0;
    for (int i = 0; i < d; ++i) det.logdet += 2.0 * std::log(det.chol[size_t(i) * d + i]);

    // tau: percentile of held-out max-class log-likelihood
    det.tau = -std::numeric_limits<double>::infinity();
    if (!hold.empty()) {
        std::vector<double> scores;
        scores.reserve(hold.size());
        for (int i : hold) scores.push_back(det.max_class_loglik(features[size_t(i)]));
        std::sort(scores.begin(), scores.end());
        size_t k = size_t(std::floor(tau_percentile / 100.0 * double(scores.size())));
        if (k >= scores.size()) k = scores.size() - 1;
        det.tau = scores[k];
    }
    return det;
}

DetectionMatrix detection_table(const ArModel& ar,
                                const std::vector<IntervalDetector>& interval_detectors,
                                const CcgDetector* ccg, const Classifier* features,
                                const std::vector<ProbeSet>& probes) {
    if (probes.empty()) throw std::invalid_argument("detection_table: needs probe sets");
    DetectionMatrix m;
    for (const auto& det : interval_detectors) m.col_names.push_back(interval_kind_name(det.kind));
    const bool with_ccg = ccg != nullptr && features != nullptr;
    if (with_ccg) m.col_names.push_back("CCG");

    for (const auto& probe : probes) {
        m.row_names.push_back(probe.name);
        const int n = probe.images.shape[0];
        const std::vector<double> lp = logprob_batch(ar, probe.images);
        for (const auto& det : interval_detectors) {
            int in = 0;
            for (double v : lp)
                if (det.inlier(bits_per_dim(-v, ar.dims()))) ++in;
            m.percent.push_back(100.0 * in / double(n));
        }
        if (with_ccg) {
            std::vector<int> in(size_t(n), 0);
            parallel_for(n, [&](int i) {
                const Tensor f = features->features(batch_example(probe.images, i));
                in[size_t(i)] = ccg->inlier(f.data) ? 1 : 0;
            });
            int total = 0;
            for (int v : in) total += v;
            m.percent.push_back(100.0 * total / double(n));
        }
    }
    return m;
}

double proxy_score_from_conditionals(const std::vector<std::vector<double>>& conditionals) {
    if (conditionals.size() < 2)
        throw std::invalid_argument("proxy score: need at least 2 samples");
    const size_t c = conditionals[0].size();
    std::vector<double> marginal(c, 0.0);
    for (const auto& p : conditionals) {
        if (p.size() != c) throw std::invalid_argument("proxy score: ragged conditionals");
        for (size_t j = 0; j < c; ++j) marginal[j] += p[j];
    }
    for (auto& v : marginal) v /= double(conditionals.size());
    double mean_kl = 0.0;
    for (const auto& p : conditionals) {
        double kl = 0.0;
        for (size_t j = 0; j < c; ++j)
            if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(marginal[j]));
        mean_kl += kl;
    }
    mean_kl /= double(conditionals.size());
    return std::exp(mean_kl);
}

double proxy_perceptual_score(const Classifier& classifier, const Tensor& samples) {
    if (samples.ndim() < 2 || samples.shape[0] < 2)
        throw std::invalid_argument("proxy score: need at least 2 samples");
    const int n = samples.shape[0];
    std::vector<std::vector<double>> cond{size_t(n)};
    parallel_for(n, [&](int i) {
        const std::vector<double> lp = classifier.class_log_probs(batch_example(samples, i));
        std::vector<double> p(lp.size());
        for (size_t j = 0; j < lp.size(); ++j) p[j] = std::exp(lp[j]);
        cond[size_t(i)] = std::move(p);
    });
    return proxy_score_from_conditionals(cond);
}

} // namespace ardx
