#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ardx {

// Default log-probability floor in nats. Bin masses below exp(kLogProbFloor)
// clamp to the floor with zero gradient instead of running off to -inf.
inline constexpr double kLogProbFloor = -40.0;

// Uniform discretization grid. lo/hi are the centers of the lowest and
// highest bins; the edge bins absorb the open tails, so the grid partitions
// the whole real line.
struct BinSpec {
    double lo = -1.0;
    double hi = 1.0;
    int count = 256;

    BinSpec() = default;
    BinSpec(double lo_, double hi_, int count_) : lo(lo_), hi(hi_), count(count_) {
        if (count < 2) throw std::invalid_argument("BinSpec: count must be >= 2");
        if (!(hi > lo)) throw std::invalid_argument("BinSpec: need hi > lo");
    }

    double width() const { return (hi - lo) / double(count - 1); }

    double center(int k) const { return lo + double(k) * width(); }

    // nearest bin center, clamped to the grid
    int index_of(double x) const {
        const int k = int(std::lround((x - lo) / width()));
        if (k < 0) return 0;
        if (k >= count) return count - 1;
        return k;
    }

    double snap(double x) const { return center(index_of(x)); }
};

namespace distmath {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;
inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_norm_pdf(double z) { return -0.5 * z * z - kHalfLog2Pi; }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

// log of the standard normal CDF, stable over the full double range.
// erfc stays representable down to z ~ -37; below that use the asymptotic
// tail expansion Phi(z) = phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - ...).
inline double log_norm_cdf(double z) {
    if (std::isinf(z)) return z > 0 ? 0.0 : kNegInf;
    if (z > -34.0) return std::log(0.5 * std::erfc(-z * kInvSqrt2));
    const double zi = 1.0 / (z * z);
    const double series = 1.0 + zi * (-1.0 + zi * (3.0 + zi * (-15.0 + zi * 105.0)));
    return log_norm_pdf(z) - std::log(-z) + std::log(series);
}

inline double softplus(double z) {
    if (z > 35.0) return z;
    if (z < -35.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log L(z) for the logistic CDF L(z) = 1/(1+e^-z)
inline double log_logistic_cdf(double z) { return -softplus(-z); }

// log[Phi(zh) - Phi(zl)] for zl < zh, stable against cancellation in either
// tail. Returns -inf when the mass underflows entirely; callers clamp.
inline double gauss_interval_logmass(double zl, double zh) {
    if (!(zl < zh)) return kNegInf;
    if (std::isinf(zl) && zl < 0 && std::isinf(zh)) return 0.0;
    // reflect so the interval midpoint is <= 0; erfc is then accurate for both edges
    if (zl + zh > 0.0) {
        const double t = zl;
        zl = -zh;
        zh = -t;
    }
    const double ph = norm_cdf(zh);
    const double pl = norm_cdf(zl);
    const double diff = ph - pl;
    if (diff > 0.0) return std::log(diff);
    // both edges underflowed; fall back to log-space difference
    const double la = log_norm_cdf(zh);
    const double lb = log_norm_cdf(zl);
    if (std::isinf(la) && la < 0) return kNegInf;
    const double d = lb - la;
    return la + std::log1p(-(d < -700.0 ? 0.0 : std::exp(d)));
}

// log[L(zh) - L(zl)] for the logistic CDF; closed form, no cancellation.
inline double logistic_interval_logmass(double zl, double zh) {
    if (!(zl < zh)) return kNegInf;
    if (std::isinf(zh)) return std::isinf(zl) ? 0.0 : -softplus(zl); // mass = 1 - L(zl)
    if (std::isinf(zl)) return log_logistic_cdf(zh);
    // L(zh) - L(zl) = (e^zh - e^zl) / ((1+e^zh)(1+e^zl))
    return zh + std::log(-std::expm1(zl - zh)) - softplus(zh) - softplus(zl);
}

// Log mass of the width-delta interval centered at x (open tail for edge
// bins, selected by snapping x to the grid), clamped at `floor`, plus the
// partial derivatives. The same kernel backs the tape ops and the scalar
// likelihood API so the two routes agree bitwise.
struct PmfEval {
    double val, dx, dmu, dls;
};

inline PmfEval gauss_bin_eval(double x, double mu, double ls, const BinSpec& bins, double floor) {
    PmfEval r{floor, 0.0, 0.0, 0.0};
    const double half = bins.width() * 0.5;
    if (ls < -700.0) {
        // sigma underflows: point mass at mu
        r.val = std::abs(x - mu) <= half ? 0.0 : floor;
        return r;
    }
    const double inv = std::exp(-ls);
    const int k = bins.index_of(x);
    double raw, dx;
    if (k == 0) {
        const double zh = (x + half - mu) * inv;
        raw = log_norm_cdf(zh);
        const double t = raw <= floor ? 0.0 : std::exp(log_norm_pdf(zh) - raw);
        dx = t * inv;
        r.dls = -zh * t;
    } else if (k == bins.count - 1) {
        const double zl = (x - half - mu) * inv;
        raw = log_norm_cdf(-zl);
        const double t = raw <= floor ? 0.0 : std::exp(log_norm_pdf(zl) - raw);
        dx = -t * inv;
        r.dls = zl * t;
    } else {
        const double zl = (x - half - mu) * inv;
        const double zh = (x + half - mu) * inv;
        raw = gauss_interval_logmass(zl, zh);
        if (raw <= floor || !std::isfinite(raw)) {
            r.val = floor;
            return r;
        }
        const double tl = std::exp(log_norm_pdf(zl) - raw);
        const double th = std::exp(log_norm_pdf(zh) - raw);
        dx = (th - tl) * inv;
        r.dls = zl * tl - zh * th;
    }
    if (raw <= floor || !std::isfinite(raw)) {
        r.val = floor;
        r.dls = 0.0;
        return r;
    }
    r.val = raw;
    r.dx = dx;
    r.dmu = -dx;
    return r;
}

inline PmfEval logistic_bin_eval(double x, double mu, double ls, const BinSpec& bins, double floor) {
    PmfEval r{floor, 0.0, 0.0, 0.0};
    const double half = bins.width() * 0.5;
    if (ls < -700.0) {
        r.val = std::abs(x - mu) <= half ? 0.0 : floor;
        return r;
    }
    const double inv = std::exp(-ls);
    const int k = bins.index_of(x);
    double raw, dx;
    if (k == 0) {
        const double zh = (x + half - mu) * inv;
        raw = log_logistic_cdf(zh);
        const double t = std::exp(-softplus(zh)); // = 1 - L(zh)
        dx = t * inv;
        r.dls = -zh * t;
    } else if (k == bins.count - 1) {
        const double zl = (x - half - mu) * inv;
        raw = -softplus(zl); // log(1 - L(zl))
        const double t = std::exp(-softplus(-zl)); // = L(zl)
        dx = -t * inv;
        r.dls = zl * t;
    } else {
        const double zl = (x - half - mu) * inv;
        const double zh = (x + half - mu) * inv;
        raw = logistic_interval_logmass(zl, zh);
        if (raw <= floor || !std::isfinite(raw)) {
            r.val = floor;
            return r;
        }
        const double tl = std::exp(-softplus(zl) - softplus(-zl) - raw);
        const double th = std::exp(-softplus(zh) - softplus(-zh) - raw);
        dx = (th - tl) * inv;
        r.dls = zl * tl - zh * th;
    }
    if (raw <= floor || !std::isfinite(raw)) {
        r.val = floor;
        r.dls = 0.0;
        return r;
    }
    r.val = raw;
    r.dx = dx;
    r.dmu = -dx;
    return r;
}

} // namespace distmath

} // namespace ardx
