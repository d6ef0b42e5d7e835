// Test-side oracles, kept independent of the library's computation paths.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracle {

// standard normal CDF via erfc (accurate in the lower tail)
inline double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// mass of [lo, hi] under N(mu, sigma^2); reflected onto the lower tail so
// the erfc evaluations stay cancellation-free
inline double gauss_mass(double lo, double hi, double mu, double sigma) {
    double zl = (lo - mu) / sigma, zh = (hi - mu) / sigma;
    if (zl + zh > 0.0) {
        const double t = zl;
        zl = -zh;
        zh = -t;
    }
    return phi(zh) - phi(zl);
}

// discretized standard-normal log pmf over a uniform grid with open tails
inline double disc_gauss_logpmf(double x, double mu, double sigma, double lo, double hi,
                                int count, double floor_nats) {
    const double delta = (hi - lo) / double(count - 1);
    const int k = std::max(0, std::min(count - 1, int(std::lround((x - lo) / delta))));
    double mass;
    if (k == 0)
        mass = phi((x + delta / 2 - mu) / sigma);
    else if (k == count - 1)
        mass = 1.0 - phi((x - delta / 2 - mu) / sigma);
    else
        mass = gauss_mass(x - delta / 2, x + delta / 2, mu, sigma);
    const double raw = std::log(mass);
    return std::isfinite(raw) ? std::max(raw, floor_nats) : floor_nats;
}

// plain direct convolution sum, zero padding
inline std::vector<double> conv2d_direct(const std::vector<double>& x, int cin, int h, int w,
                                         const std::vector<double>& k, int cout, int kh, int kw,
                                         int ph, int pw) {
    const int oh = h + 2 * ph - kh + 1, ow = w + 2 * pw - kw + 1;
    std::vector<double> out(size_t(cout) * oh * ow, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int y = oy + ky - ph, xx = ox + kx - pw;
                            if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                            s += x[(size_t(ci) * h + y) * w + xx] *
                                 k[((size_t(co) * cin + ci) * kh + ky) * kw + kx];
                        }
                out[(size_t(co) * oh + oy) * ow + ox] = s;
            }
    return out;
}

// boolean reachability through a chain of masks: result[i][j] = path from
// input j to output i
inline std::vector<std::vector<bool>> mask_reachability(
    const std::vector<std::vector<double>>& masks, const std::vector<int>& in_dims,
    const std::vector<int>& out_dims) {
    // masks[l] is row-major [in_dims[l], out_dims[l]]
    const int d0 = in_dims[0];
    std::vector<std::vector<bool>> reach(static_cast<size_t>(d0));
    for (int j = 0; j < d0; ++j) {
        std::vector<bool> cur(size_t(d0), false);
        cur[size_t(j)] = true;
        for (size_t l = 0; l < masks.size(); ++l) {
            std::vector<bool> nxt(size_t(out_dims[l]), false);
            for (int i = 0; i < in_dims[size_t(l)]; ++i) {
                if (!cur[size_t(i)]) continue;
                for (int o = 0; o < out_dims[size_t(l)]; ++o)
                    if (masks[l][size_t(i) * out_dims[size_t(l)] + o] != 0.0) nxt[size_t(o)] = true;
            }
            cur = std::move(nxt);
        }
        reach[size_t(j)] = cur; // reach[j][i]: input j reaches output i
    }
    return reach;
}

// regularized upper incomplete gamma Q(a, x), for chi-square p-values
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    auto gamma_p_series = [&](double aa, double xx) {
        double sum = 1.0 / aa, term = sum;
        for (int n = 1; n < 500; ++n) {
            term *= xx / (aa + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-15) break;
        }
        return sum * std::exp(-xx + aa * std::log(xx) - std::lgamma(aa));
    };
    auto gamma_q_cf = [&](double aa, double xx) {
        double b = xx + 1.0 - aa, c = 1e300, d = 1.0 / b, f = d;
        for (int i = 1; i < 500; ++i) {
            const double an = -double(i) * (double(i) - aa);
            b += 2.0;
            d = an * d + b;
            if (std::abs(d) < 1e-300) d = 1e-300;
            c = b + an / c;
            if (std::abs(c) < 1e-300) c = 1e-300;
            d = 1.0 / d;
            const double del = d * c;
            f *= del;
            if (std::abs(del - 1.0) < 1e-15) break;
        }
        return f * std::exp(-xx + aa * std::log(xx) - std::lgamma(aa));
    };
    return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_cf(a, x);
}

// chi-square goodness-of-fit p-value for observed counts vs expected
inline double chi_square_pvalue(const std::vector<double>& observed,
                                const std::vector<double>& expected) {
    double stat = 0.0;
    int dof = -1;
    for (size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0.0) continue;
        const double d = observed[i] - expected[i];
        stat += d * d / expected[i];
        ++dof;
    }
    return gamma_q(dof / 2.0, stat / 2.0);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

inline double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size());
}

} // namespace oracle
