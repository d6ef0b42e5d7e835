#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ardx/likelihood.hpp"
#include "ardx/rng.hpp"
#include "ardx/tensor.hpp"
#include "oracles.hpp"

using namespace ardx;

TEST_CASE("two-bin symmetric gaussian splits the mass") {
    const BinSpec b(-1, 1, 2);
    const GaussianParams p{0.0, 0.0};
    CHECK(discretized_gaussian_logpmf(-1.0, p, b) == doctest::Approx(-std::log(2.0)));
    CHECK(discretized_gaussian_logpmf(1.0, p, b) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("gaussian head matches the closed-form oracle") {
    const BinSpec b(-5, 5, 51);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const GaussianParams p{rng.uniform(-3, 3), rng.uniform(-2, 1)};
        const double x = b.center(rng.uniform_int(b.count));
        const double got = discretized_gaussian_logpmf(x, p, b);
        const double want = oracle::disc_gauss_logpmf(x, p.mu, std::exp(p.log_sigma), b.lo, b.hi,
                                                      b.count, kLogProbFloor);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
    // frozen spot checks, standard normal head
    CHECK(discretized_gaussian_logpmf(0.0, {0, 0}, b) ==
          doctest::Approx(-2.5300420015472385).epsilon(1e-12));
    CHECK(discretized_gaussian_logpmf(1.0, {0, 0}, b) ==
          doctest::Approx(-3.0283781091358547).epsilon(1e-12));
    CHECK(discretized_gaussian_logpmf(3.0, {0, 0}, b) ==
          doctest::Approx(-7.0151065669509839).epsilon(1e-12));
}

TEST_CASE("normalization: both heads sum to one over the bins") {
    Rng rng(17);
    const BinSpec img(-1, 1, 256);
    for (int trial = 0; trial < 100; ++trial) {
        const GaussianParams gp{rng.uniform(-1.5, 1.5), rng.uniform(-4, 1)};
        double s = 0.0;
        for (double v : gaussian_bin_pmf(gp, img)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));

        LogisticMixtureParams mix;
        const int k = 1 + rng.uniform_int(5);
        for (int i = 0; i < k; ++i)
            mix.push_back({rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(-5, 0.5)});
        double s2 = 0.0;
        for (double v : logistic_mixture_bin_pmf(mix, img)) s2 += v;
        CHECK(s2 == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("narrow gaussian concentrates on the center bin") {
    const BinSpec b(-5, 5, 51);
    const double sigma = b.width() / 100.0;
    const GaussianParams p{b.center(30), std::log(sigma)};
    CHECK(std::exp(discretized_gaussian_logpmf(b.center(30), p, b)) > 0.999);
    for (int k = 0; k < b.count; ++k) {
        if (k == 30) continue;
        CHECK(discretized_gaussian_logpmf(b.center(k), p, b) == kLogProbFloor);
    }
}

TEST_CASE("single-component mixture reduces to a discretized logistic") {
    const BinSpec b(-1, 1, 256);
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const double mu = rng.uniform(-1, 1), ls = rng.uniform(-4, 0);
        const double logit = rng.uniform(-3, 3); // any weight normalizes away
        const double x = b.center(rng.uniform_int(b.count));
        const double got = discretized_logistic_mixture_logpmf(x, {{logit, mu, ls}}, b);
        const double want = distmath::logistic_bin_eval(x, mu, ls, b, kLogProbFloor).val;
        CHECK(got == want);
    }
}

TEST_CASE("duplicated mixture components collapse") {
    const BinSpec b(-1, 1, 256);
    for (const double w : {0.0, 0.3, 2.0, -1.0}) {
        // components identical: the weight split cannot matter
        const LogisticMixtureParams two = {{w, 0.2, -1.0}, {std::log1p(-0.0) - w, 0.2, -1.0}};
        const LogisticMixtureParams one = {{0.0, 0.2, -1.0}};
        for (const double x : {-1.0, -0.5, 0.0, 0.25, 1.0})
            CHECK(discretized_logistic_mixture_logpmf(x, two, b) ==
                  doctest::Approx(discretized_logistic_mixture_logpmf(x, one, b)).epsilon(1e-12));
    }
}

TEST_CASE("bits_per_dim conversions") {
    CHECK(bits_per_dim(std::log(2.0) * 7, 7) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(bits_per_dim(10 * std::log(256.0), 10) == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(bits_per_dim(0.0, 3) == 0.0);
    CHECK_THROWS_AS(bits_per_dim(1.0, 0), std::invalid_argument);
}

TEST_CASE("cumulative bin mass is nondecreasing") {
    const BinSpec b(-5, 5, 51);
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const GaussianParams p{rng.uniform(-2, 2), rng.uniform(-3, 1)};
        double cum = 0.0, prev = 0.0;
        for (double v : gaussian_bin_pmf(p, b)) {
            cum += v;
            CHECK(cum >= prev);
            prev = cum;
        }
    }
}

TEST_CASE("gradients match finite differences away from the floor") {
    const BinSpec b(-5, 5, 51);
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor packed(Shape{3}, {b.center(20 + rng.uniform_int(10)), rng.uniform(-1, 1),
                                       rng.uniform(-1.0, 0.5)});
        for (const bool gauss : {true, false}) {
            const double err = finite_diff_check(
                [&](Tape& t, Ref p) {
                    const Ref x = t.slice(p, {0}, {1}, {1});
                    const Ref mu = t.slice(p, {1}, {2}, {1});
                    const Ref ls = t.slice(p, {2}, {3}, {1});
                    return t.sum(gauss ? t.gaussian_bin_logpmf(x, mu, ls, b)
                                       : t.logistic_bin_logpmf(x, mu, ls, b));
                },
                packed, 1e-5);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("translation by one bin width leaves interior masses unchanged") {
    const BinSpec b(-5, 5, 51);
    Rng rng(37);
    for (int trial = 0; trial < 30; ++trial) {
        const double mu = rng.uniform(-2, 2), ls = rng.uniform(-2, 1);
        const double x = b.center(10 + rng.uniform_int(25)); // interior before and after shift
        const double base = discretized_gaussian_logpmf(x, {mu, ls}, b);
        const double shifted = discretized_gaussian_logpmf(x + b.width(), {mu + b.width(), ls}, b);
        CHECK(shifted == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("mixture rejects empty component list") {
    CHECK_THROWS_AS(discretized_logistic_mixture_logpmf(0.0, {}, BinSpec(-1, 1, 256)),
                    std::invalid_argument);
}
