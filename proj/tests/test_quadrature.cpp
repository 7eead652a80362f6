#include <catch2/catch_amalgamated.hpp>

#include "jitterlab/quadrature.hpp"
#include "stat_oracles.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <thread>

using namespace jitterlab;
using Catch::Approx;

namespace {

// Closed-form moments of each weight function.
double hermite_moment(int p) {
  if (p % 2) return 0.0;
  return std::tgamma((p + 1) / 2.0);
}
double legendre_moment(int p) { return p % 2 ? 0.0 : 2.0 / (p + 1); }
double laguerre_moment(int p, double a) { return std::tgamma(a + p + 1.0); }

void check_exactness(const QuadratureRule& rule, int J, auto moment) {
  for (int p = 0; p <= 2 * J - 1; ++p) {
    double sum = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < rule.size(); ++j) {
      const double term = rule.weights[j] * std::pow(rule.nodes[j], p);
      sum += term;
      scale += std::abs(term);
    }
    INFO("J = " << J << ", degree " << p);
    REQUIRE(std::abs(sum - moment(p)) <= 1e-9 * std::max(std::abs(moment(p)), scale));
  }
}

void check_shape(const QuadratureRule& rule) {
  for (std::size_t j = 0; j < rule.size(); ++j) {
    REQUIRE(rule.weights[j] > 0.0);
    if (j > 0) REQUIRE(rule.nodes[j] > rule.nodes[j - 1]);
  }
}

}  // namespace

TEST_CASE("Golub-Welsch closed-form rules", "[quadrature]") {
  const QuadratureRule h1 = gauss_hermite(1);
  CHECK(h1.nodes[0] == 0.0);
  CHECK(h1.weights[0] == Approx(std::sqrt(kPi)).epsilon(1e-15));

  const QuadratureRule l2 = gauss_legendre(2);
  CHECK(l2.nodes[0] == Approx(-1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(l2.nodes[1] == Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(l2.weights[0] == Approx(1.0).epsilon(1e-14));
  CHECK(l2.weights[1] == Approx(1.0).epsilon(1e-14));

  const QuadratureRule g2 = gauss_laguerre(2, 0.0);
  CHECK(g2.nodes[0] == Approx(2.0 - std::sqrt(2.0)).epsilon(1e-14));
  CHECK(g2.nodes[1] == Approx(2.0 + std::sqrt(2.0)).epsilon(1e-14));
  CHECK(g2.weights[0] == Approx((2.0 + std::sqrt(2.0)) / 4.0).epsilon(1e-14));
  CHECK(g2.weights[1] == Approx((2.0 - std::sqrt(2.0)) / 4.0).epsilon(1e-14));

  CHECK_THROWS_AS(gauss_hermite(0), std::invalid_argument);
  CHECK_THROWS_AS(gauss_laguerre(3, -1.0), std::invalid_argument);
}

TEST_CASE("polynomial exactness up to degree 2J - 1", "[quadrature]") {
  for (int J = 1; J <= 20; ++J) {
    const QuadratureRule h = gauss_hermite(J);
    const QuadratureRule l = gauss_legendre(J);
    check_shape(h);
    check_shape(l);
    check_exactness(h, J, hermite_moment);
    check_exactness(l, J, legendre_moment);
    for (double a : {0.0, -0.5, 1.5, 20.5}) {
      const QuadratureRule g = gauss_laguerre(J, a);
      check_shape(g);
      check_exactness(g, J, [a](int p) { return laguerre_moment(p, a); });
    }
  }
}

TEST_CASE("inverse-Gamma rule", "[quadrature]") {
  for (int J : {1, 2, 5, 9, 15, 20}) {
    for (auto [alpha, beta] : {std::pair{2.0, 1.0}, {6.5, 5.5}, {21.5, 1.28125}, {0.7, 3.0}}) {
      const QuadratureRule r = inverse_gamma_rule(J, alpha, beta);
      check_shape(r);
      REQUIRE(r.weight_sum() == Approx(1.0).margin(1e-10));
    }
  }

  const QuadratureRule one = inverse_gamma_rule(1, 6.5, 5.5);
  CHECK(one.nodes[0] == Approx(5.5 / 6.5).epsilon(1e-15));
  CHECK(one.weights[0] == Approx(1.0).epsilon(1e-15));

  const QuadratureRule r9 = inverse_gamma_rule(9, 21.5, 1.28125);
  CHECK(r9.integrate([](double s) { return s; }) == Approx(0.0625).epsilon(1e-4));

  // Mean error shrinks as the rule grows.
  double prev = std::numeric_limits<double>::infinity();
  for (int J = 2; J <= 15; ++J) {
    const double err =
        std::abs(inverse_gamma_rule(J, 21.5, 1.28125).integrate([](double s) { return s; }) - 0.0625);
    INFO("J = " << J << " error " << err);
    REQUIRE(err <= prev * 1.0001 + 1e-16);
    prev = err;
  }

  CHECK_THROWS_AS(inverse_gamma_rule(9, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(inverse_gamma_rule(9, 2.0, -1.0), std::invalid_argument);
}

TEST_CASE("jitter rules", "[quadrature]") {
  SECTION("Hermite branch") {
    const QuadratureRule r = jitter_rule(0.0625, 129, 0.005);
    CHECK(r.kind == RuleKind::normal_hermite);
    check_shape(r);
    CHECK(r.weight_sum() == Approx(1.0).margin(1e-12));
    CHECK(r.integrate([](double z) { return z * z; }) == Approx(0.0625).epsilon(1e-6));
  }
  SECTION("Legendre branch") {
    const QuadratureRule r = jitter_rule(0.0625, 129, 0.5625);
    CHECK(r.kind == RuleKind::normal_legendre);
    check_shape(r);
    CHECK(r.nodes.front() == Approx(-6 * 0.25).epsilon(0.01));
    CHECK(r.weight_sum() == Approx(1.0).margin(1e-8));
    CHECK(r.integrate([](double z) { return z * z; }) == Approx(0.0625).epsilon(1e-6));
  }
  SECTION("branch switches at 0.01") {
    CHECK(jitter_rule(0.01, 9, 0.00999).kind == RuleKind::normal_hermite);
    CHECK(jitter_rule(0.01, 9, 0.01).kind == RuleKind::normal_legendre);
  }
  CHECK_THROWS_AS(jitter_rule(0.0, 9, 0.1), std::invalid_argument);
}

TEST_CASE("rule cache is safe under concurrent readers", "[quadrature]") {
  std::vector<std::thread> threads;
  std::vector<double> sums(8);
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([t, &sums] {
      double s = 0.0;
      for (int rep = 0; rep < 50; ++rep) s += inverse_gamma_rule(3 + rep % 7, 21.5, 1.0).weight_sum();
      sums[t] = s;
    });
  }
  for (auto& th : threads) th.join();
  for (double s : sums) CHECK(s == Approx(50.0).margin(1e-8));
}

namespace {

struct Fig3Setup {
  ModelConfig cfg{.K = 10, .M = 4};
  Hyperparams hyper;
  Vector x;
};

Fig3Setup fig3(double e_sz, double e_sw) {
  Fig3Setup s;
  s.hyper = hyperparams_from_expected(s.cfg.K, s.cfg.N(), e_sz * e_sz, e_sw * e_sw);
  s.x = synthesize(s.cfg, s.hyper, 42).x_true;
  return s;
}

}  // namespace

TEST_CASE("marginal likelihood is positive and finite", "[quadrature]") {
  const Fig3Setup s = fig3(0.75, 0.1);
  for (int n = 0; n < s.cfg.N(); n += 3) {
    for (double y : {-2.0, -0.3, 0.0, 0.4, 1.7}) {
      const LogDensity d = marginal_likelihood(y, s.x, n, s.hyper, s.cfg);
      REQUIRE_FALSE(d.underflow);
      REQUIRE(std::isfinite(d.log_value));
      REQUIRE(d.value() > 0.0);
    }
  }
}

TEST_CASE("marginal likelihood with x = 0 collapses to a scale mixture", "[quadrature]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams hyper = hyperparams_from_expected(10, 40, 0.75 * 0.75, 0.1 * 0.1);
  const InverseGammaParams noise = hyper.noise();
  boost::math::quadrature::exp_sinh<double> integrator;
  for (double y : {0.0, 0.03, 0.1, 0.2}) {
    const double ref = integrator.integrate(
        [&](double s) {
          return std::exp(log_normal_pdf(y, 0.0, s) + inverse_gamma_logpdf(s, noise));
        },
        0.0, std::numeric_limits<double>::infinity());
    const double q = marginal_likelihood(y, Vector::Zero(10), 7, hyper, cfg).value();
    INFO("y = " << y);
    REQUIRE(q == Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("marginal likelihood does not depend on summation order", "[quadrature]") {
  const Fig3Setup s = fig3(0.25, 0.1);
  const HybridRules rules = make_hybrid_rules(s.hyper, {});
  const int n = 11;
  const double y = 0.37;
  // Reverse nesting: z innermost-first, then sigma_z^2, then sigma_w^2.
  long double total = 0.0L;
  for (std::size_t j2 = rules.sigma_z2.size(); j2-- > 0;) {
    const QuadratureRule& zr = rules.jitter[j2];
    for (std::size_t j3 = zr.size(); j3-- > 0;) {
      const double mean = h_row_dot(s.cfg, n, zr.nodes[j3], s.x);
      for (std::size_t j1 = rules.sigma_w2.size(); j1-- > 0;) {
        const double v = rules.sigma_w2.nodes[j1];
        total += static_cast<long double>(rules.sigma_w2.weights[j1]) * rules.sigma_z2.weights[j2] *
                 zr.weights[j3] * std::exp(-0.5 * (y - mean) * (y - mean) / v) /
                 std::sqrt(2 * kPi * v);
      }
    }
  }
  const double q = marginal_likelihood(y, s.x, n, s.hyper, s.cfg).value();
  CHECK(q == Approx(static_cast<double>(total)).epsilon(1e-12));
}

TEST_CASE("marginal likelihood matches a Monte Carlo histogram", "[quadrature]") {
  for (double e_sz : {0.25, 0.75}) {
    const Fig3Setup s = fig3(e_sz, 0.1);
    const int n = 9;
    Rng rng(derive_seed(17, static_cast<std::uint64_t>(e_sz * 100)));
    std::normal_distribution<double> std_normal;
    std::vector<double> draws(100000);
    for (double& y : draws) {
      const double sw2 = sample_inverse_gamma(s.hyper.noise(), rng);
      const double sz2 = sample_inverse_gamma(s.hyper.jitter(), rng);
      const double z = std::sqrt(sz2) * std_normal(rng);
      y = h_row_dot(s.cfg, n, z, s.x) + std::sqrt(sw2) * std_normal(rng);
    }
    std::sort(draws.begin(), draws.end());

    const ObservationMixture mix(make_hybrid_rules(s.hyper, {}), s.cfg, n, s.x);
    const int bins = 25;
    const std::size_t per_bin = draws.size() / bins;
    std::vector<double> q_avg(bins), mc_avg(bins);
    for (int b = 0; b < bins; ++b) {
      const double lo = b == 0 ? draws.front() : 0.5 * (draws[b * per_bin - 1] + draws[b * per_bin]);
      const std::size_t hi_idx = (b + 1) * per_bin;
      const double hi = hi_idx >= draws.size() ? draws.back()
                                               : 0.5 * (draws[hi_idx - 1] + draws[hi_idx]);
      const std::size_t count = (b + 1 == bins) ? draws.size() - b * per_bin : per_bin;
      mc_avg[b] = count / (draws.size() * (hi - lo));
      // Composite Simpson over the bin.
      const int m = 400;
      const double h = (hi - lo) / m;
      double acc = 0.0;
      for (int i = 0; i <= m; ++i) {
        const double c = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += c * mix.log_density(lo + i * h).value();
      }
      q_avg[b] = acc * h / 3.0 / (hi - lo);
    }
    const double peak = *std::max_element(q_avg.begin(), q_avg.end());
    double worst = 0.0;
    for (int b = 0; b < bins; ++b) {
      if (q_avg[b] < 0.1 * peak) continue;
      worst = std::max(worst, std::abs(q_avg[b] - mc_avg[b]) / q_avg[b]);
    }
    INFO("E[sigma_z] = " << e_sz << " worst relative deviation " << worst);
    CHECK(worst < 0.05);
  }
}
