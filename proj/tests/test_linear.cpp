#include <catch2/catch_amalgamated.hpp>

#include "jitterlab/linear.hpp"
#include "stat_oracles.hpp"

using namespace jitterlab;
using Catch::Approx;

namespace {

Hyperparams near_zero_jitter(const ModelConfig& cfg, double e_sw2 = 0.01) {
  return hyperparams_from_expected(cfg.K, cfg.N(), 1e-12, e_sw2);
}

}  // namespace

TEST_CASE("expectations collapse to H(0) without jitter", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams h = near_zero_jitter(cfg);
  const Matrix H0 = build_h_matrix(Vector::Zero(cfg.N()), cfg);
  const Matrix eh = expected_h(h, cfg);
  const Matrix ehht = expected_hht(h, cfg);
  CHECK((eh - H0).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((ehht - H0 * H0.transpose()).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((ehht - ehht.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  const Vector y = synthesize(cfg, h, 5).y;
  const Vector a = lmmse_estimate(y, make_jitter_lmmse(h, cfg));
  const Vector b = lmmse_no_jitter(y, cfg, h);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("expected H is bounded and matches Monte Carlo", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
  const Matrix eh = expected_h(h, cfg);
  CHECK(eh.cwiseAbs().maxCoeff() <= 1.0);

  // Antithetic pairs (z, -z) over 10^6 draws of (sigma_z^2, z).
  Rng rng(8);
  std::normal_distribution<double> std_normal;
  const int pairs = 500000;
  Matrix acc = Matrix::Zero(cfg.N(), cfg.K);
  std::vector<double> row(cfg.K);
  for (int i = 0; i < pairs; ++i) {
    const double sz = std::sqrt(sample_inverse_gamma(h.jitter(), rng));
    const double u = std_normal(rng);
    for (int n = 0; n < cfg.N(); ++n) {
      for (double z : {sz * u, -sz * u}) {
        fill_h_row(cfg, n, z, row);
        for (int k = 0; k < cfg.K; ++k) acc(n, k) += row[k];
      }
    }
  }
  acc /= 2.0 * pairs;
  CHECK((eh - acc).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("expected HH^T matches joint Monte Carlo draws", "[linear]") {
  ModelConfig cfg{.K = 4, .M = 2};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
  const Matrix ehht = expected_hht(h, cfg);
  CHECK((ehht - ehht.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(9);
  std::normal_distribution<double> std_normal;
  Matrix acc = Matrix::Zero(cfg.N(), cfg.N());
  Vector z(cfg.N());
  Matrix H;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const double sz = std::sqrt(sample_inverse_gamma(h.jitter(), rng));
    for (auto& v : z) v = sz * std_normal(rng);
    build_h_matrix_fast(z, cfg, H);
    acc.noalias() += H * H.transpose();
  }
  acc /= draws;
  CHECK((ehht - acc).cwiseAbs().maxCoeff() < 2e-3);
}

TEST_CASE("LMMSE is a linear map of y", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
  const LmmsePrecompute pre = make_jitter_lmmse(h, cfg);
  CHECK(lmmse_estimate(Vector::Zero(cfg.N()), pre).isZero(0.0));
  CHECK(lmmse_no_jitter(Vector::Zero(cfg.N()), cfg, h).isZero(0.0));

  const Vector y1 = synthesize(cfg, h, 1).y;
  const Vector y2 = synthesize(cfg, h, 2).y;
  const Vector lhs = lmmse_estimate(2.5 * y1 - 0.7 * y2, pre);
  const Vector rhs = 2.5 * lmmse_estimate(y1, pre) - 0.7 * lmmse_estimate(y2, pre);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((pre.apply(y1) - lmmse_estimate(y1, pre)).cwiseAbs().maxCoeff() < 1e-10);

  // The symmetric solve leaves a small residual.
  Matrix S = pre.e_hht;
  S.diagonal().array() += pre.ratio;
  const Vector s = pre.system.solve(y1);
  CHECK((S * s - y1).norm() / y1.norm() < 1e-10);

  CHECK_THROWS_AS(lmmse_estimate(Vector::Zero(3), pre), std::invalid_argument);
}

TEST_CASE("scalar shrinkage at the Nyquist rate", "[linear]") {
  ModelConfig cfg{.K = 6, .M = 1};
  const Hyperparams h = hyperparams_from_expected(6, 6, 0.01, 0.04);
  const double r = prior_noise_ratio(h);
  CHECK(r == Approx(h.mean_sigma_w2() / h.mean_sigma_x2()).epsilon(1e-14));
  const Vector y = Vector::LinSpaced(6, -1.0, 2.0);
  CHECK((lmmse_no_jitter(y, cfg, h) - y / (1.0 + r)).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix cov = lmmse_no_jitter_error_cov(cfg, h);
  const Matrix expected = h.mean_sigma_x2() * r / (1.0 + r) * Matrix::Identity(6, 6);
  CHECK((cov - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("error covariances are bounded PSD matrices", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
  for (const Matrix& cov : {lmmse_error_cov(make_jitter_lmmse(h, cfg), h),
                            lmmse_no_jitter_error_cov(cfg, h)}) {
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(cov.trace() <= cfg.K * h.mean_sigma_x2());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
  Hyperparams other = h;
  other.beta_x *= 2.0;
  CHECK_THROWS_AS(lmmse_error_cov(make_jitter_lmmse(h, cfg), other), std::invalid_argument);
}

TEST_CASE("error covariance traces match Monte Carlo MSE", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const int trials = 10000;

  SECTION("jitter-aware estimator on jittered data") {
    const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
    const LmmsePrecompute pre = make_jitter_lmmse(h, cfg);
    double se = 0.0;
    for (int t = 0; t < trials; ++t) {
      const SyntheticInstance s = synthesize(cfg, h, derive_seed(21, t));
      se += (lmmse_estimate(s.y, pre) - s.x_true).squaredNorm();
    }
    CHECK(se / trials == Approx(lmmse_error_cov(pre).trace()).epsilon(0.05));
  }

  SECTION("no-jitter estimator on jitter-free data") {
    const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
    const LmmsePrecompute pre = make_no_jitter_lmmse(h, cfg);
    SynthOverrides pins;
    pins.sigma_z2 = 0.0;
    double se = 0.0;
    for (int t = 0; t < trials; ++t) {
      const SyntheticInstance s = synthesize(cfg, h, derive_seed(22, t), pins);
      se += (lmmse_estimate(s.y, pre) - s.x_true).squaredNorm();
    }
    CHECK(se / trials == Approx(lmmse_no_jitter_error_cov(cfg, h).trace()).epsilon(0.05));
  }
}

TEST_CASE("modelling the jitter lowers the LMMSE error", "[linear]") {
  ModelConfig cfg{.K = 10, .M = 4};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.25 * 0.25, 0.01);
  const LmmsePrecompute jit = make_jitter_lmmse(h, cfg);
  const LmmsePrecompute nojit = make_no_jitter_lmmse(h, cfg);
  double a = 0.0, b = 0.0;
  for (int t = 0; t < 500; ++t) {
    const SyntheticInstance s = synthesize(cfg, h, derive_seed(23, t));
    a += (lmmse_estimate(s.y, jit) - s.x_true).squaredNorm();
    b += (lmmse_estimate(s.y, nojit) - s.x_true).squaredNorm();
  }
  CHECK(a < b);
}

TEST_CASE("fixed-jitter LMMSE with the true jitter and no noise is exact", "[linear]") {
  ModelConfig cfg{.K = 5, .M = 3};
  const Hyperparams h = hyperparams_from_expected(cfg.K, cfg.N(), 0.04, 0.01);
  SynthOverrides pins;
  pins.sigma_w2 = 0.0;
  const SyntheticInstance s = synthesize(cfg, h, 3, pins);
  const Vector xh = fixed_jitter_lmmse(s.y, s.z_true, s.sigma_x2, 1e-14, cfg);
  CHECK((xh - s.x_true).cwiseAbs().maxCoeff() < 1e-6);
}
