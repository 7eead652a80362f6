#pragma once

// Linear MMSE estimators with and without jitter modelling.

#include "jitterlab/quadrature.hpp"

namespace jitterlab {

/// Noise-to-signal ratio of prior means, beta_w (alpha_x - 1) / (beta_x (alpha_w - 1)).
inline double prior_noise_ratio(const Hyperparams& hyper) {
  return hyper.beta_w * (hyper.alpha_x - 1.0) / (hyper.beta_x * (hyper.alpha_w - 1.0));
}

/// E[H(z)] under the hierarchical jitter prior.
inline Matrix expected_h(const Hyperparams& hyper, const ModelConfig& cfg,
                         const QuadratureSettings& q = {}) {
  cfg.validate();
  const HybridRules rules = make_hybrid_rules(hyper, q);
  Matrix out = Matrix::Zero(cfg.N(), cfg.K);
  std::vector<double> row(cfg.K);
  for (std::size_t j2 = 0; j2 < rules.sigma_z2.size(); ++j2) {
    const QuadratureRule& zr = rules.jitter[j2];
    const double w2 = rules.sigma_z2.weights[j2];
    for (int n = 0; n < cfg.N(); ++n) {
      for (std::size_t j3 = 0; j3 < zr.size(); ++j3) {
        fill_h_row(cfg, n, zr.nodes[j3], row);
        const double w = w2 * zr.weights[j3];
        for (int k = 0; k < cfg.K; ++k) out(n, k) += w * row[k];
      }
    }
  }
  return out;
}

/// E[H(z) H(z)^T]. Rows share sigma_z^2 but are independent given it, so
/// off-diagonal entries average products of conditional row means and the
/// diagonal averages squared row norms.
inline Matrix expected_hht(const Hyperparams& hyper, const ModelConfig& cfg,
                           const QuadratureSettings& q = {}) {
  cfg.validate();
  const HybridRules rules = make_hybrid_rules(hyper, q);
  const int N = cfg.N();
  Matrix out = Matrix::Zero(N, N);
  Matrix cond_mean(N, cfg.K);
  Vector cond_sq(N);
  std::vector<double> row(cfg.K);
  for (std::size_t j2 = 0; j2 < rules.sigma_z2.size(); ++j2) {
    const QuadratureRule& zr = rules.jitter[j2];
    cond_mean.setZero();
    cond_sq.setZero();
    for (int n = 0; n < N; ++n) {
      for (std::size_t j3 = 0; j3 < zr.size(); ++j3) {
        fill_h_row(cfg, n, zr.nodes[j3], row);
        double sq = 0.0;
        for (int k = 0; k < cfg.K; ++k) {
          cond_mean(n, k) += zr.weights[j3] * row[k];
          sq += row[k] * row[k];
        }
        cond_sq[n] += zr.weights[j3] * sq;
      }
    }
    Matrix block = cond_mean * cond_mean.transpose();
    block.diagonal() = cond_sq;
    out += rules.sigma_z2.weights[j2] * block;
  }
  return 0.5 * (out + out.transpose());
}

/// Everything an LMMSE estimator needs that does not depend on y.
struct LmmsePrecompute {
  Matrix e_h;    // N x K
  Matrix e_hht;  // N x N
  double ratio = 0.0;
  Matrix gain;   // K x N, applied to y
  Eigen::LLT<Matrix> system;  // factor of e_hht + ratio I
  double prior_sigma_x2 = 1.0;

  Vector apply(const Vector& y) const {
    require(y.size() == gain.cols(), "LmmsePrecompute: y has wrong length");
    return gain * y;
  }
};

inline LmmsePrecompute make_lmmse(Matrix e_h, Matrix e_hht,
                                  const Hyperparams& hyper) {
  hyper.validate();
  require(!hyper.improper && hyper.alpha_x > 1 && hyper.alpha_w > 1,
          "LMMSE needs finite prior means (alpha_x, alpha_w > 1)");
  LmmsePrecompute pre;
  pre.ratio = prior_noise_ratio(hyper);
  pre.prior_sigma_x2 = hyper.mean_sigma_x2();
  pre.e_h = std::move(e_h);
  pre.e_hht = std::move(e_hht);
  Matrix S = pre.e_hht;
  S.diagonal().array() += pre.ratio;
  pre.system.compute(S);
  if (pre.system.info() != Eigen::Success) {
    throw NumericalError("LMMSE: system matrix is not positive definite (rcond ~ " +
                         std::to_string(pre.system.rcond()) + ")");
  }
  pre.gain = pre.system.solve(pre.e_h).transpose();
  return pre;
}

/// Jitter-aware estimator: E[H]^T (E[HH^T] + ratio I)^{-1}.
inline LmmsePrecompute make_jitter_lmmse(const Hyperparams& hyper,
                                         const ModelConfig& cfg,
                                         const QuadratureSettings& q = {}) {
  return make_lmmse(expected_h(hyper, cfg, q), expected_hht(hyper, cfg, q), hyper);
}

/// Baseline that ignores jitter: H(0)^T (H(0) H(0)^T + ratio I)^{-1}.
inline LmmsePrecompute make_no_jitter_lmmse(const Hyperparams& hyper,
                                            const ModelConfig& cfg) {
  Matrix H0 = build_h_matrix(Vector::Zero(cfg.N()), cfg);
  Matrix G = H0 * H0.transpose();
  return make_lmmse(std::move(H0), std::move(G), hyper);
}

inline Vector lmmse_estimate(const Vector& y, const LmmsePrecompute& pre) {
  require(y.size() == pre.e_h.rows(), "lmmse_estimate: y has wrong length");
  return pre.e_h.transpose() * pre.system.solve(y);
}

inline Matrix lmmse_error_cov(const LmmsePrecompute& pre) {
  const Eigen::Index K = pre.e_h.cols();
  Matrix cov = pre.prior_sigma_x2 *
               (Matrix::Identity(K, K) - pre.e_h.transpose() * pre.system.solve(pre.e_h));
  return 0.5 * (cov + cov.transpose());
}

inline Matrix lmmse_error_cov(const LmmsePrecompute& pre, const Hyperparams& hyper) {
  require(std::abs(pre.prior_sigma_x2 - hyper.mean_sigma_x2()) <=
              1e-12 * std::abs(pre.prior_sigma_x2),
          "lmmse_error_cov: precompute built from different hyperparameters");
  return lmmse_error_cov(pre);
}

inline Vector lmmse_no_jitter(const Vector& y, const ModelConfig& cfg,
                              const Hyperparams& hyper) {
  return lmmse_estimate(y, make_no_jitter_lmmse(hyper, cfg));
}

/// Leading factor is the prior mean of sigma_x^2, matching the jitter-aware
/// error covariance.
inline Matrix lmmse_no_jitter_error_cov(const ModelConfig& cfg,
                                        const Hyperparams& hyper) {
  return lmmse_error_cov(make_no_jitter_lmmse(hyper, cfg));
}

/// LMMSE with the jitter treated as known: H(z)^T (H(z) H(z)^T + (s_w/s_x) I)^{-1} y.
inline Vector fixed_jitter_lmmse(const Vector& y, const Vector& z,
                                 double sigma_x2, double sigma_w2,
                                 const ModelConfig& cfg) {
  const Matrix H = build_h_matrix(z, cfg);
  Matrix S = H * H.transpose();
  S.diagonal().array() += sigma_w2 / sigma_x2;
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("fixed_jitter_lmmse: system matrix is not positive definite");
  }
  return H.transpose() * llt.solve(y);
}

}  // namespace jitterlab
