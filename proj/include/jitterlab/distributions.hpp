#pragma once

// Inverse-Gamma and multivariate Normal variates, and the unnormalized jitter
// conditional targeted by the slice sampler. Everything density-related is in
// log space.

#include "jitterlab/generator.hpp"

namespace jitterlab {

struct InverseGammaParams {
  double alpha = 1.0;  // shape
  double beta = 1.0;   // scale

  void validate() const {
    require(alpha > 0.0 && beta > 0.0,
            "InverseGammaParams: alpha and beta must be > 0");
  }
  double mean() const { return beta / (alpha - 1.0); }
  double variance() const {
    return beta * beta / ((alpha - 1.0) * (alpha - 1.0) * (alpha - 2.0));
  }
};

inline double inverse_gamma_logpdf(double s, const InverseGammaParams& p) {
  require(s > 0.0, "inverse_gamma_logpdf: s must be > 0");
  return p.alpha * std::log(p.beta) - std::lgamma(p.alpha) -
         (p.alpha + 1.0) * std::log(s) - p.beta / s;
}

/// beta / g with g ~ Gamma(alpha, 1).
template <class URBG>
double sample_inverse_gamma(const InverseGammaParams& p, URBG& rng) {
  p.validate();
  std::gamma_distribution<double> gamma(p.alpha, 1.0);
  double g = gamma(rng);
  // A zero draw is only possible for tiny shapes; redraw rather than return inf.
  while (!(g > 0.0)) g = gamma(rng);
  return p.beta / g;
}

template <class URBG>
Vector standard_normal_vector(Eigen::Index d, URBG& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector u(d);
  for (Eigen::Index i = 0; i < d; ++i) u[i] = normal(rng);
  return u;
}

/// mu + L u with cov = L L^T. Non-SPD input is reported, never regularized.
template <class URBG>
Vector sample_mvn(const Vector& mu, const Matrix& cov, URBG& rng) {
  require(cov.rows() == cov.cols() && cov.rows() == mu.size(),
          "sample_mvn: dimension mismatch");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("sample_mvn: covariance is not positive definite");
  }
  return mu + llt.matrixL() * standard_normal_vector(mu.size(), rng);
}

/// log[ N(y_n; h_n(z_n)^T x, sigma_w2) N(z_n; 0, sigma_z2) ], both
/// normalizing constants included.
inline double log_unnormalized_z_conditional(double z_n, int n, double y_n,
                                             const Vector& x, double sigma_z2,
                                             double sigma_w2,
                                             const ModelConfig& cfg) {
  const double mean = h_row_dot(cfg, n, z_n, x);
  return log_normal_pdf(y_n, mean, sigma_w2) + log_normal_pdf(z_n, 0.0, sigma_z2);
}

/// Upper bound of the function above over z_n: -ln(2 pi sigma_z sigma_w).
inline double log_z_conditional_bound(double sigma_z2, double sigma_w2) {
  return -std::log(2.0 * kPi) - 0.5 * std::log(sigma_z2 * sigma_w2);
}

}  // namespace jitterlab
