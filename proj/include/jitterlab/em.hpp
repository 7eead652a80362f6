#pragma once

// EM approximation to the ML estimate of x, with sigma_z^2 and sigma_w^2
// either integrated out as latent variables or held at known values.

#include "jitterlab/linear.hpp"

namespace jitterlab {

enum class VarianceMode { random, known };

struct EmConfig {
  QuadratureSettings quad;
  int max_iters = 200;
  double tol = 1e-6;
  VarianceMode variance_mode = VarianceMode::random;
  double known_sigma_z2 = 0.0;  // used in known mode
  double known_sigma_w2 = 0.0;

  static EmConfig known(double sigma_z2, double sigma_w2) {
    EmConfig c;
    c.variance_mode = VarianceMode::known;
    c.known_sigma_z2 = sigma_z2;
    c.known_sigma_w2 = sigma_w2;
    return c;
  }

  void validate() const {
    quad.validate();
    require(max_iters >= 1, "EmConfig: max_iters must be >= 1");
    require(tol > 0, "EmConfig: tol must be > 0");
  }
};

/// Rule set used for both the numerators and p(y_n | x). Known mode uses
/// single-node sigma rules; the z-rule branch still follows the prior mean.
inline HybridRules em_rules(const Hyperparams& hyper, const EmConfig& em) {
  em.validate();
  if (em.variance_mode == VarianceMode::random) return make_hybrid_rules(hyper, em.quad);
  std::optional<double> branch;
  if (!hyper.improper && hyper.alpha_z > 1) branch = hyper.mean_sigma_z2();
  return make_known_variance_rules(em.known_sigma_z2, em.known_sigma_w2, em.quad, branch);
}

struct EmExpectation {
  Matrix A;  // E[h_n h_n^T / sigma_w^2 | y_n, x_prev]
  Vector b;  // E[h_n / sigma_w^2 | y_n, x_prev] y_n
  LogDensity normalizer;  // p(y_n | x_prev)
};

/// The rows h_n(z) at every z node for every n. They do not depend on x, so
/// EM builds them once and reuses them across iterations.
class EmKernel {
public:
  EmKernel(const HybridRules& rules, const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t j1 = 0; j1 < rules.sigma_w2.size(); ++j1) {
      if (!(rules.sigma_w2.weights[j1] > 0.0)) continue;
      noise_var_.push_back(rules.sigma_w2.nodes[j1]);
      noise_logw_.push_back(std::log(rules.sigma_w2.weights[j1]) -
                            0.5 * (kLog2Pi + std::log(rules.sigma_w2.nodes[j1])));
    }
    std::vector<double> zs;
    for (std::size_t j2 = 0; j2 < rules.sigma_z2.size(); ++j2) {
      const QuadratureRule& zr = rules.jitter[j2];
      for (std::size_t j3 = 0; j3 < zr.size(); ++j3) {
        const double w = rules.sigma_z2.weights[j2] * zr.weights[j3];
        if (!(w > 0.0)) continue;
        zs.push_back(zr.nodes[j3]);
        comp_logw_.push_back(std::log(w));
      }
    }
    const int C = static_cast<int>(zs.size());
    rows_.resize(cfg.N());
    for (int n = 0; n < cfg.N(); ++n) {
      rows_[n].resize(cfg.K, C);
      for (int c = 0; c < C; ++c) {
        fill_h_row(cfg, n, zs[c], std::span<double>(rows_[n].col(c).data(), cfg.K));
      }
    }
    comp_lq_.resize(C);
    comp_lc_.resize(C);
  }

  int components() const { return static_cast<int>(comp_logw_.size()); }

  /// Log-domain accumulation of the E-step sums for observation n.
  EmExpectation expectation(int n, double y_n, const Vector& x_prev) const {
    const Matrix& R = rows_[n];
    const int C = components();
    const Vector means = R.transpose() * x_prev;
    std::vector<double>& lc = comp_lc_;
    std::vector<double>& lq = comp_lq_;
    double L = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) {
      const double r = y_n - means[c];
      // Over the noise nodes: lc = log sum_j1 w w1 N(.), lq = log sum_j1 w w1 N(.)/s_j1
      double m = -std::numeric_limits<double>::infinity();
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j1 = 0; j1 < noise_var_.size(); ++j1) {
        const double a = noise_logw_[j1] - 0.5 * r * r / noise_var_[j1];
        if (a <= m) {
          const double e = std::exp(a - m);
          s1 += e;
          s2 += e / noise_var_[j1];
        } else {
          const double scale = std::exp(m - a);
          s1 = s1 * scale + 1.0;
          s2 = s2 * scale + 1.0 / noise_var_[j1];
          m = a;
        }
      }
      lc[c] = comp_logw_[c] + m + std::log(s1);
      lq[c] = comp_logw_[c] + m + std::log(s2);
      L = std::max(L, lc[c]);
    }
    EmExpectation out;
    out.A = Matrix::Zero(cfg_.K, cfg_.K);
    out.b = Vector::Zero(cfg_.K);
    if (!std::isfinite(L)) {
      out.normalizer = {L, true};
      return out;
    }
    double Z = 0.0;
    for (int c = 0; c < C; ++c) Z += std::exp(lc[c] - L);
    out.normalizer = {L + std::log(Z), false};
    Vector coeff(C);
    for (int c = 0; c < C; ++c) coeff[c] = std::exp(lq[c] - L) / Z;
    out.A.noalias() = R * coeff.asDiagonal() * R.transpose();
    out.A = 0.5 * (out.A + out.A.transpose());
    out.b.noalias() = R * coeff * y_n;
    return out;
  }

  /// sum_n log p(y_n | x) under the same rules.
  double log_likelihood(const Vector& y, const Vector& x) const {
    double total = 0.0;
    for (int n = 0; n < cfg_.N(); ++n) total += log_density(n, y[n], x);
    return total;
  }

  double log_density(int n, double y_n, const Vector& x) const {
    const Vector means = rows_[n].transpose() * x;
    double m = -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (int c = 0; c < components(); ++c) {
      const double r = y_n - means[c];
      for (std::size_t j1 = 0; j1 < noise_var_.size(); ++j1) {
        const double a = comp_logw_[c] + noise_logw_[j1] - 0.5 * r * r / noise_var_[j1];
        if (a <= m) {
          s += std::exp(a - m);
        } else {
          s = s * std::exp(m - a) + 1.0;
          m = a;
        }
      }
    }
    return std::isfinite(m) ? m + std::log(s) : m;
  }

private:
  ModelConfig cfg_;
  std::vector<double> noise_var_, noise_logw_;
  std::vector<double> comp_logw_;
  std::vector<Matrix> rows_;  // per n: K x components
  // Scratch for expectation(); an EmKernel is used by one thread at a time.
  mutable std::vector<double> comp_lc_, comp_lq_;
};

/// E-step quantities for a single observation.
inline EmExpectation em_expectations(double y_n, int n, const Vector& x_prev,
                                     const Hyperparams& hyper, const ModelConfig& cfg,
                                     const EmConfig& em) {
  require(n >= 0 && n < cfg.N(), "em_expectations: n out of range");
  require(x_prev.size() == cfg.K, "em_expectations: x_prev must have length K");
  const EmKernel kernel(em_rules(hyper, em), cfg);
  EmExpectation e = kernel.expectation(n, y_n, x_prev);
  if (e.normalizer.underflow) {
    throw NumericalError("em_expectations: p(y_n | x) underflows for n = " +
                         std::to_string(n));
  }
  return e;
}

struct EmResult {
  Vector x_hat;
  int iterations = 0;
  bool converged = false;
  std::vector<double> log_likelihood;  // at x0, x1, ...
};

inline EmResult em_iterate(const Vector& y, const Vector& x0, const Hyperparams& hyper,
                           const ModelConfig& cfg, const EmConfig& em) {
  cfg.validate();
  require(y.size() == cfg.N(), "em_iterate: y must have length N");
  require(x0.size() == cfg.K && x0.allFinite(), "em_iterate: x0 must be finite, length K");
  const EmKernel kernel(em_rules(hyper, em), cfg);

  EmResult res;
  Vector x = x0;
  for (int it = 1; it <= em.max_iters; ++it) {
    Matrix A = Matrix::Zero(cfg.K, cfg.K);
    Vector b = Vector::Zero(cfg.K);
    double ll = 0.0;  // at the current x, from the E-step normalizers
    for (int n = 0; n < cfg.N(); ++n) {
      const EmExpectation e = kernel.expectation(n, y[n], x);
      if (e.normalizer.underflow) {
        throw NumericalError("em_iterate: p(y_n | x) underflows for n = " +
                             std::to_string(n) + " at iteration " + std::to_string(it));
      }
      A += e.A;
      b += e.b;
      ll += e.normalizer.log_value;
    }
    res.log_likelihood.push_back(ll);
    Eigen::LDLT<Matrix> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
      throw NumericalError("em_iterate: accumulated system is singular (rcond ~ " +
                           std::to_string(ldlt.rcond()) + ") at iteration " +
                           std::to_string(it));
    }
    const Vector next = ldlt.solve(b);
    const double denom = x.norm();
    const double change = denom > 0 ? (next - x).norm() / denom : (next - x).norm();
    x = next;
    res.iterations = it;
    if (change < em.tol) {
      res.converged = true;
      break;
    }
  }
  res.log_likelihood.push_back(kernel.log_likelihood(y, x));
  res.x_hat = x;
  return res;
}

}  // namespace jitterlab
