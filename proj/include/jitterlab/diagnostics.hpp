#pragma once

// Multivariate potential scale reduction factor over parallel chains.

#include "jitterlab/sampler.hpp"

namespace jitterlab {

/// Per chain a d x i matrix whose column j is the combined state vector
/// (x, z, sigma_x^2, sigma_z^2, sigma_w^2) after iteration j + 1.
struct ChainTraces {
  std::vector<Matrix> chains;

  int count() const { return static_cast<int>(chains.size()); }
  Eigen::Index dimension() const { return chains.empty() ? 0 : chains.front().rows(); }
  Eigen::Index length() const { return chains.empty() ? 0 : chains.front().cols(); }

  void validate() const {
    require(!chains.empty(), "ChainTraces: no chains");
    for (const Matrix& c : chains) {
      require(c.rows() == dimension() && c.cols() == length(),
              "ChainTraces: chains differ in dimension or length");
    }
  }
};

inline Vector combined_state(const ChainState& s) {
  Vector a(s.x.size() + s.z.size() + 3);
  a << s.x, s.z, s.sigma_x2, s.sigma_z2, s.sigma_w2;
  return a;
}

inline ChainTraces traces_from_states(const std::vector<std::vector<ChainState>>& runs) {
  ChainTraces t;
  for (const auto& run : runs) {
    require(!run.empty(), "traces_from_states: empty run");
    Matrix m(run.front().x.size() + run.front().z.size() + 3,
             static_cast<Eigen::Index>(run.size()));
    for (std::size_t j = 0; j < run.size(); ++j) m.col(j) = combined_state(run[j]);
    t.chains.push_back(std::move(m));
  }
  t.validate();
  return t;
}

namespace detail {

inline Eigen::Index prefix_length(const ChainTraces& t, Eigen::Index i) {
  return i <= 0 ? t.length() : std::min(i, t.length());
}

inline Vector chain_mean(const Matrix& c, Eigen::Index i) {
  return c.leftCols(i).rowwise().mean();
}

}  // namespace detail

/// W_i: pooled within-chain covariance over the first i iterations
/// (all iterations when i <= 0).
inline Matrix intra_chain_cov(const ChainTraces& t, Eigen::Index i = 0) {
  t.validate();
  i = detail::prefix_length(t, i);
  require(i >= 2, "intra_chain_cov: need at least 2 iterations");
  const Eigen::Index d = t.dimension();
  Matrix W = Matrix::Zero(d, d);
  for (const Matrix& c : t.chains) {
    const Matrix centered = c.leftCols(i).colwise() - detail::chain_mean(c, i);
    W.noalias() += centered * centered.transpose();
  }
  W /= static_cast<double>((i - 1) * t.count());
  return 0.5 * (W + W.transpose());
}

/// B_i: covariance of the chain means with divisor C - 1.
inline Matrix inter_chain_cov(const ChainTraces& t, Eigen::Index i = 0) {
  t.validate();
  require(t.count() >= 2, "inter_chain_cov: need at least 2 chains");
  i = detail::prefix_length(t, i);
  require(i >= 1, "inter_chain_cov: need at least 1 iteration");
  const Eigen::Index d = t.dimension();
  Matrix means(d, t.count());
  for (int c = 0; c < t.count(); ++c) means.col(c) = detail::chain_mean(t.chains[c], i);
  const Matrix centered = means.colwise() - means.rowwise().mean();
  Matrix B = centered * centered.transpose() / static_cast<double>(t.count() - 1);
  return 0.5 * (B + B.transpose());
}

struct PsrfResult {
  double r_hat = 1.0;
  double v_norm = 0.0;  // ||V||_2^{1/2}
  double ridge = 0.0;   // diagonal loading applied to W, 0 if none
};

/// Largest singular value of W^{-1} B by power iteration on
/// (W^{-1} B)^T (W^{-1} B) = B W^{-1} W^{-1} B.
inline double solved_operator_norm(const Eigen::LDLT<Matrix>& W, const Matrix& B,
                                   double rel_tol = 1e-8, int max_iters = 20000) {
  const Eigen::Index d = B.rows();
  Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
  double sigma2 = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const Vector Av = W.solve(B * v);
    const Vector w = B * W.solve(Av);
    const double next = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    if (it > 0 && std::abs(next - sigma2) <= rel_tol * std::abs(next)) {
      sigma2 = next;
      break;
    }
    sigma2 = next;
  }
  return std::sqrt(std::max(sigma2, 0.0));
}

inline PsrfResult psrf(const ChainTraces& t, Eigen::Index i = 0) {
  i = detail::prefix_length(t, i);
  const Matrix W = intra_chain_cov(t, i);
  const Matrix B = inter_chain_cov(t, i);
  const double C = t.count();
  const double len = static_cast<double>(i);
  const Eigen::Index d = t.dimension();

  PsrfResult r;
  const Matrix V = (len - 1.0) / len * W + (C + 1.0) / C * B;
  Eigen::SelfAdjointEigenSolver<Matrix> veig(V, Eigen::EigenvaluesOnly);
  r.v_norm = std::sqrt(std::max(veig.eigenvalues().cwiseAbs().maxCoeff(), 0.0));

  if (B.isZero(0.0)) {
    r.r_hat = (len - 1.0) / len;
    return r;
  }
  Eigen::LDLT<Matrix> ldlt(W);
  const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                        (W.diagonal().array() <= 0.0).any() || ldlt.rcond() < 1e-14;
  if (singular) {
    r.ridge = 1e-12 * W.trace() / static_cast<double>(d);
    if (!(r.ridge > 0.0)) {
      r.r_hat = std::numeric_limits<double>::infinity();
      return r;
    }
    Matrix Wr = W;
    Wr.diagonal().array() += r.ridge;
    ldlt.compute(Wr);
  }
  r.r_hat = (len - 1.0) / len + (C + 1.0) / C * solved_operator_norm(ldlt, B);
  return r;
}

}  // namespace jitterlab
