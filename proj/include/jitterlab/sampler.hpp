#pragma once

// Gibbs sampler over (z, x, sigma_x^2, sigma_z^2, sigma_w^2) with slice
// updates for each z_n.

#include "jitterlab/linear.hpp"

#include <functional>
#include <utility>

namespace jitterlab {

struct ChainState {
  Vector x;
  Vector z;
  double sigma_x2 = 1.0;
  double sigma_z2 = 0.01;
  double sigma_w2 = 0.01;
  long iteration = 0;

  void validate(const ModelConfig& cfg) const {
    require(x.size() == cfg.K, "ChainState: x must have length K");
    require(z.size() == cfg.N(), "ChainState: z must have length N");
    require(sigma_x2 > 0 && sigma_z2 > 0 && sigma_w2 > 0,
            "ChainState: variances must be > 0");
  }
};

/// Shrinkage options. tau > 0 enables the midpoint-threshold variant: a
/// rejected point more than tau nats below the slice level also moves the
/// near endpoint to the interval midpoint. tau = 0 is plain shrinkage.
struct SliceConfig {
  double tau = 25.0;
  int max_shrink_iters = 1000;
};

/// One slice update and the bookkeeping the shrinkage analysis needs.
struct SliceDraw {
  double z = 0.0;
  double log_u = 0.0;
  double log_density = 0.0;  // at the accepted z
  double initial_width = 0.0;
  int rejections = 0;
  double width_ratio_sum = 0.0;  // sum over rejections of new/old width
};

/// Bracket containing every z with log p(z) >= log_u. log_u above the density
/// bound means the caller's log-domain arithmetic is broken.
inline std::pair<double, double> slice_initial_interval(double log_u, double sigma_z2,
                                                        double sigma_w2) {
  const double bound = log_z_conditional_bound(sigma_z2, sigma_w2);
  const double arg = 2.0 * (bound - log_u);
  if (arg < -1e-9 * std::max(1.0, std::abs(bound))) {
    throw std::logic_error("slice_initial_interval: log_u = " + std::to_string(log_u) +
                           " exceeds the density bound " + std::to_string(bound));
  }
  const double R = std::sqrt(sigma_z2) * std::sqrt(std::max(arg, 0.0));
  return {-R, R};
}

/// Slice update of z_n given everything else in `state`.
template <class URBG>
SliceDraw slice_sample_z(const ChainState& state, int n, double y_n,
                         const SliceConfig& sc, const ModelConfig& cfg, URBG& rng) {
  const double z_prev = state.z[n];
  auto log_p = [&](double z) {
    return log_unnormalized_z_conditional(z, n, y_n, state.x, state.sigma_z2,
                                          state.sigma_w2, cfg);
  };
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SliceDraw out;
  double u01 = unif(rng);
  while (!(u01 > 0.0)) u01 = unif(rng);
  out.log_u = log_p(z_prev) + std::log(u01);

  auto [L, R] = slice_initial_interval(out.log_u, state.sigma_z2, state.sigma_w2);
  // Roundoff can put z_prev a hair outside a degenerate bracket.
  L = std::min(L, z_prev);
  R = std::max(R, z_prev);
  out.initial_width = R - L;

  for (int it = 0; it < sc.max_shrink_iters; ++it) {
    const double z = L + (R - L) * unif(rng);
    const double lp = log_p(z);
    if (lp >= out.log_u) {
      out.z = z;
      out.log_density = lp;
      return out;
    }
    const double old_width = R - L;
    if (z < z_prev) L = z; else R = z;
    if (sc.tau > 0.0 && lp < out.log_u - sc.tau) {
      const double mid = 0.5 * (L + R);
      if (mid < z_prev) L = mid; else R = mid;
    }
    ++out.rejections;
    out.width_ratio_sum += old_width > 0.0 ? (R - L) / old_width : 0.0;
  }
  throw NumericalError("slice_sample_z: no acceptance after " +
                       std::to_string(sc.max_shrink_iters) + " shrink steps (n = " +
                       std::to_string(n) + ", interval [" + std::to_string(L) + ", " +
                       std::to_string(R) + "], z_prev = " + std::to_string(z_prev) + ")");
}

/// Normal(mean, cov) full conditional of x given z and the variances.
struct CoefficientPosterior {
  Vector mean;
  Matrix cov;
};

namespace detail {

inline Eigen::LLT<Matrix> coefficient_precision(const Matrix& H, double sigma_x2,
                                               double sigma_w2) {
  Matrix P = H.transpose() * H;
  P.diagonal().array() += sigma_w2 / sigma_x2;
  P /= sigma_w2;
  Eigen::LLT<Matrix> llt(P);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("coefficient update: precision matrix is not positive definite");
  }
  return llt;
}

}  // namespace detail

inline CoefficientPosterior coefficient_posterior(const ChainState& state, const Vector& y,
                                                  const ModelConfig& cfg) {
  const Matrix H = build_h_matrix(state.z, cfg);
  const auto llt = detail::coefficient_precision(H, state.sigma_x2, state.sigma_w2);
  CoefficientPosterior post;
  post.mean = llt.solve(H.transpose() * y / state.sigma_w2);
  post.cov = llt.solve(Matrix::Identity(cfg.K, cfg.K));
  return post;
}

/// Draw from the coefficient conditional by factoring the precision
/// P = L L^T: x = mu + L^{-T} u.
template <class URBG>
Vector sample_coefficients(const ChainState& state, const Vector& y,
                           const ModelConfig& cfg, URBG& rng) {
  Matrix H;
  build_h_matrix_fast(state.z, cfg, H);
  const auto llt = detail::coefficient_precision(H, state.sigma_x2, state.sigma_w2);
  const Vector mean = llt.solve(H.transpose() * y / state.sigma_w2);
  const Vector u = standard_normal_vector(cfg.K, rng);
  return mean + llt.matrixU().solve(u);
}

struct VariancePosteriors {
  InverseGammaParams signal, jitter, noise;
};

/// Conjugate inverse-Gamma conditionals of the three variances.
inline VariancePosteriors variance_posteriors(const ChainState& state, const Vector& y,
                                              const Hyperparams& hyper,
                                              const ModelConfig& cfg) {
  hyper.validate();
  const double K = cfg.K;
  const double N = cfg.N();
  Matrix H;
  build_h_matrix_fast(state.z, cfg, H);
  const double resid2 = (y - H * state.x).squaredNorm();
  return {
      {hyper.alpha_x + K / 2.0, hyper.beta_x + state.x.squaredNorm() / 2.0},
      {hyper.alpha_z + N / 2.0, hyper.beta_z + state.z.squaredNorm() / 2.0},
      {hyper.alpha_w + N / 2.0, hyper.beta_w + resid2 / 2.0},
  };
}

struct SampledVariances {
  double sigma_x2, sigma_z2, sigma_w2;
};

template <class URBG>
SampledVariances sample_variances(const ChainState& state, const Vector& y,
                                  const Hyperparams& hyper, const ModelConfig& cfg,
                                  URBG& rng) {
  const VariancePosteriors post = variance_posteriors(state, y, hyper, cfg);
  const double sx2 = sample_inverse_gamma(post.signal, rng);
  const double sz2 = sample_inverse_gamma(post.jitter, rng);
  const double sw2 = sample_inverse_gamma(post.noise, rng);
  return {sx2, sz2, sw2};
}

/// Values held fixed for the whole run. Pinned blocks are skipped, so a run
/// with everything but x pinned is an exact sampler for the x conditional.
struct ChainPins {
  std::optional<Vector> z;
  std::optional<double> sigma_x2, sigma_z2, sigma_w2;
};

struct ChainSettings {
  int iterations = 500;  // I, averaged
  int burn_in = 500;     // I_b, discarded
  SliceConfig slice;
  bool record_trace = false;
  /// Called after every completed sweep (burn-in included).
  std::function<void(const ChainState&)> on_iteration;
};

struct GibbsOutput {
  Vector x_hat;
  Vector z_hat;
  double sigma_x2_hat = 0, sigma_z2_hat = 0, sigma_w2_hat = 0;
  std::vector<ChainState> trace;
  long total_rejections = 0;
};

/// Algorithm defaults: z = 0, x = no-jitter LMMSE, sigma_x^2 = 1,
/// sigma_z^2 = sigma_w^2 = 0.01.
inline ChainState default_initial_state(const Vector& y, const ModelConfig& cfg,
                                        const Hyperparams& hyper) {
  ChainState s;
  s.z = Vector::Zero(cfg.N());
  s.x = lmmse_no_jitter(y, cfg, hyper);
  s.sigma_x2 = 1.0;
  s.sigma_z2 = 0.01;
  s.sigma_w2 = 0.01;
  return s;
}

template <class URBG>
GibbsOutput run_chain(const Vector& y, const ModelConfig& cfg, const Hyperparams& hyper,
                      const ChainSettings& settings, ChainState state, URBG& rng,
                      const ChainPins& pins = {}) {
  cfg.validate();
  require(settings.iterations >= 1, "run_chain: I must be >= 1");
  require(settings.burn_in >= 0, "run_chain: I_b must be >= 0");
  require(y.size() == cfg.N(), "run_chain: y must have length N");
  if (pins.z) state.z = *pins.z;
  if (pins.sigma_x2) state.sigma_x2 = *pins.sigma_x2;
  if (pins.sigma_z2) state.sigma_z2 = *pins.sigma_z2;
  if (pins.sigma_w2) state.sigma_w2 = *pins.sigma_w2;
  state.validate(cfg);
  state.iteration = 0;

  GibbsOutput out;
  out.x_hat = Vector::Zero(cfg.K);
  out.z_hat = Vector::Zero(cfg.N());
  const long total = static_cast<long>(settings.iterations) + settings.burn_in;
  if (settings.record_trace) out.trace.reserve(total);

  for (long i = 1; i <= total; ++i) {
    try {
      if (!pins.z) {
        for (int n = 0; n < cfg.N(); ++n) {
          const SliceDraw d = slice_sample_z(state, n, y[n], settings.slice, cfg, rng);
          state.z[n] = d.z;
          out.total_rejections += d.rejections;
        }
      }
      state.x = sample_coefficients(state, y, cfg, rng);
      const SampledVariances v = sample_variances(state, y, hyper, cfg, rng);
      if (!pins.sigma_x2) state.sigma_x2 = v.sigma_x2;
      if (!pins.sigma_z2) state.sigma_z2 = v.sigma_z2;
      if (!pins.sigma_w2) state.sigma_w2 = v.sigma_w2;
    } catch (const NumericalError& e) {
      throw NumericalError("run_chain iteration " + std::to_string(i) + ": " + e.what());
    }
    state.iteration = i;
    if (i > settings.burn_in) {
      out.x_hat += state.x;
      out.z_hat += state.z;
      out.sigma_x2_hat += state.sigma_x2;
      out.sigma_z2_hat += state.sigma_z2;
      out.sigma_w2_hat += state.sigma_w2;
    }
    if (settings.record_trace) out.trace.push_back(state);
    if (settings.on_iteration) settings.on_iteration(state);
  }
  const double inv = 1.0 / settings.iterations;
  out.x_hat *= inv;
  out.z_hat *= inv;
  out.sigma_x2_hat *= inv;
  out.sigma_z2_hat *= inv;
  out.sigma_w2_hat *= inv;
  return out;
}

}  // namespace jitterlab
