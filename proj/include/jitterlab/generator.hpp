#pragma once

// Sampling geometry and the observation matrix H(z).

#include "jitterlab/common.hpp"

#include <span>

namespace jitterlab {

enum class Generator { sinc };

inline const char* to_string(Generator g) {
  switch (g) {
    case Generator::sinc: return "sinc";
  }
  return "unknown";
}

/// sin(pi t) / (pi t). A short series replaces the ratio near t = 0.
inline double sinc(double t) {
  if (std::abs(t) < 1e-8) {
    const double a = kPi * t;
    return 1.0 - a * a / 6.0;
  }
  const double a = kPi * t;
  return std::sin(a) / a;
}

inline double generator_eval(Generator g, double t) {
  switch (g) {
    case Generator::sinc: return sinc(t);
  }
  throw std::invalid_argument("unsupported generator");
}

/// K coefficients at unit spacing, observed M times per unit interval.
struct ModelConfig {
  int K = 10;
  int M = 4;
  Generator generator = Generator::sinc;

  static constexpr double T = 1.0;

  int N() const { return K * M; }

  /// Nominal sample time of observation n.
  double nominal_time(int n) const { return static_cast<double>(n) / M; }

  void validate() const {
    require(K >= 1, "ModelConfig: K must be >= 1");
    require(M >= 1, "ModelConfig: M must be >= 1");
  }
};

/// Row n of H(z) evaluated at jitter value z_n, written into out[0..K).
///
/// For sinc all K entries share sin(pi t) up to sign, so the row costs one
/// sine: sinc(t - k) = (-1)^(r - k) sin(pi d) / (pi (t - k)) with r the
/// integer nearest t and d = t - r. The k = r entry is sinc(d).
inline void fill_h_row(const ModelConfig& cfg, int n, double z_n,
                       std::span<double> out) {
  const double t = cfg.nominal_time(n) + z_n;
  const double r = std::nearbyint(t);
  const double d = t - r;
  const double sd = std::sin(kPi * d) / kPi;
  const long ri = static_cast<long>(r);
  for (int k = 0; k < cfg.K; ++k) {
    if (ri == k) {
      out[k] = sinc(d);
    } else {
      const double sign = ((ri - k) & 1L) ? -1.0 : 1.0;
      out[k] = sign * sd / (t - k);
    }
  }
}

/// h_n(z_n)^T x without materializing the row.
inline double h_row_dot(const ModelConfig& cfg, int n, double z_n,
                        const Vector& x) {
  const double t = cfg.nominal_time(n) + z_n;
  const double r = std::nearbyint(t);
  const double d = t - r;
  const long ri = static_cast<long>(r);
  double acc = 0.0;
  double self = 0.0;
  for (int k = 0; k < cfg.K; ++k) {
    if (ri == k) {
      self = x[k];
      continue;
    }
    const double term = x[k] / (t - k);
    acc += ((ri - k) & 1L) ? -term : term;
  }
  return acc * std::sin(kPi * d) / kPi + self * sinc(d);
}

/// [H(z)]_{n,k} = h(n/M + z_n - k), evaluated entry by entry.
inline Matrix build_h_matrix(const Vector& z, const ModelConfig& cfg) {
  cfg.validate();
  if (z.size() != cfg.N()) {
    throw std::invalid_argument("build_h_matrix: z has length " +
                                std::to_string(z.size()) + ", expected N = " +
                                std::to_string(cfg.N()));
  }
  Matrix H(cfg.N(), cfg.K);
  for (int n = 0; n < cfg.N(); ++n) {
    const double t = cfg.nominal_time(n) + z[n];
    for (int k = 0; k < cfg.K; ++k) H(n, k) = generator_eval(cfg.generator, t - k);
  }
  return H;
}

/// Same matrix through the shared-sine row kernel; used on hot paths.
inline void build_h_matrix_fast(const Vector& z, const ModelConfig& cfg,
                                Matrix& H) {
  H.resize(cfg.N(), cfg.K);
  Eigen::Matrix<double, Eigen::Dynamic, 1> row(cfg.K);
  for (int n = 0; n < cfg.N(); ++n) {
    fill_h_row(cfg, n, z[n], std::span<double>(row.data(), cfg.K));
    H.row(n) = row.transpose();
  }
}

}  // namespace jitterlab
