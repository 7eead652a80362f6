#pragma once

// Gauss rules from the Jacobi matrix eigen-decomposition, the inverse-Gamma
// change of variables, jitter rules, and the hybrid triple-sum likelihood.

#include "jitterlab/model.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <tuple>
#include <vector>

namespace jitterlab {

enum class RuleKind {
  hermite,         // weight e^{-x^2} on R
  legendre,        // weight 1 on [-1, 1]
  laguerre,        // weight x^a e^{-x} on (0, inf)
  inverse_gamma,   // probability rule for IG(alpha, beta)
  normal_hermite,  // probability rule for N(0, s^2) from Hermite nodes
  normal_legendre, // probability rule for N(0, s^2) on [-L s, L s]
  point            // single node of unit mass
};

inline const char* to_string(RuleKind k) {
  switch (k) {
    case RuleKind::hermite: return "hermite";
    case RuleKind::legendre: return "legendre";
    case RuleKind::laguerre: return "laguerre";
    case RuleKind::inverse_gamma: return "inverse_gamma";
    case RuleKind::normal_hermite: return "normal_hermite";
    case RuleKind::normal_legendre: return "normal_legendre";
    case RuleKind::point: return "point";
  }
  return "unknown";
}

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  RuleKind kind = RuleKind::point;
  double param_a = 0.0;  // Laguerre exponent, IG shape, or Normal variance
  double param_b = 0.0;  // IG scale or Legendre half-range factor

  std::size_t size() const { return nodes.size(); }

  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) s += weights[j] * f(nodes[j]);
    return s;
  }
};

/// Three-term recurrence of a monic orthogonal family: the Jacobi matrix has
/// `diagonal` on its diagonal and `offdiagonal` (length J - 1) beside it.
struct Recurrence {
  std::vector<double> diagonal;
  std::vector<double> offdiagonal;
  RuleKind kind = RuleKind::point;
  double param = 0.0;
};

inline Recurrence hermite_recurrence(int J) {
  Recurrence r{std::vector<double>(J, 0.0), {}, RuleKind::hermite, 0.0};
  for (int j = 1; j < J; ++j) r.offdiagonal.push_back(std::sqrt(j / 2.0));
  return r;
}

inline Recurrence legendre_recurrence(int J) {
  Recurrence r{std::vector<double>(J, 0.0), {}, RuleKind::legendre, 0.0};
  for (int j = 1; j < J; ++j) {
    const double jj = j;
    r.offdiagonal.push_back(jj / std::sqrt(4.0 * jj * jj - 1.0));
  }
  return r;
}

inline Recurrence laguerre_recurrence(int J, double a) {
  require(a > -1.0, "laguerre_recurrence: exponent must be > -1");
  Recurrence r{{}, {}, RuleKind::laguerre, a};
  for (int j = 0; j < J; ++j) r.diagonal.push_back(2.0 * j + a + 1.0);
  for (int j = 1; j < J; ++j) r.offdiagonal.push_back(std::sqrt(j * (j + a)));
  return r;
}

namespace detail {

// The squared first eigenvector component equals 1 / sum_k p_k(x)^2 over the
// orthonormal polynomials, but the eigen-solver only delivers it to absolute
// accuracy, which ruins the tiny outer weights of wide rules. One Newton step
// on the monic recurrence polishes each node, then the weight is recomputed
// from the orthonormal sum.
inline void polish_rule(const Recurrence& rec, int J, double total_mass, QuadratureRule& rule) {
  const auto& a = rec.diagonal;
  const auto& b = rec.offdiagonal;
  for (int j = 0; j < J; ++j) {
    double x = rule.nodes[j];
    double p_prev = 0.0, p = 1.0, d_prev = 0.0, d = 0.0;
    for (int k = 0; k < J; ++k) {
      const double b2 = k > 0 ? b[k - 1] * b[k - 1] : 0.0;
      const double p_next = (x - a[k]) * p - b2 * p_prev;
      const double d_next = p + (x - a[k]) * d - b2 * d_prev;
      p_prev = p;
      p = p_next;
      d_prev = d;
      d = d_next;
    }
    if (d != 0.0 && std::isfinite(p / d)) {
      const double gap = std::min(j > 0 ? x - rule.nodes[j - 1] : INFINITY,
                                  j + 1 < J ? rule.nodes[j + 1] - x : INFINITY);
      const double step = p / d;
      if (std::abs(step) < 1e-3 * gap) x -= step;
    }
    double q_prev = 0.0, q = 1.0, sum = 1.0;
    for (int k = 0; k + 1 < J; ++k) {
      const double q_next = ((x - a[k]) * q - (k > 0 ? b[k - 1] * q_prev : 0.0)) / b[k];
      q_prev = q;
      q = q_next;
      sum += q * q;
    }
    if (std::isfinite(sum)) {
      rule.nodes[j] = x;
      rule.weights[j] = total_mass / sum;
    }
  }
}

}  // namespace detail

/// Nodes are the Jacobi-matrix eigenvalues; weight j is total_mass times the
/// squared first component of the j-th normalized eigenvector.
inline QuadratureRule golub_welsch(const Recurrence& rec, int J,
                                   double total_mass) {
  require(J >= 1, "golub_welsch: J must be >= 1");
  require(static_cast<int>(rec.diagonal.size()) >= J &&
              static_cast<int>(rec.offdiagonal.size()) >= J - 1,
          "golub_welsch: recurrence shorter than J");
  QuadratureRule rule;
  rule.kind = rec.kind;
  rule.param_a = rec.param;
  if (J == 1) {
    rule.nodes = {rec.diagonal[0]};
    rule.weights = {total_mass};
    return rule;
  }
  Vector diag = Eigen::Map<const Vector>(rec.diagonal.data(), J);
  Vector sub = Eigen::Map<const Vector>(rec.offdiagonal.data(), J - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw NumericalError(std::string("golub_welsch: eigen-solver did not converge for ") +
                         to_string(rec.kind) + " rule with J = " + std::to_string(J));
  }
  rule.nodes.resize(J);
  rule.weights.resize(J);
  for (int j = 0; j < J; ++j) {
    const double v0 = solver.eigenvectors()(0, j);
    rule.nodes[j] = solver.eigenvalues()[j];
    rule.weights[j] = total_mass * v0 * v0;
  }
  detail::polish_rule(rec, J, total_mass, rule);
  return rule;
}

inline QuadratureRule gauss_hermite(int J) {
  return golub_welsch(hermite_recurrence(J), J, std::sqrt(kPi));
}

inline QuadratureRule gauss_legendre(int J) {
  return golub_welsch(legendre_recurrence(J), J, 2.0);
}

inline QuadratureRule gauss_laguerre(int J, double a) {
  return golub_welsch(laguerre_recurrence(J, a), J, std::exp(std::lgamma(a + 1.0)));
}

namespace detail {

// Base rules keyed by (kind, J, exponent). Construction is serialized; reads
// take a shared lock. Rules are never evicted.
class RuleCache {
public:
  static RuleCache& instance() {
    static RuleCache cache;
    return cache;
  }

  std::shared_ptr<const QuadratureRule> get(RuleKind kind, int J, double a) {
    const Key key{kind, J, a};
    {
      std::shared_lock lock(mutex_);
      if (auto it = rules_.find(key); it != rules_.end()) return it->second;
    }
    std::unique_lock lock(mutex_);
    if (auto it = rules_.find(key); it != rules_.end()) return it->second;
    auto rule = std::make_shared<const QuadratureRule>(build(kind, J, a));
    rules_.emplace(key, rule);
    return rule;
  }

private:
  using Key = std::tuple<RuleKind, int, double>;

  static QuadratureRule build(RuleKind kind, int J, double a) {
    switch (kind) {
      case RuleKind::hermite: return gauss_hermite(J);
      case RuleKind::legendre: return gauss_legendre(J);
      // Unit mass: the weights are already divided by Gamma(a + 1).
      case RuleKind::laguerre: return golub_welsch(laguerre_recurrence(J, a), J, 1.0);
      default: break;
    }
    throw std::invalid_argument("RuleCache: not a base rule kind");
  }

  std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const QuadratureRule>> rules_;
};

}  // namespace detail

/// Probability rule for IG(alpha, beta): nodes beta / x_j and weights
/// w_j / Gamma(alpha) from the generalized Laguerre rule with a = alpha - 1,
/// reordered so nodes increase.
inline QuadratureRule inverse_gamma_rule(int J, double alpha, double beta) {
  require(alpha > 0.0 && beta > 0.0, "inverse_gamma_rule: alpha and beta must be > 0");
  require(J >= 1, "inverse_gamma_rule: J must be >= 1");
  auto base = detail::RuleCache::instance().get(RuleKind::laguerre, J, alpha - 1.0);
  QuadratureRule rule;
  rule.kind = RuleKind::inverse_gamma;
  rule.param_a = alpha;
  rule.param_b = beta;
  rule.nodes.resize(J);
  rule.weights.resize(J);
  for (int j = 0; j < J; ++j) {
    rule.nodes[J - 1 - j] = beta / base->nodes[j];
    rule.weights[J - 1 - j] = base->weights[j];
  }
  return rule;
}

inline QuadratureRule point_rule(double value) {
  QuadratureRule rule;
  rule.kind = RuleKind::point;
  rule.param_a = value;
  rule.nodes = {value};
  rule.weights = {1.0};
  return rule;
}

inline constexpr double kHermiteBranchThreshold = 0.01;
inline constexpr double kDefaultLegendreRange = 6.0;

/// Probability rule for z ~ N(0, sigma_z2). Hermite nodes when the expected
/// jitter variance is below 0.01, otherwise Legendre nodes on
/// [-L sigma_z, L sigma_z] weighted by the Normal density.
inline QuadratureRule jitter_rule(double sigma_z2, int J3, double e_sigma_z2,
                                  double legendre_range = kDefaultLegendreRange) {
  require(sigma_z2 > 0.0, "jitter_rule: sigma_z2 must be > 0");
  require(J3 >= 1, "jitter_rule: J3 must be >= 1");
  require(legendre_range > 0.0, "jitter_rule: legendre_range must be > 0");
  QuadratureRule rule;
  rule.param_a = sigma_z2;
  rule.nodes.resize(J3);
  rule.weights.resize(J3);
  const double sigma = std::sqrt(sigma_z2);
  if (e_sigma_z2 < kHermiteBranchThreshold) {
    auto base = detail::RuleCache::instance().get(RuleKind::hermite, J3, 0.0);
    rule.kind = RuleKind::normal_hermite;
    const double scale = std::sqrt(2.0 * sigma_z2);
    const double inv_sqrt_pi = 1.0 / std::sqrt(kPi);
    for (int j = 0; j < J3; ++j) {
      rule.nodes[j] = scale * base->nodes[j];
      rule.weights[j] = base->weights[j] * inv_sqrt_pi;
    }
  } else {
    auto base = detail::RuleCache::instance().get(RuleKind::legendre, J3, 0.0);
    rule.kind = RuleKind::normal_legendre;
    rule.param_b = legendre_range;
    const double half = legendre_range * sigma;
    for (int j = 0; j < J3; ++j) {
      const double z = half * base->nodes[j];
      rule.nodes[j] = z;
      rule.weights[j] = base->weights[j] * half * std::exp(log_normal_pdf(z, 0.0, sigma_z2));
    }
  }
  return rule;
}

/// Rule sizes for the hybrid quadrature: J1 over sigma_w^2, J2 over
/// sigma_z^2, J3 over z_n.
struct QuadratureSettings {
  int J1 = 9;
  int J2 = 9;
  int J3 = 129;
  double legendre_range = kDefaultLegendreRange;

  void validate() const {
    require(J1 >= 1 && J2 >= 1 && J3 >= 1, "QuadratureSettings: J's must be >= 1");
    require(legendre_range > 0, "QuadratureSettings: legendre_range must be > 0");
  }
};

/// The full nested rule set: one sigma_w^2 rule, one sigma_z^2 rule and one
/// z rule per sigma_z^2 node.
struct HybridRules {
  QuadratureRule sigma_w2;
  QuadratureRule sigma_z2;
  std::vector<QuadratureRule> jitter;
};

inline HybridRules make_hybrid_rules(const Hyperparams& hyper,
                                     const QuadratureSettings& q) {
  hyper.validate();
  q.validate();
  require(!hyper.improper, "make_hybrid_rules: priors must be proper");
  HybridRules rules;
  rules.sigma_w2 = inverse_gamma_rule(q.J1, hyper.alpha_w, hyper.beta_w);
  rules.sigma_z2 = inverse_gamma_rule(q.J2, hyper.alpha_z, hyper.beta_z);
  const double e_sz2 = hyper.mean_sigma_z2();
  for (double s : rules.sigma_z2.nodes) {
    rules.jitter.push_back(jitter_rule(s, q.J3, e_sz2, q.legendre_range));
  }
  return rules;
}

/// Degenerate rule set for known variances. sigma_z2 = 0 collapses the z
/// rule to a point at zero.
inline HybridRules make_known_variance_rules(double sigma_z2, double sigma_w2,
                                             const QuadratureSettings& q,
                                             std::optional<double> branch_e_sigma_z2 = {}) {
  require(sigma_z2 >= 0.0 && sigma_w2 > 0.0,
          "make_known_variance_rules: need sigma_z2 >= 0, sigma_w2 > 0");
  HybridRules rules;
  rules.sigma_w2 = point_rule(sigma_w2);
  rules.sigma_z2 = point_rule(sigma_z2);
  if (sigma_z2 == 0.0) {
    rules.jitter.push_back(point_rule(0.0));
  } else {
    rules.jitter.push_back(jitter_rule(sigma_z2, q.J3, branch_e_sigma_z2.value_or(sigma_z2),
                                       q.legendre_range));
  }
  return rules;
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

struct LogDensity {
  double log_value = -std::numeric_limits<double>::infinity();
  bool underflow = true;

  double value() const { return std::exp(log_value); }
};

/// p(y_n | x) for one n as a finite Gaussian mixture over the flattened
/// (sigma_z^2, z) nodes and the sigma_w^2 nodes. The mixture means depend on
/// x but not on y_n, so one instance evaluates the density on a whole grid.
class ObservationMixture {
public:
  ObservationMixture(const HybridRules& rules, const ModelConfig& cfg, int n,
                     const Vector& x) {
    require(n >= 0 && n < cfg.N(), "ObservationMixture: n out of range");
    require(x.size() == cfg.K, "ObservationMixture: x must have length K");
    for (std::size_t j1 = 0; j1 < rules.sigma_w2.size(); ++j1) {
      const double w = rules.sigma_w2.weights[j1];
      if (!(w > 0.0)) continue;
      noise_var_.push_back(rules.sigma_w2.nodes[j1]);
      noise_logw_.push_back(std::log(w));
    }
    for (std::size_t j2 = 0; j2 < rules.sigma_z2.size(); ++j2) {
      const double lw2 = std::log(rules.sigma_z2.weights[j2]);
      const QuadratureRule& zr = rules.jitter[j2];
      for (std::size_t j3 = 0; j3 < zr.size(); ++j3) {
        if (!(zr.weights[j3] > 0.0)) continue;
        means_.push_back(h_row_dot(cfg, n, zr.nodes[j3], x));
        mean_logw_.push_back(lw2 + std::log(zr.weights[j3]));
      }
    }
  }

  LogDensity log_density(double y) const {
    // Streaming log-sum-exp: rescale the running sum whenever the max moves.
    double m = -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (std::size_t j1 = 0; j1 < noise_var_.size(); ++j1) {
      const double lw1 = noise_logw_[j1] - 0.5 * (kLog2Pi + std::log(noise_var_[j1]));
      const double inv2v = 0.5 / noise_var_[j1];
      for (std::size_t c = 0; c < means_.size(); ++c) {
        const double r = y - means_[c];
        const double a = mean_logw_[c] + lw1 - r * r * inv2v;
        if (a <= m) {
          s += std::exp(a - m);
        } else {
          s = s * std::exp(m - a) + 1.0;
          m = a;
        }
      }
    }
    LogDensity out;
    out.log_value = std::isfinite(m) ? m + std::log(s) : m;
    out.underflow = !std::isfinite(out.log_value);
    return out;
  }

  std::size_t components() const { return means_.size() * noise_var_.size(); }

private:
  std::vector<double> noise_var_, noise_logw_;
  std::vector<double> means_, mean_logw_;
};

/// Hybrid-quadrature approximation of p(y_n | x), accumulated in log space.
inline LogDensity marginal_likelihood(double y_n, const Vector& x, int n,
                                      const Hyperparams& hyper,
                                      const ModelConfig& cfg,
                                      const QuadratureSettings& q = {}) {
  return ObservationMixture(make_hybrid_rules(hyper, q), cfg, n, x).log_density(y_n);
}

}  // namespace jitterlab
