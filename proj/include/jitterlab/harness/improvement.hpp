#pragma once

// Jitter-tolerance improvement factor between two MSE-versus-sigma_z curves.

#include "jitterlab/common.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace jitterlab::harness {

/// MSE in dB sampled at increasing sigma_z.
struct MseCurve {
  std::vector<double> sigma_z;
  std::vector<double> mse_db;

  void validate() const {
    require(sigma_z.size() == mse_db.size() && sigma_z.size() >= 2,
            "MseCurve: need at least two points of matching length");
    for (std::size_t i = 0; i < sigma_z.size(); ++i) {
      require(sigma_z[i] > 0 && std::isfinite(mse_db[i]), "MseCurve: sigma_z > 0, finite dB");
      if (i > 0) require(sigma_z[i] > sigma_z[i - 1], "MseCurve: sigma_z must increase");
    }
  }
};

struct ImprovementResult {
  double factor = std::numeric_limits<double>::quiet_NaN();
  double sigma_z_star = std::numeric_limits<double>::quiet_NaN();  // baseline sigma_z at the max
  int targets_used = 0;
  int targets_censored = 0;  // method never rose to the target inside its sweep
  int targets_below = 0;     // method already above the target at its first point
  std::string flags;
};

namespace detail {

// Running max makes the curve monotone; a vanishing slope in log sigma makes
// it strictly increasing so the inverse is unique on flat stretches.
struct MonotoneCurve {
  std::vector<double> log_s, db;

  explicit MonotoneCurve(const MseCurve& c) {
    c.validate();
    double run = -std::numeric_limits<double>::infinity();
    const double s0 = std::log(c.sigma_z.front());
    for (std::size_t i = 0; i < c.sigma_z.size(); ++i) {
      run = std::max(run, c.mse_db[i]);
      log_s.push_back(std::log(c.sigma_z[i]));
      db.push_back(run + 1e-9 * (log_s.back() - s0));
    }
  }

  double at(double ls) const {
    if (ls <= log_s.front()) return db.front();
    if (ls >= log_s.back()) return db.back();
    const std::size_t i = std::upper_bound(log_s.begin(), log_s.end(), ls) - log_s.begin();
    const double f = (ls - log_s[i - 1]) / (log_s[i] - log_s[i - 1]);
    return db[i - 1] + f * (db[i] - db[i - 1]);
  }

  /// log sigma where the curve equals `level`, if inside the sampled range.
  std::optional<double> inverse(double level) const {
    if (level < db.front() || level > db.back()) return std::nullopt;
    const std::size_t i = std::lower_bound(db.begin(), db.end(), level) - db.begin();
    if (i == 0) return log_s.front();
    const double f = (level - db[i - 1]) / (db[i] - db[i - 1]);
    return log_s[i - 1] + f * (log_s[i] - log_s[i - 1]);
  }
};

}  // namespace detail

/// For each target MSE reached by the baseline at sigma_z0 (restricted to
/// sigma_z0 >= sigma_w / 2), finds sigma_z1 where the method reaches the same
/// MSE and returns the largest sigma_z1 / sigma_z0.
inline ImprovementResult improvement_factor(const MseCurve& baseline, const MseCurve& method,
                                            double e_sigma_w, int targets = 400) {
  require(targets >= 2, "improvement_factor: need at least two targets");
  const detail::MonotoneCurve base(baseline), meth(method);
  ImprovementResult r;
  const double lo = std::max(std::log(0.5 * e_sigma_w), base.log_s.front());
  const double hi = base.log_s.back();
  if (!(hi > lo)) {
    r.flags = "empty_domain";
    return r;
  }
  for (int t = 0; t < targets; ++t) {
    const double ls0 = lo + (hi - lo) * t / (targets - 1);
    const double level = base.at(ls0);
    if (level > meth.db.back()) {
      ++r.targets_censored;
      continue;
    }
    const std::optional<double> ls1 = meth.inverse(level);
    if (!ls1) {
      ++r.targets_below;
      continue;
    }
    ++r.targets_used;
    const double f = std::exp(*ls1 - ls0);
    if (!(f <= r.factor)) {
      r.factor = f;
      r.sigma_z_star = std::exp(ls0);
    }
  }
  if (r.targets_censored > 0) r.flags = "censored";
  if (r.targets_below > 0) r.flags += std::string(r.flags.empty() ? "" : "|") + "below_range";
  if (r.targets_used == 0) r.flags += std::string(r.flags.empty() ? "" : "|") + "no_intersection";
  return r;
}

}  // namespace jitterlab::harness
