#pragma once

// The five experiments. Each returns typed results plus the tables the CLI
// writes; every random stream derives from (seed, trial, purpose), so any
// subset of trials reproduces the same numbers in any order.

#include "jitterlab/diagnostics.hpp"
#include "jitterlab/harness/improvement.hpp"
#include "jitterlab/harness/pool.hpp"
#include "jitterlab/harness/records.hpp"

#include <chrono>
#include <set>

namespace jitterlab::harness {

// Stream purposes mixed into per-trial seeds.
inline constexpr std::uint64_t kGibbsStream = 1;
inline constexpr std::uint64_t kInitStream = 2;
inline constexpr std::uint64_t kMonteCarloStream = 3;
inline constexpr std::uint64_t kChainStream = 4;
inline constexpr std::uint64_t kBootstrapStream = 5;

struct SweepPoint {
  int m = 1;
  double e_sigma_z = 0.0;
  double e_sigma_w = 0.0;
};

/// M outermost, then sigma_w, then sigma_z.
inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
  std::vector<SweepPoint> out;
  for (int m : cfg.M)
    for (double sw : cfg.e_sigma_w)
      for (double sz : cfg.e_sigma_z) out.push_back({m, sz, sw});
  return out;
}

inline std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
  return derive_seed(*cfg.seed, static_cast<std::uint64_t>(trial));
}

/// Everything at one sweep point that does not depend on the trial.
struct PointContext {
  SweepPoint point;
  ModelConfig model;
  Hyperparams hyper;
  std::shared_ptr<const LmmsePrecompute> lmmse0, lmmse;
};

inline PointContext make_context(const ExperimentConfig& cfg, const SweepPoint& p) {
  PointContext c;
  c.point = p;
  c.model = ModelConfig{.K = cfg.K, .M = p.m};
  c.hyper = hyperparams_from_expected(cfg.K, c.model.N(), p.e_sigma_z * p.e_sigma_z,
                                      p.e_sigma_w * p.e_sigma_w);
  c.lmmse0 = std::make_shared<const LmmsePrecompute>(make_no_jitter_lmmse(c.hyper, c.model));
  if (cfg.uses(Method::lmmse)) {
    c.lmmse = std::make_shared<const LmmsePrecompute>(make_jitter_lmmse(c.hyper, c.model, cfg.quad));
  }
  return c;
}

namespace detail {

inline TrialRecord make_record(const PointContext& ctx, int trial, Method method,
                               std::uint64_t seed) {
  TrialRecord r;
  r.trial = trial;
  r.method = method;
  r.m = ctx.point.m;
  r.e_sigma_z = ctx.point.e_sigma_z;
  r.e_sigma_w = ctx.point.e_sigma_w;
  r.seed = seed;
  return r;
}

/// Runs `estimate` (returning x_hat, optionally setting flags) and fills the
/// record. Failures become flagged rows.
template <class F>
TrialRecord timed_estimate(TrialRecord r, const Vector& x_true, F&& estimate) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const Vector x_hat = estimate(r.flags);
    r.squared_error = (x_hat - x_true).squaredNorm();
    if (!std::isfinite(r.squared_error)) add_flag(r.flags, "nonfinite");
  } catch (const std::exception& e) {
    r.squared_error = std::numeric_limits<double>::quiet_NaN();
    add_flag(r.flags, std::string("error=") + e.what());
  }
  r.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace detail

/// All configured estimators on one synthesized trial.
inline std::vector<TrialRecord> run_trial_methods(const ExperimentConfig& cfg,
                                                  const PointContext& ctx, int trial) {
  const std::uint64_t seed = trial_seed(cfg, trial);
  const SyntheticInstance s = synthesize(ctx.model, ctx.hyper, seed);
  std::vector<TrialRecord> out;
  for (Method m : cfg.methods) {
    TrialRecord base = detail::make_record(ctx, trial, m, seed);
    switch (m) {
      case Method::lmmse0:
        out.push_back(detail::timed_estimate(base, s.x_true, [&](std::string&) {
          return lmmse_estimate(s.y, *ctx.lmmse0);
        }));
        break;
      case Method::lmmse:
        out.push_back(detail::timed_estimate(base, s.x_true, [&](std::string&) {
          return lmmse_estimate(s.y, *ctx.lmmse);
        }));
        break;
      case Method::em:
        out.push_back(detail::timed_estimate(base, s.x_true, [&](std::string& flags) {
          const EmConfig em = cfg.em_config(s.sigma_z2, s.sigma_w2);
          const EmResult r =
              em_iterate(s.y, lmmse_estimate(s.y, *ctx.lmmse0), ctx.hyper, ctx.model, em);
          if (!r.converged) add_flag(flags, "nonconverged");
          return r.x_hat;
        }));
        break;
      case Method::gibbs:
        out.push_back(detail::timed_estimate(base, s.x_true, [&](std::string&) {
          Rng rng(derive_seed(seed, kGibbsStream));
          ChainState init = default_initial_state(s.y, ctx.model, ctx.hyper);
          return run_chain(s.y, ctx.model, ctx.hyper, cfg.chain_settings(), std::move(init), rng)
              .x_hat;
        }));
        break;
    }
  }
  return out;
}

/// Work items (sweep point, trial) run on the pool, results in sweep order.
template <class F>
std::vector<TrialRecord> run_trials(const ExperimentConfig& cfg,
                                    const std::vector<PointContext>& points, F&& per_trial) {
  const std::size_t T = cfg.trials;
  std::vector<std::vector<TrialRecord>> slots(points.size() * T);
  parallel_for(slots.size(), cfg.threads, [&](std::size_t i) {
    slots[i] = per_trial(points[i / T], static_cast<int>(i % T));
  });
  std::vector<TrialRecord> out;
  for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline std::vector<PointContext> make_contexts(const ExperimentConfig& cfg) {
  std::vector<PointContext> out;
  for (const SweepPoint& p : sweep_points(cfg)) out.push_back(make_context(cfg, p));
  return out;
}

/// What the CLI writes: trial rows (or a primary table when the experiment
/// has no per-trial estimates), optional plot tables and summary lines.
struct ExperimentOutput {
  std::vector<TrialRecord> records;
  std::optional<Table> primary;
  std::vector<Table> plot_tables;
  std::vector<std::string> summary;
};

// ---------------------------------------------------------------- compare

struct CompareResult {
  std::vector<TrialRecord> records;
  std::vector<MseSummary> summaries;

  const MseSummary* find(Method m, int M, double sz, double sw) const {
    for (const MseSummary& s : summaries) {
      if (s.method == m && s.m == M && s.e_sigma_z == sz && s.e_sigma_w == sw) return &s;
    }
    return nullptr;
  }
};

inline CompareResult run_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  CompareResult r;
  const std::vector<PointContext> points = make_contexts(cfg);
  r.records = run_trials(cfg, points, [&](const PointContext& ctx, int trial) {
    return run_trial_methods(cfg, ctx, trial);
  });
  r.summaries = summarize(r.records);
  return r;
}

inline std::string summary_line(const MseSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "method=%s m=%d e_sigma_z=%g e_sigma_w=%g %s%strials=%d failures=%d mse_db=%.3f "
                "ci=[%.3f,%.3f]",
                to_string(s.method), s.m, s.e_sigma_z, s.e_sigma_w, s.variant.c_str(),
                s.variant.empty() ? "" : " ", s.trials, s.failures, s.db(), s.ci_low_db(),
                s.ci_high_db());
  return buf;
}

inline ExperimentOutput compare_output(const CompareResult& r) {
  ExperimentOutput out;
  out.records = r.records;
  out.plot_tables.push_back(summary_table(r.summaries));
  for (const MseSummary& s : r.summaries) out.summary.push_back(summary_line(s));
  return out;
}

// ---------------------------------------------------------------- converge

struct PsrfPoint {
  long iteration = 0;
  double r_hat = 0.0;
  double psrf_sqrt = 0.0;
  double v_norm = 0.0;
  double v_norm_normalized = 0.0;  // relative to the last checkpoint
  double ridge = 0.0;
};

struct MseVsIterations {
  int iterations = 0;
  MseSummary mse;
  double db_normalized = 0.0;  // 0 dB at the largest I
};

struct ConvergeResult {
  std::vector<PsrfPoint> psrf;
  std::vector<MseVsIterations> mse;
  std::vector<TrialRecord> records;

  const PsrfPoint* psrf_at(long i) const {
    for (const PsrfPoint& p : psrf) if (p.iteration == i) return &p;
    return nullptr;
  }
  const MseVsIterations* mse_at(int I) const {
    for (const MseVsIterations& p : mse) if (p.iterations == I) return &p;
    return nullptr;
  }
};

/// Runs cfg.chains chains from the default initial state on one instance
/// and evaluates PSRF on growing prefixes; then estimates MSE against the
/// number of averaged iterations over cfg.trials independent instances.
/// `identical_chains` gives every chain the same stream.
inline ConvergeResult run_converge(const ExperimentConfig& cfg, bool identical_chains = false) {
  cfg.validate();
  ConvergeResult r;
  const PointContext ctx = make_context(cfg, sweep_points(cfg).front());
  const long total = static_cast<long>(cfg.burn_in) + cfg.iterations;

  const SyntheticInstance inst = synthesize(ctx.model, ctx.hyper, trial_seed(cfg, 0));
  ChainTraces traces;
  traces.chains.resize(cfg.chains);
  parallel_for(cfg.chains, cfg.threads, [&](std::size_t c) {
    Rng rng(derive_seed(*cfg.seed, kChainStream, identical_chains ? 0 : c));
    Matrix& m = traces.chains[c];
    m.resize(ctx.model.K + ctx.model.N() + 3, total);
    ChainSettings s = cfg.chain_settings();
    s.on_iteration = [&](const ChainState& st) { m.col(st.iteration - 1) = combined_state(st); };
    run_chain(inst.y, ctx.model, ctx.hyper, s, default_initial_state(inst.y, ctx.model, ctx.hyper),
              rng);
  });
  std::vector<long> checkpoints;
  for (long i = cfg.checkpoint_every; i <= total; i += cfg.checkpoint_every) checkpoints.push_back(i);
  r.psrf.resize(checkpoints.size());
  parallel_for(checkpoints.size(), cfg.threads, [&](std::size_t k) {
    const PsrfResult p = psrf(traces, checkpoints[k]);
    r.psrf[k] = {checkpoints[k], p.r_hat, std::sqrt(p.r_hat), p.v_norm, 0.0, p.ridge};
  });
  if (!r.psrf.empty()) {
    const double last = r.psrf.back().v_norm;
    for (PsrfPoint& p : r.psrf) p.v_norm_normalized = last > 0 ? p.v_norm / last : 0.0;
  }

  // MSE against I: one chain per trial, running means read off at each checkpoint.
  std::vector<int> Is;
  for (int I = cfg.checkpoint_every; I <= cfg.iterations; I += cfg.checkpoint_every) Is.push_back(I);
  if (Is.empty() || Is.back() != cfg.iterations) Is.push_back(cfg.iterations);
  r.records = run_trials(cfg, {ctx}, [&](const PointContext& pc, int trial) {
    const std::uint64_t seed = trial_seed(cfg, trial);
    const SyntheticInstance s = synthesize(pc.model, pc.hyper, seed);
    std::vector<TrialRecord> rows;
    Rng rng(derive_seed(seed, kGibbsStream));
    ChainSettings set = cfg.chain_settings();
    Vector sum = Vector::Zero(pc.model.K);
    std::size_t next = 0;
    const auto start = std::chrono::steady_clock::now();
    set.on_iteration = [&](const ChainState& st) {
      if (st.iteration <= cfg.burn_in) return;
      sum += st.x;
      const long used = st.iteration - cfg.burn_in;
      if (next < Is.size() && used == Is[next]) {
        TrialRecord rec = detail::make_record(pc, trial, Method::gibbs, seed);
        rec.variant = "iters=" + std::to_string(Is[next]);
        rec.squared_error = (sum / static_cast<double>(used) - s.x_true).squaredNorm();
        rec.wall_time_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start).count();
        rows.push_back(rec);
        ++next;
      }
    };
    try {
      run_chain(s.y, pc.model, pc.hyper, set, default_initial_state(s.y, pc.model, pc.hyper), rng);
    } catch (const std::exception& e) {
      for (; next < Is.size(); ++next) {
        TrialRecord rec = detail::make_record(pc, trial, Method::gibbs, seed);
        rec.variant = "iters=" + std::to_string(Is[next]);
        add_flag(rec.flags, std::string("error=") + e.what());
        rows.push_back(rec);
      }
    }
    return rows;
  });
  for (const MseSummary& s : summarize(r.records)) {
    MseVsIterations p;
    p.iterations = std::stoi(s.variant.substr(s.variant.find('=') + 1));
    p.mse = s;
    r.mse.push_back(p);
  }
  std::sort(r.mse.begin(), r.mse.end(),
            [](const auto& a, const auto& b) { return a.iterations < b.iterations; });
  if (!r.mse.empty()) {
    const double ref = r.mse.back().mse.db();
    for (auto& p : r.mse) p.db_normalized = p.mse.db() - ref;
  }
  return r;
}

inline ExperimentOutput converge_output(const ConvergeResult& r) {
  ExperimentOutput out;
  out.records = r.records;
  Table psrf_t{"psrf", {"iteration", "r_hat", "psrf_sqrt", "v_norm", "v_norm_normalized", "ridge"}, {}};
  for (const PsrfPoint& p : r.psrf) {
    psrf_t.rows.push_back({std::to_string(p.iteration), format_double(p.r_hat),
                           format_double(p.psrf_sqrt), format_double(p.v_norm),
                           format_double(p.v_norm_normalized), format_double(p.ridge)});
  }
  Table mse_t{"mse_vs_iterations", {"iterations", "trials", "mean_mse", "mse_db", "db_normalized", "ci_low_db", "ci_high_db"}, {}};
  for (const MseVsIterations& p : r.mse) {
    mse_t.rows.push_back({std::to_string(p.iterations), std::to_string(p.mse.trials),
                          format_double(p.mse.mean), format_double(p.mse.db()),
                          format_double(p.db_normalized), format_double(p.mse.ci_low_db()),
                          format_double(p.mse.ci_high_db())});
  }
  for (const PsrfPoint& p : r.psrf) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "iteration=%ld psrf_sqrt=%.4f v_norm_normalized=%.4f",
                  p.iteration, p.psrf_sqrt, p.v_norm_normalized);
    out.summary.push_back(buf);
  }
  for (const MseVsIterations& p : r.mse) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "I=%d mse_db_normalized=%.3f", p.iterations, p.db_normalized);
    out.summary.push_back(buf);
  }
  out.plot_tables = {psrf_t, mse_t};
  return out;
}

// -------------------------------------------------------- init-sensitivity

struct InitPreset {
  std::string name;
  ChainState state;
};

inline constexpr int kRandomInitPresets = 7;

/// zeros, lmmse0, truth, then random jitter drawn from the prior with the
/// matching fixed-jitter LMMSE coefficients.
inline std::vector<InitPreset> init_presets(const SyntheticInstance& s, const ModelConfig& model,
                                            const Hyperparams& hyper, std::uint64_t seed) {
  std::vector<InitPreset> out;
  ChainState base = default_initial_state(s.y, model, hyper);

  ChainState zeros = base;
  zeros.x.setZero();
  out.push_back({"zeros", zeros});
  out.push_back({"lmmse0", base});

  ChainState truth;
  truth.x = s.x_true;
  truth.z = s.z_true;
  truth.sigma_x2 = s.sigma_x2;
  truth.sigma_z2 = s.sigma_z2 > 0 ? s.sigma_z2 : base.sigma_z2;
  truth.sigma_w2 = s.sigma_w2 > 0 ? s.sigma_w2 : base.sigma_w2;
  out.push_back({"truth", truth});

  for (int p = 0; p < kRandomInitPresets; ++p) {
    Rng rng(derive_seed(seed, kInitStream, p));
    ChainState r;
    r.sigma_x2 = sample_inverse_gamma(hyper.signal(), rng);
    r.sigma_z2 = sample_inverse_gamma(hyper.jitter(), rng);
    r.sigma_w2 = sample_inverse_gamma(hyper.noise(), rng);
    r.z = std::sqrt(r.sigma_z2) * standard_normal_vector(model.N(), rng);
    r.x = fixed_jitter_lmmse(s.y, r.z, r.sigma_x2, r.sigma_w2, model);
    out.push_back({"random" + std::to_string(p + 1), r});
  }
  return out;
}

struct InitPresetSummary {
  double e_sigma_z = 0.0;
  std::string preset;
  double mean_db = 0.0;    // mean over trials of 10 log10(se / se_lmmse0)
  double median_db = 0.0;
  int trials = 0;
};

struct InitSensitivityResult {
  std::vector<TrialRecord> records;
  std::vector<InitPresetSummary> presets;
  std::vector<std::pair<double, double>> dispersion;  // (e_sigma_z, sd of mean_db across presets)
};

inline InitSensitivityResult run_init_sensitivity(const ExperimentConfig& cfg) {
  cfg.validate();
  InitSensitivityResult r;
  const std::vector<PointContext> points = make_contexts(cfg);
  r.records = run_trials(cfg, points, [&](const PointContext& ctx, int trial) {
    const std::uint64_t seed = trial_seed(cfg, trial);
    const SyntheticInstance s = synthesize(ctx.model, ctx.hyper, seed);
    std::vector<TrialRecord> rows;
    for (InitPreset& p : init_presets(s, ctx.model, ctx.hyper, seed)) {
      TrialRecord rec = detail::make_record(ctx, trial, Method::gibbs, seed);
      rec.variant = "init=" + p.name;
      rows.push_back(detail::timed_estimate(rec, s.x_true, [&](std::string&) {
        Rng rng(derive_seed(seed, kGibbsStream));
        return run_chain(s.y, ctx.model, ctx.hyper, cfg.chain_settings(), p.state, rng).x_hat;
      }));
    }
    return rows;
  });

  const std::size_t per_trial = 3 + kRandomInitPresets;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    std::vector<std::vector<double>> ratios(per_trial);
    std::vector<std::string> names(per_trial);
    for (int t = 0; t < cfg.trials; ++t) {
      const std::size_t base = (pi * cfg.trials + t) * per_trial;
      const double ref = r.records[base + 1].squared_error;  // lmmse0 preset
      for (std::size_t k = 0; k < per_trial; ++k) {
        names[k] = r.records[base + k].variant.substr(5);
        const double v = r.records[base + k].squared_error;
        if (std::isfinite(v) && std::isfinite(ref) && v > 0 && ref > 0) ratios[k].push_back(to_db(v / ref));
      }
    }
    std::vector<double> means;
    for (std::size_t k = 0; k < per_trial; ++k) {
      InitPresetSummary ps;
      ps.e_sigma_z = points[pi].point.e_sigma_z;
      ps.preset = names[k];
      ps.trials = static_cast<int>(ratios[k].size());
      if (!ratios[k].empty()) {
        double sum = 0.0;
        for (double v : ratios[k]) sum += v;
        ps.mean_db = sum / ratios[k].size();
        std::vector<double> sorted = ratios[k];
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        ps.median_db = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
      }
      means.push_back(ps.mean_db);
      r.presets.push_back(ps);
    }
    double mu = 0.0;
    for (double v : means) mu += v / means.size();
    double ss = 0.0;
    for (double v : means) ss += (v - mu) * (v - mu);
    r.dispersion.emplace_back(points[pi].point.e_sigma_z, std::sqrt(ss / (means.size() - 1)));
  }
  return r;
}

inline ExperimentOutput init_sensitivity_output(const InitSensitivityResult& r) {
  ExperimentOutput out;
  out.records = r.records;
  Table t{"init_presets", {"e_sigma_z", "preset", "trials", "mean_db", "median_db"}, {}};
  for (const InitPresetSummary& p : r.presets) {
    t.rows.push_back({format_double(p.e_sigma_z), p.preset, std::to_string(p.trials),
                      format_double(p.mean_db), format_double(p.median_db)});
    char buf[160];
    std::snprintf(buf, sizeof buf, "e_sigma_z=%g preset=%s normalized_db_mean=%.3f median=%.3f",
                  p.e_sigma_z, p.preset.c_str(), p.mean_db, p.median_db);
    out.summary.push_back(buf);
  }
  Table d{"init_dispersion", {"e_sigma_z", "dispersion_db"}, {}};
  for (auto [sz, disp] : r.dispersion) {
    d.rows.push_back({format_double(sz), format_double(disp)});
    char buf[96];
    std::snprintf(buf, sizeof buf, "e_sigma_z=%g dispersion_db=%.3f", sz, disp);
    out.summary.push_back(buf);
  }
  out.plot_tables = {t, d};
  return out;
}

// ----------------------------------------------------- validate-likelihood

struct LikelihoodBin {
  double lo = 0, hi = 0, quad_density = 0, mc_density = 0;
  bool assessed = false;
};

struct LikelihoodCheck {
  int n = 0;
  double sup_rel_dev = 0.0;  // over assessed bins
  double grid_mass = 0.0;    // trapezoid integral of the quadrature density
  std::vector<double> grid, density;
  std::vector<LikelihoodBin> bins;
};

struct LikelihoodPointResult {
  SweepPoint point;
  RuleKind inner_rule = RuleKind::normal_hermite;
  std::vector<LikelihoodCheck> per_n;
  int worst_n = 0;
  double worst_dev = 0.0;
};

struct ValidateLikelihoodResult {
  std::vector<LikelihoodPointResult> points;
};

/// Quadrature density of y_n against a Monte Carlo histogram of draws from
/// the hierarchical model, for one n.
inline LikelihoodCheck check_likelihood_n(const ExperimentConfig& cfg, const PointContext& ctx,
                                          const HybridRules& rules, const Vector& x, int n) {
  LikelihoodCheck c;
  c.n = n;
  Rng rng(derive_seed(*cfg.seed, kMonteCarloStream, n));
  std::normal_distribution<double> std_normal;
  std::vector<double> draws(cfg.mc_draws);
  for (double& y : draws) {
    const double sw2 = sample_inverse_gamma(ctx.hyper.noise(), rng);
    const double sz2 = sample_inverse_gamma(ctx.hyper.jitter(), rng);
    const double z = std::sqrt(sz2) * std_normal(rng);
    y = h_row_dot(ctx.model, n, z, x) + std::sqrt(sw2) * std_normal(rng);
  }
  std::sort(draws.begin(), draws.end());
  const auto quantile = [&](double q) {
    return draws[std::min(draws.size() - 1, static_cast<std::size_t>(q * (draws.size() - 1)))];
  };
  const double q_lo = quantile(0.0005), q_hi = quantile(0.9995);
  const double pad = 0.05 * (q_hi - q_lo);
  const double lo = q_lo - pad, hi = q_hi + pad;

  const ObservationMixture mix(rules, ctx.model, n, x);
  const int G = cfg.grid_points;
  c.grid.resize(G);
  c.density.resize(G);
  std::vector<double> cum(G, 0.0);
  for (int i = 0; i < G; ++i) {
    c.grid[i] = lo + (hi - lo) * i / (G - 1);
    c.density[i] = mix.log_density(c.grid[i]).value();
    if (i > 0) cum[i] = cum[i - 1] + 0.5 * (c.density[i] + c.density[i - 1]) * (c.grid[i] - c.grid[i - 1]);
  }
  c.grid_mass = cum.back();
  const double peak = *std::max_element(c.density.begin(), c.density.end());

  // Equal-mass bin edges under the quadrature CDF on the grid.
  auto cdf_at = [&](double v) {
    const std::size_t i = std::clamp<std::size_t>(
        std::upper_bound(c.grid.begin(), c.grid.end(), v) - c.grid.begin(), 1, G - 1);
    const double f = (v - c.grid[i - 1]) / (c.grid[i] - c.grid[i - 1]);
    return cum[i - 1] + f * (cum[i] - cum[i - 1]);
  };
  auto inverse_cdf = [&](double m) {
    const std::size_t i = std::clamp<std::size_t>(
        std::lower_bound(cum.begin(), cum.end(), m) - cum.begin(), 1, G - 1);
    const double span = cum[i] - cum[i - 1];
    const double f = span > 0 ? (m - cum[i - 1]) / span : 0.0;
    return c.grid[i - 1] + f * (c.grid[i] - c.grid[i - 1]);
  };
  std::vector<double> edges{lo};
  for (int b = 1; b < cfg.bins; ++b) edges.push_back(inverse_cdf(c.grid_mass * b / cfg.bins));
  edges.push_back(hi);
  for (int b = 0; b < cfg.bins; ++b) {
    LikelihoodBin bin;
    bin.lo = edges[b];
    bin.hi = edges[b + 1];
    const double width = bin.hi - bin.lo;
    if (!(width > 0)) continue;
    bin.quad_density = (cdf_at(bin.hi) - cdf_at(bin.lo)) / width;
    const auto first = std::lower_bound(draws.begin(), draws.end(), bin.lo);
    const auto last = b + 1 == cfg.bins ? std::upper_bound(draws.begin(), draws.end(), bin.hi)
                                        : std::lower_bound(draws.begin(), draws.end(), bin.hi);
    bin.mc_density = static_cast<double>(last - first) / (draws.size() * width);
    bin.assessed = bin.quad_density > 0.1 * peak;
    if (bin.assessed) {
      c.sup_rel_dev = std::max(c.sup_rel_dev, std::abs(bin.mc_density - bin.quad_density) / bin.quad_density);
    }
    c.bins.push_back(bin);
  }
  return c;
}

inline ValidateLikelihoodResult run_validate_likelihood(const ExperimentConfig& cfg) {
  cfg.validate();
  ValidateLikelihoodResult r;
  for (const SweepPoint& p : sweep_points(cfg)) {
    PointContext ctx;
    ctx.point = p;
    ctx.model = ModelConfig{.K = cfg.K, .M = p.m};
    ctx.hyper = hyperparams_from_expected(cfg.K, ctx.model.N(), p.e_sigma_z * p.e_sigma_z,
                                          p.e_sigma_w * p.e_sigma_w);
    const HybridRules rules = make_hybrid_rules(ctx.hyper, cfg.quad);
    const Vector x = synthesize(ctx.model, ctx.hyper, trial_seed(cfg, 0)).x_true;
    LikelihoodPointResult pr;
    pr.point = p;
    pr.inner_rule = rules.jitter.front().kind;
    pr.per_n.resize(ctx.model.N());
    parallel_for(pr.per_n.size(), cfg.threads, [&](std::size_t n) {
      pr.per_n[n] = check_likelihood_n(cfg, ctx, rules, x, static_cast<int>(n));
    });
    for (const LikelihoodCheck& c : pr.per_n) {
      if (c.sup_rel_dev > pr.worst_dev) {
        pr.worst_dev = c.sup_rel_dev;
        pr.worst_n = c.n;
      }
    }
    r.points.push_back(std::move(pr));
  }
  return r;
}

inline ExperimentOutput validate_likelihood_output(const ValidateLikelihoodResult& r) {
  ExperimentOutput out;
  Table per_n{"likelihood", {"m", "e_sigma_z", "e_sigma_w", "n", "inner_rule", "sup_rel_dev", "grid_mass", "worst"}, {}};
  Table curve{"likelihood_curve", {"m", "e_sigma_z", "e_sigma_w", "n", "y", "quad_density"}, {}};
  Table hist{"likelihood_bins", {"m", "e_sigma_z", "e_sigma_w", "n", "bin_lo", "bin_hi", "quad_density", "mc_density", "assessed"}, {}};
  for (const LikelihoodPointResult& p : r.points) {
    const std::string m = std::to_string(p.point.m), sz = format_double(p.point.e_sigma_z),
                      sw = format_double(p.point.e_sigma_w);
    for (const LikelihoodCheck& c : p.per_n) {
      per_n.rows.push_back({m, sz, sw, std::to_string(c.n), to_string(p.inner_rule),
                            format_double(c.sup_rel_dev), format_double(c.grid_mass),
                            c.n == p.worst_n ? "1" : "0"});
    }
    const LikelihoodCheck& w = p.per_n[p.worst_n];
    for (std::size_t i = 0; i < w.grid.size(); ++i) {
      curve.rows.push_back({m, sz, sw, std::to_string(w.n), format_double(w.grid[i]), format_double(w.density[i])});
    }
    for (const LikelihoodBin& b : w.bins) {
      hist.rows.push_back({m, sz, sw, std::to_string(w.n), format_double(b.lo), format_double(b.hi),
                           format_double(b.quad_density), format_double(b.mc_density),
                           b.assessed ? "1" : "0"});
    }
    double min_mass = 1.0, max_mass = 0.0;
    for (const LikelihoodCheck& c : p.per_n) {
      min_mass = std::min(min_mass, c.grid_mass);
      max_mass = std::max(max_mass, c.grid_mass);
    }
    char buf[224];
    std::snprintf(buf, sizeof buf,
                  "m=%d e_sigma_z=%g e_sigma_w=%g inner_rule=%s worst_n=%d sup_rel_dev=%.4f "
                  "grid_mass=[%.4f,%.4f]",
                  p.point.m, p.point.e_sigma_z, p.point.e_sigma_w, to_string(p.inner_rule),
                  p.worst_n, p.worst_dev, min_mass, max_mass);
    out.summary.push_back(buf);
  }
  out.primary = per_n;
  out.plot_tables = {curve, hist};
  return out;
}

// ---------------------------------------------------------------- improve

struct ImprovementRow {
  int m = 1;
  double e_sigma_w = 0.0;
  Method method = Method::gibbs;
  ImprovementResult result;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
};

struct ImproveResult {
  CompareResult compare;
  std::vector<ImprovementRow> rows;

  const ImprovementRow* find(Method method, int m, double sw) const {
    for (const ImprovementRow& r : rows) {
      if (r.method == method && r.m == m && r.e_sigma_w == sw) return &r;
    }
    return nullptr;
  }
};

namespace detail {

// Mean squared error per sigma_z over a chosen multiset of trials.
inline MseCurve curve_from_trials(const std::vector<std::vector<double>>& se_by_point,
                                  const std::vector<double>& sigma_z,
                                  const std::vector<int>& trials) {
  MseCurve c;
  for (std::size_t p = 0; p < sigma_z.size(); ++p) {
    double sum = 0.0;
    int count = 0;
    for (int t : trials) {
      const double v = se_by_point[p][t];
      if (std::isfinite(v)) {
        sum += v;
        ++count;
      }
    }
    if (count == 0) continue;
    c.sigma_z.push_back(sigma_z[p]);
    c.mse_db.push_back(to_db(sum / count));
  }
  return c;
}

inline double percentile(std::vector<double> v, double q) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double a) { return !std::isfinite(a); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double f = pos - i;
  return i + 1 < v.size() ? v[i] + f * (v[i + 1] - v[i]) : v[i];
}

}  // namespace detail

/// Improvement factors of every non-baseline method against lmmse0 at each
/// (M, e_sigma_w), with percentile bootstrap intervals over trials.
inline std::vector<ImprovementRow> improvement_rows(const ExperimentConfig& cfg,
                                                    const std::vector<TrialRecord>& records) {
  std::vector<double> sz = cfg.e_sigma_z;
  std::sort(sz.begin(), sz.end());
  sz.erase(std::unique(sz.begin(), sz.end()), sz.end());
  require(sz.size() >= 2, "improve: need at least two e_sigma_z values");
  std::vector<ImprovementRow> out;
  for (int m : cfg.M) {
    for (double sw : cfg.e_sigma_w) {
      // se[method][point][trial]
      std::map<Method, std::vector<std::vector<double>>> se;
      for (Method me : cfg.methods) {
        se[me].assign(sz.size(), std::vector<double>(cfg.trials, std::numeric_limits<double>::quiet_NaN()));
      }
      for (const TrialRecord& r : records) {
        if (r.m != m || r.e_sigma_w != sw || !se.count(r.method)) continue;
        const std::size_t p = std::lower_bound(sz.begin(), sz.end(), r.e_sigma_z) - sz.begin();
        se[r.method][p][r.trial] = r.squared_error;
      }
      if (!se.count(Method::lmmse0)) continue;
      std::vector<int> all(cfg.trials);
      for (int t = 0; t < cfg.trials; ++t) all[t] = t;
      const MseCurve base = detail::curve_from_trials(se[Method::lmmse0], sz, all);
      for (Method me : cfg.methods) {
        if (me == Method::lmmse0) continue;
        ImprovementRow row;
        row.m = m;
        row.e_sigma_w = sw;
        row.method = me;
        const MseCurve mc = detail::curve_from_trials(se[me], sz, all);
        if (base.sigma_z.size() < 2 || mc.sigma_z.size() < 2) {
          row.result.flags = "insufficient_points";
          out.push_back(row);
          continue;
        }
        row.result = improvement_factor(base, mc, sw, cfg.improvement_targets);
        if (cfg.bootstrap > 0) {
          Rng rng(derive_seed(*cfg.seed, kBootstrapStream,
                              static_cast<std::uint64_t>(m) * 1000003u + static_cast<int>(me)));
          std::uniform_int_distribution<int> pick(0, cfg.trials - 1);
          std::vector<double> factors;
          std::vector<int> idx(cfg.trials);
          for (int b = 0; b < cfg.bootstrap; ++b) {
            for (int& i : idx) i = pick(rng);
            const MseCurve bb = detail::curve_from_trials(se[Method::lmmse0], sz, idx);
            const MseCurve bm = detail::curve_from_trials(se[me], sz, idx);
            if (bb.sigma_z.size() < 2 || bm.sigma_z.size() < 2) continue;
            factors.push_back(improvement_factor(bb, bm, sw, cfg.improvement_targets).factor);
          }
          row.ci_low = detail::percentile(factors, 0.025);
          row.ci_high = detail::percentile(factors, 0.975);
        }
        out.push_back(row);
      }
    }
  }
  return out;
}

inline ImproveResult run_improve(const ExperimentConfig& cfg) {
  ImproveResult r;
  r.compare = run_compare(cfg);
  r.rows = improvement_rows(cfg, r.compare.records);
  return r;
}

inline ExperimentOutput improve_output(const ImproveResult& r) {
  ExperimentOutput out = compare_output(r.compare);
  Table t{"improvement", {"m", "e_sigma_w", "method", "factor", "sigma_z_star", "ci_low", "ci_high", "targets_used", "flags"}, {}};
  for (const ImprovementRow& row : r.rows) {
    t.rows.push_back({std::to_string(row.m), format_double(row.e_sigma_w), to_string(row.method),
                      format_double(row.result.factor), format_double(row.result.sigma_z_star),
                      format_double(row.ci_low), format_double(row.ci_high),
                      std::to_string(row.result.targets_used), row.result.flags});
    char buf[224];
    std::snprintf(buf, sizeof buf,
                  "improvement m=%d e_sigma_w=%g method=%s factor=%.3f sigma_z_star=%.4g "
                  "ci=[%.3f,%.3f]%s%s",
                  row.m, row.e_sigma_w, to_string(row.method), row.result.factor,
                  row.result.sigma_z_star, row.ci_low, row.ci_high,
                  row.result.flags.empty() ? "" : " flags=", row.result.flags.c_str());
    out.summary.push_back(buf);
  }
  out.plot_tables.push_back(t);
  return out;
}

inline ExperimentOutput run_experiment(Experiment e, const ExperimentConfig& cfg) {
  switch (e) {
    case Experiment::validate_likelihood: return validate_likelihood_output(run_validate_likelihood(cfg));
    case Experiment::converge: return converge_output(run_converge(cfg));
    case Experiment::init_sensitivity: return init_sensitivity_output(run_init_sensitivity(cfg));
    case Experiment::compare: return compare_output(run_compare(cfg));
    case Experiment::improve: return improve_output(run_improve(cfg));
  }
  throw std::invalid_argument("run_experiment: unknown experiment");
}

}  // namespace jitterlab::harness
