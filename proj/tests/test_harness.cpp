#include "jitterlab/harness/experiments.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace jitterlab;
using namespace jitterlab::harness;
using Catch::Approx;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c = parse_config_string(R"(
    K = 4
    M = 2
    e_sigma_z = 0.1, 0.3
    e_sigma_w = 0.1
    iterations = 40
    burn_in = 20
    trials = 6
    chains = 4
    seed = 11
    bootstrap = 20
    threads = 2
  )");
  c.validate();
  return c;
}

std::string csv(const std::vector<TrialRecord>& r) {
  std::ostringstream os;
  write_trial_csv(os, r, false);
  return os.str();
}

}  // namespace

TEST_CASE("config parses lists, comments and overrides", "[config]") {
  const ExperimentConfig c = parse_config_string(
      "# header\nexperiment = compare\nM = 2, 4 ,8\ne_sigma_w = 0.05 # trailing\n"
      "methods = lmmse0,gibbs\nem_variance = random\ntiming = true\nseed = 7\n");
  CHECK(c.experiment == Experiment::compare);
  CHECK(c.M == std::vector<int>{2, 4, 8});
  CHECK(c.e_sigma_w == std::vector<double>{0.05});
  CHECK(c.methods == std::vector<Method>{Method::lmmse0, Method::gibbs});
  CHECK(c.em_variance == VarianceMode::random);
  CHECK(c.timing);
  CHECK(*c.seed == 7);
  CHECK(c.K == 10);

  const ExperimentConfig v = parse_config_string("e_sigma_z2 = 0.0625, 0.01\nI = 1000\nI_b = 200\n");
  CHECK(v.e_sigma_z == std::vector<double>{0.25, 0.1});
  CHECK(v.iterations == 1000);
  CHECK(v.burn_in == 200);
  CHECK_THROWS_AS(parse_config_string("e_sigma_w = 0.1\ne_sigma_w2 = 0.01\n"), ConfigError);
}

TEST_CASE("config rejects malformed input", "[config]") {
  CHECK_THROWS_AS(parse_config_string("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("K = 3\nK = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("K = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("K 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("methods = lmmse0, ml\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("experiment = sweep\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_string("M = \n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/path.cfg"), ConfigError);
  try {
    parse_config_string("K = 3\n\nfoo = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  ExperimentConfig c = parse_config_string("K = 4\n");
  CHECK_THROWS_AS(c.validate(), ConfigError);  // seed missing
  c.seed = 1;
  CHECK_NOTHROW(c.validate());
  c.e_sigma_z = {0.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("csv rows have the fixed header and round-trip doubles", "[records]") {
  TrialRecord r;
  r.trial = 3;
  r.method = Method::em;
  r.m = 4;
  r.e_sigma_z = 0.1;
  r.e_sigma_w = 0.05;
  r.squared_error = 0.1 + 0.2;
  r.seed = 99;
  r.variant = "iters=50";
  add_flag(r.flags, "error=a,b");
  const std::string out = csv({r});
  CHECK(out.substr(0, out.find('\n')) ==
        "trial,method,m,e_sigma_z,e_sigma_w,squared_error,wall_time_ms,seed,flags");
  const std::string row = out.substr(out.find('\n') + 1);
  CHECK(row == "3,em,4,0.10000000000000001,0.050000000000000003,0.30000000000000004,0,99,"
               "iters=50|error=a;b\n");
  CHECK(std::stod("0.30000000000000004") == 0.1 + 0.2);
}

TEST_CASE("summary interval narrows like one over root trials", "[records]") {
  Rng rng(5);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> a(400), b(1600);
  for (double& v : a) v = e(rng);
  for (double& v : b) v = e(rng);
  const double ra = summarize_errors(a).ci_half_db(), rb = summarize_errors(b).ci_half_db();
  CHECK(ra / rb == Approx(2.0).epsilon(0.15));
  std::vector<double> with_nan{1.0, std::nan(""), 3.0};
  const MseSummary s = summarize_errors(with_nan);
  CHECK(s.trials == 2);
  CHECK(s.failures == 1);
  CHECK(s.mean == 2.0);
}

TEST_CASE("improvement factor of identical and shifted curves", "[improvement]") {
  MseCurve base;
  for (int i = 0; i <= 20; ++i) {
    const double s = 0.01 * std::pow(50.0, i / 20.0);
    base.sigma_z.push_back(s);
    base.mse_db.push_back(10 * std::log10(0.001 + s * s));
  }
  const ImprovementResult same = improvement_factor(base, base, 0.02);
  CHECK(same.factor == Approx(1.0).margin(1e-6));
  CHECK(same.targets_used > 0);

  // The method reaches the same MSE at twice the jitter.
  MseCurve shifted;
  for (int i = 0; i <= 40; ++i) {
    const double s = 0.01 * std::pow(100.0, i / 40.0);
    shifted.sigma_z.push_back(s);
    shifted.mse_db.push_back(10 * std::log10(0.001 + s * s / 4));
  }
  const ImprovementResult two = improvement_factor(base, shifted, 0.02);
  CHECK(two.factor == Approx(2.0).epsilon(0.02));

  // A method that never gets as bad as the baseline is censored.
  MseCurve flat = base;
  for (double& v : flat.mse_db) v = -40.0;
  const ImprovementResult cens = improvement_factor(base, flat, 0.02);
  CHECK(cens.flags.find("censored") != std::string::npos);
  CHECK_THROWS(improvement_factor(MseCurve{{0.1}, {1.0}}, base, 0.02));
}

TEST_CASE("parallel_for covers every index and rethrows", "[pool]") {
  std::vector<int> hit(1000, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  CHECK(std::all_of(hit.begin(), hit.end(), [](int v) { return v == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("x");
                  }),
                  std::runtime_error);
}

TEST_CASE("compare is deterministic across thread counts", "[experiments]") {
  ExperimentConfig c = small_config();
  const CompareResult a = run_compare(c);
  c.threads = 1;
  const CompareResult b = run_compare(c);
  CHECK(csv(a.records) == csv(b.records));
  CHECK(a.records.size() == 2u * 6u * 4u);
  for (const TrialRecord& r : a.records) {
    CHECK(r.ok());
    CHECK(r.flags.empty());
  }
  // Common random numbers: a trial's seed is shared across sweep points.
  CHECK(a.records.front().seed == a.records[6 * 4].seed);
  // Fewer trials reproduce a prefix of the rows.
  c.trials = 3;
  const CompareResult p = run_compare(c);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(p.records[i].squared_error == a.records[i].squared_error);
  }
}

TEST_CASE("identical chains give the degenerate PSRF", "[experiments]") {
  ExperimentConfig c = small_config();
  c.trials = 2;
  c.checkpoint_every = 20;
  const ConvergeResult r = run_converge(c, true);
  REQUIRE(r.psrf.size() == 3);
  for (const PsrfPoint& p : r.psrf) {
    CHECK(p.r_hat == Approx((p.iteration - 1.0) / p.iteration).epsilon(1e-9));
  }
  REQUIRE(r.mse.size() == 2);
  CHECK(r.mse.back().iterations == 40);
  CHECK(r.mse.back().db_normalized == 0.0);
  // The last checkpoint matches a plain chain with the same stream.
  const PointContext ctx = make_context(c, sweep_points(c).front());
  const SyntheticInstance s = synthesize(ctx.model, ctx.hyper, trial_seed(c, 1));
  Rng rng(derive_seed(trial_seed(c, 1), kGibbsStream));
  const Vector x = run_chain(s.y, ctx.model, ctx.hyper, c.chain_settings(),
                             default_initial_state(s.y, ctx.model, ctx.hyper), rng).x_hat;
  const TrialRecord& last = r.records.back();
  CHECK(last.trial == 1);
  CHECK(last.squared_error == Approx((x - s.x_true).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("init presets start where they claim", "[experiments]") {
  const ExperimentConfig c = small_config();
  const PointContext ctx = make_context(c, sweep_points(c).front());
  const SyntheticInstance s = synthesize(ctx.model, ctx.hyper, 3);
  const auto presets = init_presets(s, ctx.model, ctx.hyper, 3);
  REQUIRE(presets.size() == 10);
  CHECK(presets[0].state.x.isZero());
  CHECK(presets[1].state.x.isApprox(lmmse_estimate(s.y, *ctx.lmmse0)));
  CHECK(presets[2].state.x == s.x_true);
  CHECK(presets[2].state.z == s.z_true);
  CHECK(presets[3].state.sigma_z2 != presets[4].state.sigma_z2);
  for (const auto& p : presets) CHECK_NOTHROW(p.state.validate(ctx.model));

  ExperimentConfig c2 = c;
  c2.e_sigma_z = {0.2};
  c2.trials = 3;
  const InitSensitivityResult r = run_init_sensitivity(c2);
  CHECK(r.records.size() == 30);
  REQUIRE(r.presets.size() == 10);
  CHECK(r.presets[1].preset == "lmmse0");
  CHECK(r.presets[1].mean_db == 0.0);
  REQUIRE(r.dispersion.size() == 1);
  CHECK(std::isfinite(r.dispersion[0].second));
}

TEST_CASE("likelihood validation on a small model", "[experiments]") {
  ExperimentConfig c = small_config();
  c.e_sigma_z = {0.05, 0.3};
  c.mc_draws = 20000;
  const ValidateLikelihoodResult r = run_validate_likelihood(c);
  REQUIRE(r.points.size() == 2);
  CHECK(r.points[0].inner_rule == RuleKind::normal_hermite);
  CHECK(r.points[1].inner_rule == RuleKind::normal_legendre);
  for (const auto& p : r.points) {
    REQUIRE(p.per_n.size() == 8);
    for (const auto& n : p.per_n) {
      CHECK(n.grid_mass == Approx(1.0).margin(0.02));
      CHECK(n.sup_rel_dev < 0.1);
    }
  }
  const ExperimentOutput out = validate_likelihood_output(r);
  REQUIRE(out.primary);
  CHECK(out.primary->rows.size() == 16);
}

TEST_CASE("improve produces one row per method and sweep slice", "[experiments]") {
  ExperimentConfig c = small_config();
  c.e_sigma_z = {0.05, 0.1, 0.2, 0.4};
  c.methods = {Method::lmmse0, Method::lmmse};
  const ImproveResult r = run_improve(c);
  REQUIRE(r.rows.size() == 1);
  const ImprovementRow& row = r.rows.front();
  CHECK(row.method == Method::lmmse);
  CHECK(std::isfinite(row.result.factor));
  CHECK(row.ci_low <= row.ci_high);
  const ExperimentOutput out = improve_output(r);
  CHECK(out.plot_tables.back().name == "improvement");
}
