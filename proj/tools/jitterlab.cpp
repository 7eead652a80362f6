// jitterlab <experiment> --config <path> [--seed N] [--trials N] [--out <path>]
//           [--paper-scale] [--emit-plotdata] [--threads N]
//
// Trial rows go to --out (or stdout); summary lines go to stdout when --out
// is given and to stderr otherwise. Failures print one JSON line on stderr.

#include "jitterlab/harness/experiments.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace jitterlab::harness;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumericalError = 3 };

int fail(int code, const std::string& kind, const std::string& message) {
  nlohmann::json j{{"status", "error"}, {"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
  return code;
}

std::ofstream open_output(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  return os;
}

void write_main(std::ostream& os, const ExperimentOutput& out, bool timing) {
  if (out.primary) out.primary->write(os);
  else write_trial_csv(os, out.records, timing);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Jittered-sampling estimator experiments"};
  std::string experiment_name, config_path, out_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials, threads;
  bool full_scale = false, emit_plotdata = false;
  app.add_option("experiment", experiment_name,
                 "validate-likelihood | converge | init-sensitivity | compare | improve")
      ->required();
  app.add_option("--config", config_path, "flat key = value config file")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--trials", trials, "overrides the config trial count");
  app.add_option("--threads", threads, "worker threads (0: all cores)");
  app.add_option("--out", out_path, "CSV output path (default stdout)");
  app.add_flag("--paper-scale", full_scale, "full-size trial, chain and draw counts");
  app.add_flag("--emit-plotdata", emit_plotdata, "write aggregated tables next to the CSV");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfigError, "usage", e.what());
  }

  try {
    const Experiment experiment = parse_experiment(experiment_name);
    ExperimentConfig cfg = load_config(config_path);
    if (cfg.experiment && *cfg.experiment != experiment) {
      throw ConfigError(std::string("config is for experiment '") + to_string(*cfg.experiment) +
                        "', not '" + experiment_name + "'");
    }
    if (full_scale) cfg.apply_full_scale();
    if (seed) cfg.seed = *seed;
    if (trials) cfg.trials = *trials;
    if (threads) cfg.threads = *threads;
    cfg.validate();

    const ExperimentOutput out = run_experiment(experiment, cfg);

    std::ostream* summary = &std::cerr;
    if (out_path.empty()) {
      write_main(std::cout, out, cfg.timing);
    } else {
      std::ofstream os = open_output(out_path);
      write_main(os, out, cfg.timing);
      summary = &std::cout;
    }
    if (emit_plotdata) {
      std::filesystem::path stem =
          out_path.empty() ? std::filesystem::path(std::string("jitterlab-") + to_string(experiment))
                           : std::filesystem::path(out_path).replace_extension();
      for (const Table& t : out.plot_tables) {
        std::filesystem::path p = stem;
        p += "." + t.name + ".csv";
        std::ofstream os = open_output(p);
        t.write(os);
      }
    }
    for (const std::string& line : out.summary) *summary << line << '\n';
    summary->flush();
    return kOk;
  } catch (const ConfigError& e) {
    return fail(kConfigError, "config", e.what());
  } catch (const jitterlab::NumericalError& e) {
    return fail(kNumericalError, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, "runtime", e.what());
  }
}
