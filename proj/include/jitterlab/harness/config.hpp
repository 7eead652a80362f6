#pragma once

// Flat key = value experiment configuration. Lists are comma separated,
// '#' starts a comment, unknown or repeated keys are errors. Prior means are
// given either as standard deviations (e_sigma_z) or variances (e_sigma_z2).

#include "jitterlab/em.hpp"
#include "jitterlab/sampler.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace jitterlab::harness {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Experiment { validate_likelihood, converge, init_sensitivity, compare, improve };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::validate_likelihood: return "validate-likelihood";
    case Experiment::converge: return "converge";
    case Experiment::init_sensitivity: return "init-sensitivity";
    case Experiment::compare: return "compare";
    case Experiment::improve: return "improve";
  }
  return "unknown";
}

inline Experiment parse_experiment(const std::string& s) {
  for (Experiment e : {Experiment::validate_likelihood, Experiment::converge,
                       Experiment::init_sensitivity, Experiment::compare, Experiment::improve}) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError("unknown experiment '" + s +
                    "' (expected validate-likelihood, converge, init-sensitivity, compare, improve)");
}

enum class Method { lmmse0, lmmse, em, gibbs };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::lmmse0: return "lmmse0";
    case Method::lmmse: return "lmmse";
    case Method::em: return "em";
    case Method::gibbs: return "gibbs";
  }
  return "unknown";
}

struct ExperimentConfig {
  std::optional<Experiment> experiment;
  int K = 10;
  std::vector<int> M{4};
  std::vector<double> e_sigma_z{0.25};  // prior-mean standard deviations
  std::vector<double> e_sigma_w{0.1};
  QuadratureSettings quad;
  SliceConfig slice;
  int iterations = 500;  // I
  int burn_in = 500;     // I_b
  int chains = 20;
  int trials = 200;
  std::optional<std::uint64_t> seed;
  int threads = 0;  // 0: hardware concurrency
  std::vector<Method> methods{Method::lmmse0, Method::lmmse, Method::em, Method::gibbs};
  VarianceMode em_variance = VarianceMode::known;
  int em_max_iters = 200;
  double em_tol = 1e-6;
  int checkpoint_every = 50;
  int mc_draws = 20000;
  int grid_points = 200;
  int bins = 10;
  int bootstrap = 200;
  int improvement_targets = 400;
  bool timing = false;

  EmConfig em_config(double known_sz2 = 0.0, double known_sw2 = 0.0) const {
    EmConfig em = em_variance == VarianceMode::known ? EmConfig::known(known_sz2, known_sw2)
                                                     : EmConfig{};
    em.quad = quad;
    em.max_iters = em_max_iters;
    em.tol = em_tol;
    return em;
  }

  ChainSettings chain_settings() const {
    ChainSettings s;
    s.iterations = iterations;
    s.burn_in = burn_in;
    s.slice = slice;
    return s;
  }

  bool uses(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

  /// Full-size trial and chain counts.
  void apply_full_scale() {
    trials = 1000;
    chains = 100;
    mc_draws = 100000;
  }

  void validate() const {
    auto check = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    check(K >= 1, "K must be >= 1");
    check(!M.empty() && !e_sigma_z.empty() && !e_sigma_w.empty(), "sweep lists must be nonempty");
    for (int m : M) check(m >= 1, "M entries must be >= 1");
    for (double v : e_sigma_z) check(v > 0 && std::isfinite(v), "e_sigma_z entries must be > 0");
    for (double v : e_sigma_w) check(v > 0 && std::isfinite(v), "e_sigma_w entries must be > 0");
    check(quad.J1 >= 1 && quad.J2 >= 1 && quad.J3 >= 1, "J1, J2, J3 must be >= 1");
    check(quad.legendre_range > 0, "legendre_range must be > 0");
    check(slice.tau >= 0, "tau must be >= 0");
    check(slice.max_shrink_iters >= 1, "max_shrink_iters must be >= 1");
    check(iterations >= 1, "iterations must be >= 1");
    check(burn_in >= 0, "burn_in must be >= 0");
    check(chains >= 2, "chains must be >= 2");
    check(trials >= 1, "trials must be >= 1");
    check(seed.has_value(), "seed is mandatory (set 'seed' in the config or pass --seed)");
    check(threads >= 0, "threads must be >= 0");
    check(!methods.empty(), "methods must be nonempty");
    check(em_max_iters >= 1 && em_tol > 0, "em_max_iters must be >= 1 and em_tol > 0");
    check(checkpoint_every >= 2, "checkpoint_every must be >= 2");
    check(mc_draws >= 100 && grid_points >= 10 && bins >= 2, "mc_draws >= 100, grid_points >= 10, bins >= 2");
    check(bootstrap >= 0 && improvement_targets >= 2, "bootstrap >= 0, improvement_targets >= 2");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline Method parse_method(const std::string& v) {
  for (Method m : {Method::lmmse0, Method::lmmse, Method::em, Method::gibbs}) {
    if (v == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + v + "' (expected lmmse0, lmmse, em, gibbs)");
}

}  // namespace detail

inline void apply_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "experiment") c.experiment = parse_experiment(v);
  else if (key == "K") c.K = parse_number<int>(key, v);
  else if (key == "M") c.M = parse_list<int>(key, v);
  else if (key == "e_sigma_z") c.e_sigma_z = parse_list<double>(key, v);
  else if (key == "e_sigma_w") c.e_sigma_w = parse_list<double>(key, v);
  else if (key == "e_sigma_z2" || key == "e_sigma_w2") {
    std::vector<double> sd = parse_list<double>(key, v);
    for (double& x : sd) {
      if (!(x > 0)) throw ConfigError("key '" + key + "': variances must be > 0");
      x = std::sqrt(x);
    }
    (key == "e_sigma_z2" ? c.e_sigma_z : c.e_sigma_w) = sd;
  }
  else if (key == "J1") c.quad.J1 = parse_number<int>(key, v);
  else if (key == "J2") c.quad.J2 = parse_number<int>(key, v);
  else if (key == "J3") c.quad.J3 = parse_number<int>(key, v);
  else if (key == "legendre_range") c.quad.legendre_range = parse_number<double>(key, v);
  else if (key == "tau") c.slice.tau = parse_number<double>(key, v);
  else if (key == "max_shrink_iters") c.slice.max_shrink_iters = parse_number<int>(key, v);
  else if (key == "iterations" || key == "I") c.iterations = parse_number<int>(key, v);
  else if (key == "burn_in" || key == "I_b") c.burn_in = parse_number<int>(key, v);
  else if (key == "chains") c.chains = parse_number<int>(key, v);
  else if (key == "trials") c.trials = parse_number<int>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "threads") c.threads = parse_number<int>(key, v);
  else if (key == "methods") {
    c.methods.clear();
    for (const std::string& m : split_list(v)) c.methods.push_back(parse_method(m));
  } else if (key == "em_variance") {
    if (v == "known") c.em_variance = VarianceMode::known;
    else if (v == "random") c.em_variance = VarianceMode::random;
    else throw ConfigError("key 'em_variance': expected known or random, got '" + v + "'");
  } else if (key == "em_max_iters") c.em_max_iters = parse_number<int>(key, v);
  else if (key == "em_tol") c.em_tol = parse_number<double>(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = parse_number<int>(key, v);
  else if (key == "mc_draws") c.mc_draws = parse_number<int>(key, v);
  else if (key == "grid_points") c.grid_points = parse_number<int>(key, v);
  else if (key == "bins") c.bins = parse_number<int>(key, v);
  else if (key == "bootstrap") c.bootstrap = parse_number<int>(key, v);
  else if (key == "improvement_targets") c.improvement_targets = parse_number<int>(key, v);
  else if (key == "timing") c.timing = parse_bool(key, v);
  else throw ConfigError("unknown key '" + key + "'");
}

namespace detail {

// Spellings that set the same field collide as duplicates.
inline std::string canonical_key(const std::string& key) {
  if (key == "e_sigma_z2") return "e_sigma_z";
  if (key == "e_sigma_w2") return "e_sigma_w";
  if (key == "I") return "iterations";
  if (key == "I_b") return "burn_in";
  return key;
}

}  // namespace detail

/// Parses the text of a config file. Validation is left to the caller so
/// command-line overrides can be applied first.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(detail::canonical_key(key), lineno); !fresh) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                        "' already set on line " + std::to_string(it->second));
    }
    try {
      apply_key(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace jitterlab::harness
