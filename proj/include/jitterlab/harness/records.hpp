#pragma once

// Trial rows, CSV output and per-sweep-point summaries in dB.

#include "jitterlab/harness/config.hpp"

#include <cstdio>
#include <ostream>

namespace jitterlab::harness {

inline constexpr const char* kCsvHeader =
    "trial,method,m,e_sigma_z,e_sigma_w,squared_error,wall_time_ms,seed,flags";

struct TrialRecord {
  int trial = 0;
  Method method = Method::lmmse0;
  int m = 1;
  double e_sigma_z = 0.0;
  double e_sigma_w = 0.0;
  double squared_error = std::numeric_limits<double>::quiet_NaN();
  double wall_time_ms = 0.0;
  std::uint64_t seed = 0;
  std::string variant;  // e.g. init=truth or iters=500; groups summaries
  std::string flags;    // problems: nonconverged, error=...

  bool ok() const { return std::isfinite(squared_error); }
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Keeps commas and newlines out of a CSV field.
inline std::string sanitize_field(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

inline void add_flag(std::string& flags, const std::string& f) {
  if (!flags.empty()) flags += '|';
  flags += sanitize_field(f);
}

/// Wall times are written only when timing is enabled; otherwise the column
/// is 0 so reruns are byte-identical.
inline void write_trial_csv(std::ostream& os, const std::vector<TrialRecord>& records,
                            bool timing) {
  os << kCsvHeader << '\n';
  for (const TrialRecord& r : records) {
    std::string flags = r.variant;
    if (!r.flags.empty()) add_flag(flags, r.flags);
    os << r.trial << ',' << to_string(r.method) << ',' << r.m << ',' << format_double(r.e_sigma_z)
       << ',' << format_double(r.e_sigma_w) << ',' << format_double(r.squared_error) << ','
       << (timing ? format_double(r.wall_time_ms) : std::string("0")) << ',' << r.seed << ','
       << flags << '\n';
  }
}

/// A generic named table for plot data and experiment-specific outputs.
struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(std::ostream& os) const {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
      os << '\n';
    }
  }
};

inline double to_db(double v) { return 10.0 * std::log10(v); }

/// Mean squared error over trials with a normal-approximation 95% interval,
/// mapped to dB by the delta method.
struct MseSummary {
  Method method = Method::lmmse0;
  int m = 1;
  double e_sigma_z = 0, e_sigma_w = 0;
  std::string variant;
  int trials = 0;
  int failures = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stderr_mean = std::numeric_limits<double>::quiet_NaN();

  double db() const { return to_db(mean); }
  double ci_half_db() const { return 10.0 / std::log(10.0) * 1.959963984540054 * stderr_mean / mean; }
  double ci_low_db() const { return db() - ci_half_db(); }
  double ci_high_db() const { return db() + ci_half_db(); }
};

inline MseSummary summarize_errors(const std::vector<double>& se) {
  MseSummary s;
  double sum = 0.0;
  for (double v : se) {
    if (std::isfinite(v)) {
      sum += v;
      ++s.trials;
    } else {
      ++s.failures;
    }
  }
  if (s.trials == 0) return s;
  s.mean = sum / s.trials;
  double ss = 0.0;
  for (double v : se) {
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  }
  s.stderr_mean = s.trials > 1 ? std::sqrt(ss / (s.trials - 1) / s.trials) : 0.0;
  return s;
}

/// Groups records by (method, m, e_sigma_z, e_sigma_w, variant) in order of
/// first appearance.
inline std::vector<MseSummary> summarize(const std::vector<TrialRecord>& records) {
  using Key = std::tuple<int, int, double, double, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<MseSummary> out;
  std::vector<std::vector<double>> errors;
  for (const TrialRecord& r : records) {
    const Key key{static_cast<int>(r.method), r.m, r.e_sigma_z, r.e_sigma_w, r.variant};
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) {
      MseSummary s;
      s.method = r.method;
      s.m = r.m;
      s.e_sigma_z = r.e_sigma_z;
      s.e_sigma_w = r.e_sigma_w;
      s.variant = r.variant;
      out.push_back(s);
      errors.emplace_back();
    }
    errors[it->second].push_back(r.squared_error);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    MseSummary s = summarize_errors(errors[i]);
    out[i].trials = s.trials;
    out[i].failures = s.failures;
    out[i].mean = s.mean;
    out[i].stderr_mean = s.stderr_mean;
  }
  return out;
}

inline Table summary_table(const std::vector<MseSummary>& rows) {
  Table t{"summary",
          {"method", "m", "e_sigma_z", "e_sigma_w", "variant", "trials", "failures", "mean_mse",
           "mse_db", "ci_low_db", "ci_high_db"},
          {}};
  for (const MseSummary& s : rows) {
    t.rows.push_back({to_string(s.method), std::to_string(s.m), format_double(s.e_sigma_z),
                      format_double(s.e_sigma_w), s.variant, std::to_string(s.trials),
                      std::to_string(s.failures), format_double(s.mean), format_double(s.db()),
                      format_double(s.ci_low_db()), format_double(s.ci_high_db())});
  }
  return t;
}

}  // namespace jitterlab::harness
