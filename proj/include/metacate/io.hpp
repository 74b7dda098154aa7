#pragma once

// CSV and config-file ingestion and emission. Every reader reports problems
// as InputError (or ConfigError for config files) with "source:line"
// prefixes; every writer is deterministic and round-trips through its reader.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metacate/core.hpp"
#include "metacate/simgen.hpp"

namespace metacate {

/// Shortest representation that parses back to the same double.
std::string format_number(double value);

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row

  /// Index of a header column; throws InputError naming the column.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
  int integer(std::size_t row, std::size_t col) const;
  bool empty_field(std::size_t row, std::size_t col) const;
};

/// Comma-separated, no quoting. Blank lines are skipped; a trailing '\r' is
/// dropped. Rows with the wrong field count are rejected.
CsvTable read_csv(std::istream& in, std::string source);
CsvTable read_csv_file(const std::string& path);

// Trials: study_id,y,a,<covariates...>. One file may hold several studies;
// they are returned in order of first appearance.
std::vector<TrialDataset> read_trials(std::istream& in, const std::string& source);
void write_trials(std::ostream& out, std::span<const TrialDataset> trials);

// Profiles: profile_id,<covariates...>
struct ProfileSet {
  std::vector<std::string> covariate_names;
  std::vector<CovariateProfile> profiles;
};
ProfileSet read_profiles(std::istream& in, const std::string& source);
void write_profiles(std::ostream& out, const ProfileSet& set);

/// Reorders profile columns to match the trial covariate names. Throws
/// InputError naming any covariate missing from the profile file.
ProfileSet align_profiles(const ProfileSet& set, std::span<const std::string> names);

// Aggregates: profile_id,study_id,tau_hat,se2
std::vector<StudyCateEstimate> read_aggregates(std::istream& in, const std::string& source);
void write_aggregates(std::ostream& out, std::span<const StudyCateEstimate> estimates);

/// One output row of the predict command. The interval columns are empty
/// when fewer than three studies contributed.
struct PredictionRow {
  int profile_id = 0;
  double tau_pooled = 0.0;
  double theta2 = 0.0;
  std::optional<double> lower;
  std::optional<double> upper;
  std::optional<int> df;
  std::string flag;  // crosses_zero, positive, negative or no_pi
};

std::string sign_flag(std::optional<double> lower, std::optional<double> upper);
PredictionRow make_prediction_row(const PooledCate& pooled,
                                  const std::optional<PredictionInterval>& interval);

std::vector<PredictionRow> read_predictions(std::istream& in, const std::string& source);
void write_predictions(std::ostream& out, std::span<const PredictionRow> rows);

// Metrics: profile_id,method,coverage,mean_length,bias,n_effective_replications
struct MetricsRow {
  int profile_id = 0;
  std::string method;
  double coverage = 0.0;
  double mean_length = 0.0;
  double bias = 0.0;
  int n_effective_replications = 0;
};

std::vector<MetricsRow> metrics_rows(std::span<const MetricsTable> tables);
std::vector<MetricsRow> read_metrics(std::istream& in, const std::string& source);
void write_metrics(std::ostream& out, std::span<const MetricsRow> rows);

/// Flat `key = value` file. '#' starts a comment; duplicate keys are errors.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source);
  static KeyValueConfig parse_file(const std::string& path);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string_view fallback) const;
  long long get_int(std::string_view key, long long fallback) const;
  std::uint64_t get_uint64(std::string_view key, std::uint64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<std::string> get_list(std::string_view key, std::string_view fallback) const;

  /// Throws ConfigError listing any key outside `known`.
  void require_known(std::span<const std::string_view> known) const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::string source_;
  std::map<std::string, std::string, std::less<>> values_;
  std::map<std::string, std::size_t, std::less<>> lines_;

  [[noreturn]] void fail(std::string_view key, const std::string& why) const;
};

/// Simulation settings of a config file: the SimConfig plus the Stage-1
/// methods to compare.
struct SimulationPlan {
  SimConfig config;
  std::vector<SimMethod> methods;
  std::string scenario;  // label used in reports
};

SimulationPlan simulation_plan(const KeyValueConfig& cfg);
std::string scenario_label(const SimConfig& config);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex_digest(std::uint64_t value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace metacate
