#include "metacate/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace metacate {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> to_double(std::string_view s) {
  double value = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return value;
}

template <typename Int>
std::optional<Int> to_integer(std::string_view s) {
  Int value = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return value;
}

void require_columns(const CsvTable& table, std::span<const std::string_view> names) {
  for (auto name : names) table.column(name);
}

void check_prefix(const CsvTable& table, std::span<const std::string_view> names) {
  require_columns(table, names);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (table.header.size() <= i || table.header[i] != names[i]) {
      throw InputError(table.source + ":1: expected column '" + std::string(names[i]) +
                       "' at position " + std::to_string(i + 1));
    }
  }
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";  // also folds -0
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw InputError(source + ":1: missing required column '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& field = rows[row][col];
  const auto value = to_double(field);
  if (!value) {
    throw InputError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] +
                     "': '" + field + "' is not a number");
  }
  return *value;
}

int CsvTable::integer(std::size_t row, std::size_t col) const {
  const auto& field = rows[row][col];
  const auto value = to_integer<int>(field);
  if (!value) {
    throw InputError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] +
                     "': '" + field + "' is not an integer");
  }
  return *value;
}

bool CsvTable::empty_field(std::size_t row, std::size_t col) const { return rows[row][col].empty(); }

CsvTable read_csv(std::istream& in, std::string source) {
  CsvTable table;
  table.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    if (!have_header) {
      table.header = std::move(fields);
      for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (table.header[i].empty()) {
          throw InputError(table.source + ":" + std::to_string(line_no) + ": empty column name");
        }
        for (std::size_t j = 0; j < i; ++j) {
          if (table.header[i] == table.header[j]) {
            throw InputError(table.source + ":" + std::to_string(line_no) + ": duplicate column '" +
                             table.header[i] + "'");
          }
        }
      }
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw InputError(table.source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(line_no);
  }
  if (!have_header) throw InputError(table.source + ": empty file, no header");
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_csv(in, path);
}

std::vector<TrialDataset> read_trials(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  static constexpr std::string_view kFixed[] = {"study_id", "y", "a"};
  check_prefix(table, kFixed);
  const std::size_t p = table.header.size() - 3;
  std::vector<std::string> names(table.header.begin() + 3, table.header.end());

  std::vector<int> order;
  std::map<int, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const int id = table.integer(r, 0);
    auto [it, inserted] = rows_of.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(r);
  }

  std::vector<TrialDataset> trials;
  for (int id : order) {
    const auto& rows = rows_of[id];
    TrialDataset data;
    data.study_id = id;
    data.covariate_names = names;
    data.y.resize(rows.size());
    data.a.resize(rows.size());
    data.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      data.y[i] = table.number(r, 1);
      const int a = table.integer(r, 2);
      if (a != 0 && a != 1) {
        throw InputError(source + ":" + std::to_string(table.lines[r]) +
                         ": column 'a' must be 0 or 1, got " + std::to_string(a));
      }
      data.a[i] = a;
      for (std::size_t j = 0; j < p; ++j) {
        data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table.number(r, 3 + j);
      }
    }
    trials.push_back(std::move(data));
  }
  if (trials.empty()) throw InputError(source + ": no data rows");
  return trials;
}

void write_trials(std::ostream& out, std::span<const TrialDataset> trials) {
  if (trials.empty()) return;
  out << "study_id,y,a";
  for (const auto& name : trials.front().covariate_names) out << ',' << name;
  out << '\n';
  for (const auto& t : trials) {
    if (t.covariate_names != trials.front().covariate_names) {
      throw InputError("write_trials: covariate names differ between studies");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << t.study_id << ',' << format_number(t.y[i]) << ',' << t.a[i];
      for (Eigen::Index j = 0; j < t.x.cols(); ++j) {
        out << ',' << format_number(t.x(static_cast<Eigen::Index>(i), j));
      }
      out << '\n';
    }
  }
}

ProfileSet read_profiles(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  static constexpr std::string_view kFixed[] = {"profile_id"};
  check_prefix(table, kFixed);
  ProfileSet set;
  set.covariate_names.assign(table.header.begin() + 1, table.header.end());
  const std::size_t p = set.covariate_names.size();
  std::vector<int> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    CovariateProfile profile;
    profile.profile_id = table.integer(r, 0);
    if (std::find(seen.begin(), seen.end(), profile.profile_id) != seen.end()) {
      throw InputError(source + ":" + std::to_string(table.lines[r]) + ": duplicate profile_id " +
                       std::to_string(profile.profile_id));
    }
    seen.push_back(profile.profile_id);
    profile.x.resize(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) profile.x(static_cast<Eigen::Index>(j)) = table.number(r, 1 + j);
    set.profiles.push_back(std::move(profile));
  }
  return set;
}

void write_profiles(std::ostream& out, const ProfileSet& set) {
  out << "profile_id";
  for (const auto& name : set.covariate_names) out << ',' << name;
  out << '\n';
  for (const auto& profile : set.profiles) {
    out << profile.profile_id;
    for (Eigen::Index j = 0; j < profile.x.size(); ++j) out << ',' << format_number(profile.x(j));
    out << '\n';
  }
}

ProfileSet align_profiles(const ProfileSet& set, std::span<const std::string> names) {
  std::vector<std::size_t> source_index;
  for (const auto& name : names) {
    const auto it = std::find(set.covariate_names.begin(), set.covariate_names.end(), name);
    if (it == set.covariate_names.end()) {
      throw InputError("profiles lack covariate column '" + name + "'");
    }
    source_index.push_back(static_cast<std::size_t>(it - set.covariate_names.begin()));
  }
  ProfileSet out;
  out.covariate_names.assign(names.begin(), names.end());
  for (const auto& profile : set.profiles) {
    CovariateProfile aligned{profile.profile_id, Eigen::VectorXd(static_cast<Eigen::Index>(names.size()))};
    for (std::size_t j = 0; j < names.size(); ++j) {
      aligned.x(static_cast<Eigen::Index>(j)) = profile.x(static_cast<Eigen::Index>(source_index[j]));
    }
    out.profiles.push_back(std::move(aligned));
  }
  return out;
}

std::vector<StudyCateEstimate> read_aggregates(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  static constexpr std::string_view kCols[] = {"profile_id", "study_id", "tau_hat", "se2"};
  require_columns(table, kCols);
  const auto c_pid = table.column("profile_id");
  const auto c_sid = table.column("study_id");
  const auto c_tau = table.column("tau_hat");
  const auto c_se2 = table.column("se2");
  std::vector<StudyCateEstimate> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    StudyCateEstimate e{table.integer(r, c_sid), table.integer(r, c_pid), table.number(r, c_tau),
                        table.number(r, c_se2)};
    if (!std::isfinite(e.tau_hat) || !std::isfinite(e.se2) || e.se2 < 0.0) {
      throw InputError(source + ":" + std::to_string(table.lines[r]) +
                       ": tau_hat must be finite and se2 finite and non-negative");
    }
    out.push_back(e);
  }
  return out;
}

void write_aggregates(std::ostream& out, std::span<const StudyCateEstimate> estimates) {
  out << "profile_id,study_id,tau_hat,se2\n";
  for (const auto& e : estimates) {
    out << e.profile_id << ',' << e.study_id << ',' << format_number(e.tau_hat) << ','
        << format_number(e.se2) << '\n';
  }
}

std::string sign_flag(std::optional<double> lower, std::optional<double> upper) {
  if (!lower || !upper) return "no_pi";
  if (*lower > 0.0) return "positive";
  if (*upper < 0.0) return "negative";
  return "crosses_zero";
}

PredictionRow make_prediction_row(const PooledCate& pooled,
                                  const std::optional<PredictionInterval>& interval) {
  PredictionRow row;
  row.profile_id = pooled.profile_id;
  row.tau_pooled = pooled.tau_pooled;
  row.theta2 = pooled.theta2;
  if (interval) {
    row.lower = interval->lower;
    row.upper = interval->upper;
    row.df = interval->df;
  }
  row.flag = sign_flag(row.lower, row.upper);
  return row;
}

std::vector<PredictionRow> read_predictions(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  static constexpr std::string_view kCols[] = {"profile_id", "tau_pooled", "theta2", "lower",
                                               "upper",      "df",         "flag_nonoverlap"};
  require_columns(table, kCols);
  std::vector<std::size_t> c;
  for (auto name : kCols) c.push_back(table.column(name));
  std::vector<PredictionRow> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    PredictionRow row;
    row.profile_id = table.integer(r, c[0]);
    row.tau_pooled = table.number(r, c[1]);
    row.theta2 = table.number(r, c[2]);
    if (!table.empty_field(r, c[3])) row.lower = table.number(r, c[3]);
    if (!table.empty_field(r, c[4])) row.upper = table.number(r, c[4]);
    if (!table.empty_field(r, c[5])) row.df = table.integer(r, c[5]);
    row.flag = table.rows[r][c[6]];
    out.push_back(std::move(row));
  }
  return out;
}

void write_predictions(std::ostream& out, std::span<const PredictionRow> rows) {
  out << "profile_id,tau_pooled,theta2,lower,upper,df,flag_nonoverlap\n";
  for (const auto& row : rows) {
    out << row.profile_id << ',' << format_number(row.tau_pooled) << ','
        << format_number(row.theta2) << ',' << (row.lower ? format_number(*row.lower) : "") << ','
        << (row.upper ? format_number(*row.upper) : "") << ','
        << (row.df ? std::to_string(*row.df) : "") << ',' << row.flag << '\n';
  }
}

std::vector<MetricsRow> metrics_rows(std::span<const MetricsTable> tables) {
  std::vector<MetricsRow> rows;
  for (const auto& table : tables) {
    for (const auto& m : table.rows) {
      rows.push_back({m.profile_id, table.method, m.coverage, m.mean_length, m.bias,
                      m.n_effective_replications});
    }
  }
  return rows;
}

std::vector<MetricsRow> read_metrics(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  static constexpr std::string_view kCols[] = {"profile_id", "method", "coverage",
                                               "mean_length", "bias", "n_effective_replications"};
  require_columns(table, kCols);
  std::vector<std::size_t> c;
  for (auto name : kCols) c.push_back(table.column(name));
  std::vector<MetricsRow> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out.push_back({table.integer(r, c[0]), table.rows[r][c[1]], table.number(r, c[2]),
                   table.number(r, c[3]), table.number(r, c[4]), table.integer(r, c[5])});
  }
  return out;
}

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows) {
  out << "profile_id,method,coverage,mean_length,bias,n_effective_replications\n";
  for (const auto& row : rows) {
    out << row.profile_id << ',' << row.method << ',' << format_number(row.coverage) << ','
        << format_number(row.mean_length) << ',' << format_number(row.bias) << ','
        << row.n_effective_replications << '\n';
  }
}

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(view.substr(0, eq)));
    const std::string value(trim(view.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (cfg.values_.count(key) != 0) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": key '" + key +
                        "' given twice (first on line " + std::to_string(cfg.lines_[key]) + ")");
    }
    cfg.values_[key] = value;
    cfg.lines_[key] = line_no;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  return parse(in, path);
}

void KeyValueConfig::fail(std::string_view key, const std::string& why) const {
  const auto it = lines_.find(key);
  const std::string where = it == lines_.end() ? source_ : source_ + ":" + std::to_string(it->second);
  throw ConfigError(where + ": key '" + std::string(key) + "': " + why);
}

bool KeyValueConfig::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(std::string_view key, std::string_view fallback) const {
  return get(key).value_or(std::string(fallback));
}

long long KeyValueConfig::get_int(std::string_view key, long long fallback) const {
  const auto raw = get(key);
  if (!raw) return fallback;
  const auto value = to_integer<long long>(*raw);
  if (!value) fail(key, "'" + *raw + "' is not an integer");
  return *value;
}

std::uint64_t KeyValueConfig::get_uint64(std::string_view key, std::uint64_t fallback) const {
  const auto raw = get(key);
  if (!raw) return fallback;
  const auto value = to_integer<std::uint64_t>(*raw);
  if (!value) fail(key, "'" + *raw + "' is not an unsigned 64-bit integer");
  return *value;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  const auto raw = get(key);
  if (!raw) return fallback;
  const auto value = to_double(*raw);
  if (!value) fail(key, "'" + *raw + "' is not a number");
  return *value;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  const auto raw = get(key);
  if (!raw) return fallback;
  if (*raw == "true" || *raw == "1" || *raw == "yes") return true;
  if (*raw == "false" || *raw == "0" || *raw == "no") return false;
  fail(key, "'" + *raw + "' is not a boolean");
}

std::vector<std::string> KeyValueConfig::get_list(std::string_view key,
                                                  std::string_view fallback) const {
  const std::string raw = get_or(key, fallback);
  std::vector<std::string> out;
  for (auto& item : split(raw, ',')) {
    if (!item.empty()) out.push_back(std::move(item));
  }
  if (out.empty()) fail(key, "empty list");
  return out;
}

void KeyValueConfig::require_known(std::span<const std::string_view> known) const {
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) fail(key, "unknown key");
  }
}

std::string scenario_label(const SimConfig& config) {
  std::string label = config.cate_setting == CateSetting::kLinear ? "linear" : "nonlinear";
  label += " L" + std::to_string(config.heterogeneity_level);
  label += " K=" + std::to_string(config.k_studies);
  if (config.effect_distribution == EffectDistribution::kUniform) label += " uniform";
  if (config.covariate_mode == CovariateMode::kSame) label += " same-cov";
  if (config.covariate_mode == CovariateMode::kAgeOnlyVariable) label += " age-only";
  return label;
}

SimulationPlan simulation_plan(const KeyValueConfig& cfg) {
  static constexpr std::string_view kKeys[] = {
      "k_studies",        "n_per_study",   "cate_setting",      "heterogeneity_level",
      "covariate_mode",   "effect_distribution", "n_replications", "master_seed",
      "n_target_profiles", "target_effects", "alpha",            "methods",
      "forest_trees",     "forest_bag_size", "forest_min_leaf",  "bart_trees",
      "bart_burn",        "bart_draws",    "bart_interval"};
  cfg.require_known(kKeys);

  auto int_in = [&](std::string_view key, long long fallback, long long lo, long long hi) {
    const long long v = cfg.get_int(key, fallback);
    if (v < lo || v > hi) {
      throw ConfigError("key '" + std::string(key) + "': " + std::to_string(v) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return static_cast<int>(v);
  };
  auto choice = [&](std::string_view key, std::string_view fallback,
                    std::initializer_list<std::string_view> allowed) {
    const std::string v = cfg.get_or(key, fallback);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError("key '" + std::string(key) + "': '" + v + "' is not one of " + list);
    }
    return v;
  };

  SimulationPlan plan;
  SimConfig& c = plan.config;
  c.k_studies = int_in("k_studies", 10, 3, 100000);
  c.n_per_study = int_in("n_per_study", 500, 4, 100000000);
  c.cate_setting = choice("cate_setting", "linear", {"linear", "nonlinear"}) == "linear"
                       ? CateSetting::kLinear
                       : CateSetting::kNonlinear;
  c.heterogeneity_level = int_in("heterogeneity_level", 1, 0, 3);
  const auto mode = choice("covariate_mode", "variable", {"variable", "same", "age_only_variable"});
  c.covariate_mode = mode == "variable" ? CovariateMode::kVariable
                     : mode == "same"   ? CovariateMode::kSame
                                        : CovariateMode::kAgeOnlyVariable;
  c.effect_distribution = choice("effect_distribution", "normal", {"normal", "uniform"}) == "normal"
                              ? EffectDistribution::kNormal
                              : EffectDistribution::kUniform;
  c.n_replications = int_in("n_replications", 500, 1, 100000000);
  c.master_seed = cfg.get_uint64("master_seed", 0);
  c.n_target_profiles = int_in("n_target_profiles", 100, 1, 1000000);
  c.target_effects = choice("target_effects", "frozen", {"frozen", "redrawn"}) == "frozen"
                         ? TargetEffects::kFrozen
                         : TargetEffects::kRedrawn;
  c.alpha = cfg.get_double("alpha", 0.05);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("key 'alpha': must lie in (0, 1)");

  for (const auto& name : cfg.get_list("methods", "linear")) {
    SimMethod method;
    try {
      method = make_sim_method(name);
    } catch (const ConfigError& e) {
      throw ConfigError("key 'methods': " + std::string(e.what()));
    }
    auto& f = method.stage1.forest;
    f.n_trees = int_in("forest_trees", f.n_trees, 4, 1000000);
    f.bag_size = int_in("forest_bag_size", f.bag_size, 2, 1000000);
    const int min_leaf = int_in("forest_min_leaf", f.min_leaf_treated, 2, 1000000);
    f.min_leaf_treated = min_leaf;
    f.min_leaf_control = min_leaf;
    auto& b = method.stage1.bart;
    b.n_trees = int_in("bart_trees", b.n_trees, 1, 100000);
    b.n_burn = int_in("bart_burn", b.n_burn, 0, 100000000);
    b.n_draws = int_in("bart_draws", b.n_draws, 2, 100000000);
    method.stage1.bart_interval =
        choice("bart_interval", "normal", {"normal", "quantile"}) == "normal" ? BartInterval::kNormal
                                                                            : BartInterval::kQuantile;
    plan.methods.push_back(std::move(method));
  }
  c.validate();
  plan.scenario = scenario_label(c);
  return plan;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state) {
  for (unsigned char ch : bytes) {
    state ^= ch;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex_digest(std::uint64_t value) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw InputError("failed writing '" + path + "'");
}

}  // namespace metacate
