// metacate: two-stage meta-analysis of conditional average treatment effects.
//
//   metacate estimate  --trials t1.csv [t2.csv ...] --profiles p.csv --stage1 forest
//   metacate predict   --aggregates aggregates.csv
//   metacate compare-intervals --aggregates aggregates.csv --predictions predictions.csv --profiles 1,2
//   metacate simulate  --config experiment.cfg
//
// Exit codes: 0 success, 1 estimation failure, 2 input error, 3 config error.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metacate/core.hpp"
#include "metacate/io.hpp"
#include "metacate/meta.hpp"
#include "metacate/parallel.hpp"
#include "metacate/report.hpp"
#include "metacate/simgen.hpp"
#include "metacate/stage1.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace metacate;

namespace {

constexpr const char* kVersion = "1.0.0";

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out_dir = ".";
};

// Collects the manifest while a command runs. The digest covers the
// subcommand, the canonical option list and the bytes of every input, so
// it does not depend on file paths or timing.
class Manifest {
 public:
  explicit Manifest(std::string subcommand) : subcommand_(std::move(subcommand)) {
    doc_["tool"] = "metacate";
    doc_["version"] = kVersion;
    doc_["subcommand"] = subcommand_;
    state_ = fnv1a(subcommand_ + "\n");
  }

  void option(const std::string& key, const std::string& value) {
    doc_["options"][key] = value;
    state_ = fnv1a(key + "=" + value + "\n", state_);
  }

  std::string input(const std::string& path) {
    std::string bytes = read_file(path);
    const std::string digest = hex_digest(fnv1a(bytes));
    doc_["inputs"].push_back({{"path", path}, {"digest", digest}});
    state_ = fnv1a(bytes, state_);
    return bytes;
  }

  void seed(std::uint64_t s) {
    doc_["master_seed"] = s;
    state_ = fnv1a("seed=" + std::to_string(s) + "\n", state_);
  }

  std::string digest() const { return hex_digest(state_); }

  void output(const std::string& path) { doc_["outputs"].push_back(path); }

  template <typename Fn>
  auto timed(const std::string& phase, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
      doc_["timings_ms"][phase] = ms.count();
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto result = fn();
      finish();
      return result;
    }
  }

  void write(const fs::path& dir) {
    doc_["digest"] = digest();
    write_file((dir / "manifest.json").string(), doc_.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  json doc_;
  std::uint64_t state_;
};

fs::path prepare_out_dir(const GlobalOptions& g) {
  fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + g.out_dir + "': " + ec.message());
  return dir;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct EstimateArgs {
  std::vector<std::string> trials;
  std::string profiles;
  std::string stage1 = "linear";
  std::string moderators;
  bool honest = true;
  int trees = 1000;
  int bag_size = 20;
  int min_leaf = 5;
  int bart_trees = 50;
  int burn = 500;
  int draws = 1000;
  std::string interval = "normal";
  double level = 0.95;
};

int run_estimate(const GlobalOptions& g, const EstimateArgs& args) {
  Manifest manifest("estimate");
  const std::uint64_t seed = g.seed.value_or(0);
  manifest.seed(seed);
  manifest.option("stage1", args.stage1);
  manifest.option("moderators", args.moderators);

  Stage1Options options;
  options.method = parse_stage1_method(args.stage1);
  options.forest.honest = args.honest;
  options.forest.n_trees = args.trees;
  options.forest.bag_size = args.bag_size;
  options.forest.min_leaf_treated = args.min_leaf;
  options.forest.min_leaf_control = args.min_leaf;
  options.bart.n_trees = args.bart_trees;
  options.bart.n_burn = args.burn;
  options.bart.n_draws = args.draws;
  if (args.interval == "normal") {
    options.bart_interval = BartInterval::kNormal;
  } else if (args.interval == "quantile") {
    options.bart_interval = BartInterval::kQuantile;
  } else {
    throw ConfigError("--interval must be normal or quantile, got '" + args.interval + "'");
  }
  if (!(args.level > 0.0 && args.level < 1.0)) throw ConfigError("--level must lie in (0, 1)");
  options.bart_level = args.level;
  if (options.method == Stage1Method::kForest) {
    manifest.option("honest", args.honest ? "true" : "false");
    manifest.option("trees", std::to_string(args.trees));
    manifest.option("bag_size", std::to_string(args.bag_size));
    manifest.option("min_leaf", std::to_string(args.min_leaf));
  } else if (options.method == Stage1Method::kBart) {
    manifest.option("bart_trees", std::to_string(args.bart_trees));
    manifest.option("burn", std::to_string(args.burn));
    manifest.option("draws", std::to_string(args.draws));
    manifest.option("interval", args.interval);
    manifest.option("level", format_number(args.level));
  }

  std::vector<TrialDataset> trials;
  manifest.timed("read", [&] {
    for (const auto& path : args.trials) {
      std::istringstream in(manifest.input(path));
      auto batch = read_trials(in, path);
      for (auto& t : batch) {
        if (!trials.empty() && t.covariate_names != trials.front().covariate_names) {
          throw InputError(path + ": covariate columns differ from '" + args.trials.front() + "'");
        }
        for (const auto& other : trials) {
          if (other.study_id == t.study_id) {
            throw InputError(path + ": study_id " + std::to_string(t.study_id) + " appears in more than one file");
          }
        }
        trials.push_back(std::move(t));
      }
    }
  });
  std::istringstream pin(manifest.input(args.profiles));
  const ProfileSet profiles = align_profiles(read_profiles(pin, args.profiles), trials.front().covariate_names);
  if (profiles.profiles.empty()) throw InputError(args.profiles + ": no profiles");

  for (const auto& t : trials) {
    const ValidationReport report = validate_trial(t);
    if (!report.ok()) {
      std::string msg = "study " + std::to_string(t.study_id) + " failed validation:";
      for (const auto& v : report.violations) msg += "\n  " + v.message;
      throw InputError(msg);
    }
  }
  for (const auto& flag : validate_target_coverage(profiles.profiles, trials)) {
    if (!flag.flagged()) continue;
    std::string names;
    for (const auto& n : flag.outside) names += (names.empty() ? "" : ", ") + n;
    std::cerr << "warning: profile " << flag.profile_id << " lies outside the trial range of " << names << "\n";
  }

  if (!args.moderators.empty()) {
    std::vector<std::size_t> idx;
    const auto& names = trials.front().covariate_names;
    for (const auto& name : split_list(args.moderators)) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw ConfigError("--moderators: unknown covariate '" + name + "'");
      idx.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    options.moderators = idx;
  }

  std::vector<std::vector<StudyCateEstimate>> per_study(trials.size());
  std::vector<std::string> errors(trials.size());
  manifest.timed("stage1", [&] {
    parallel_for(trials.size(), g.threads, [&](std::size_t s) {
      Stage1Options local = options;
      const auto study = static_cast<std::uint64_t>(trials[s].study_id);
      local.forest.seed = derive_seed(seed, StreamTag::kStage1, {study});
      local.bart.seed = local.forest.seed;
      local.threads = 1;
      try {
        per_study[s] = estimate_study(trials[s], profiles.profiles, local);
      } catch (const EstimationError& e) {
        errors[s] = "study " + std::to_string(trials[s].study_id) + ": " + e.what();
      }
    });
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw EstimationError(e);
  }

  std::vector<StudyCateEstimate> rows;
  for (std::size_t j = 0; j < profiles.profiles.size(); ++j) {
    for (const auto& study : per_study) rows.push_back(study[j]);
  }
  const fs::path dir = prepare_out_dir(g);
  std::ostringstream out;
  write_aggregates(out, rows);
  write_file((dir / "aggregates.csv").string(), out.str());
  manifest.output("aggregates.csv");
  manifest.write(dir);
  std::cerr << "wrote " << rows.size() << " aggregate rows (" << trials.size() << " studies x "
            << profiles.profiles.size() << " profiles)\n";
  return 0;
}

struct PredictArgs {
  std::string aggregates;
  double alpha = kDefaultAlpha;
  std::string estimator = "reml";
  bool svg = true;
};

int run_predict(const GlobalOptions& g, const PredictArgs& args) {
  Manifest manifest("predict");
  manifest.seed(g.seed.value_or(0));
  manifest.option("alpha", format_number(args.alpha));
  manifest.option("estimator", args.estimator);
  if (!(args.alpha > 0.0 && args.alpha < 1.0)) throw ConfigError("--alpha must lie in (0, 1)");
  if (args.estimator != "reml" && args.estimator != "dl") {
    throw ConfigError("--estimator must be reml or dl, got '" + args.estimator + "'");
  }
  std::istringstream in(manifest.input(args.aggregates));
  const auto estimates = read_aggregates(in, args.aggregates);

  std::vector<MetaInput> inputs;
  std::map<int, std::size_t> slot;
  for (const auto& e : estimates) {
    auto [it, inserted] = slot.try_emplace(e.profile_id, inputs.size());
    if (inserted) inputs.push_back({e.profile_id, {}});
    inputs[it->second].estimates.push_back(e);
  }
  if (inputs.empty()) throw InputError(args.aggregates + ": no aggregate rows");

  std::vector<PredictionRow> rows(inputs.size());
  std::vector<std::string> errors(inputs.size());
  bool warned = false;
  for (const auto& input : inputs) {
    if (input.k() < 2) {
      throw InputError("profile " + std::to_string(input.profile_id) + " has " +
                       std::to_string(input.k()) + " study estimate(s); pooling needs at least 2");
    }
    if (input.k() == 2 && !warned) {
      std::cerr << "warning: profiles with only 2 studies get no prediction interval\n";
      warned = true;
    }
  }
  manifest.timed("pool", [&] {
    parallel_for(inputs.size(), g.threads, [&](std::size_t j) {
      try {
        const auto& input = inputs[j];
        const double theta2 = args.estimator == "reml" ? reml_theta2(input) : dl_theta2(input);
        const PooledCate pooled = pool_cate(input, theta2);
        std::optional<PredictionInterval> pi;
        const int k = static_cast<int>(input.k());
        if (k >= 3) pi = prediction_interval(pooled, args.alpha, k);
        rows[j] = make_prediction_row(pooled, pi);
      } catch (const Error& e) {
        errors[j] = "profile " + std::to_string(inputs[j].profile_id) + ": " + e.what();
      }
    });
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw EstimationError(e);
  }

  const fs::path dir = prepare_out_dir(g);
  std::ostringstream out;
  write_predictions(out, rows);
  write_file((dir / "predictions.csv").string(), out.str());
  manifest.output("predictions.csv");
  if (args.svg) {
    write_file((dir / "predictions.svg").string(), prediction_interval_svg(rows, manifest.digest()));
    manifest.output("predictions.svg");
  }
  manifest.write(dir);
  return 0;
}

struct CompareArgs {
  std::string aggregates;
  std::string predictions;
  std::string profiles;
};

int run_compare(const GlobalOptions& g, const CompareArgs& args) {
  Manifest manifest("compare-intervals");
  manifest.seed(g.seed.value_or(0));
  manifest.option("profiles", args.profiles);
  std::istringstream ain(manifest.input(args.aggregates));
  const auto aggregates = read_aggregates(ain, args.aggregates);
  std::istringstream pin(manifest.input(args.predictions));
  const auto predictions = read_predictions(pin, args.predictions);
  std::vector<int> ids;
  for (const auto& item : split_list(args.profiles)) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("--profiles: '" + item + "' is not an integer profile id");
    }
  }
  const std::string svg = compare_intervals_svg(aggregates, predictions, ids, manifest.digest());
  const fs::path dir = prepare_out_dir(g);
  write_file((dir / "compare_intervals.svg").string(), svg);
  manifest.output("compare_intervals.svg");
  manifest.write(dir);
  return 0;
}

struct SimulateArgs {
  std::string config;
};

int run_simulate(const GlobalOptions& g, const SimulateArgs& args) {
  Manifest manifest("simulate");
  std::istringstream cin_(manifest.input(args.config));
  const KeyValueConfig cfg = KeyValueConfig::parse(cin_, args.config);
  SimulationPlan plan = simulation_plan(cfg);
  if (g.seed) plan.config.master_seed = *g.seed;
  manifest.seed(plan.config.master_seed);

  std::vector<MetricsTable> tables;
  for (const auto& method : plan.methods) {
    MetricsTable table = manifest.timed("simulate_" + method.name, [&] {
      return run_experiment(plan.config, method, g.threads);
    });
    for (const auto& f : table.failures) std::cerr << "warning: " << method.name << ": " << f << "\n";
    tables.push_back(std::move(table));
  }
  const auto rows = metrics_rows(tables);

  const fs::path dir = prepare_out_dir(g);
  std::ostringstream out;
  write_metrics(out, rows);
  write_file((dir / "metrics.csv").string(), out.str());
  manifest.output("metrics.csv");
  write_file((dir / "coverage.svg").string(), coverage_boxplot_svg(rows, plan.scenario, manifest.digest()));
  manifest.output("coverage.svg");
  manifest.write(dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage meta-analysis of conditional average treatment effects"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);

  GlobalOptions g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Master seed for every random stream");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Directory for outputs");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Stage 1: per-study CATEs at every profile");
  estimate->add_option("--trials", est.trials, "Trial CSV files (study_id,y,a,<covariates>)")->required();
  estimate->add_option("--profiles", est.profiles, "Profile CSV (profile_id,<covariates>)")->required();
  estimate->add_option("--stage1", est.stage1, "linear, forest or bart");
  estimate->add_option("--moderators", est.moderators, "Comma-separated moderators (linear only)");
  estimate->add_option("--honest", est.honest, "Honest forest splitting");
  estimate->add_option("--trees", est.trees, "Forest trees");
  estimate->add_option("--bag-size", est.bag_size, "Forest trees per half-sample");
  estimate->add_option("--min-leaf", est.min_leaf, "Forest minimum rows per arm in a leaf");
  estimate->add_option("--bart-trees", est.bart_trees, "BART trees");
  estimate->add_option("--burn", est.burn, "BART burn-in sweeps");
  estimate->add_option("--draws", est.draws, "BART retained draws");
  estimate->add_option("--interval", est.interval, "BART summary: normal or quantile");
  estimate->add_option("--level", est.level, "BART quantile interval level");

  PredictArgs pred;
  auto* predict = app.add_subcommand("predict", "Stage 2: pooled CATEs and prediction intervals");
  predict->add_option("--aggregates", pred.aggregates, "Aggregate CSV")->required();
  predict->add_option("--alpha", pred.alpha, "1 - interval level");
  predict->add_option("--estimator", pred.estimator, "reml or dl");
  predict->add_flag("!--no-svg", pred.svg, "Skip the SVG figure");

  CompareArgs cmp;
  auto* compare = app.add_subcommand("compare-intervals", "Study CIs beside the prediction interval");
  compare->add_option("--aggregates", cmp.aggregates, "Aggregate CSV")->required();
  compare->add_option("--predictions", cmp.predictions, "Prediction CSV")->required();
  compare->add_option("--profiles", cmp.profiles, "Comma-separated profile ids")->required();

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation experiment");
  simulate->add_option("--config", sim.config, "key = value experiment file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*estimate) return run_estimate(g, est);
    if (*predict) return run_predict(g, pred);
    if (*compare) return run_compare(g, cmp);
    if (*simulate) return run_simulate(g, sim);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
