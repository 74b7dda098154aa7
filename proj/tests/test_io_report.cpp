#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "metacate/io.hpp"
#include "metacate/report.hpp"

using namespace metacate;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

template <class Read, class Write>
void check_round_trip(const std::string& text, Read read, Write write) {
  std::istringstream in(text);
  const auto parsed = read(in, "mem.csv");
  std::ostringstream out;
  write(out, parsed);
  CHECK(out.str() == text);
}

std::string input_error(const std::string& text,
                        std::vector<TrialDataset> (*read)(std::istream&, const std::string&)) {
  std::istringstream in(text);
  try {
    read(in, "bad.csv");
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

std::string config_error(const std::string& text) {
  std::istringstream in(text);
  try {
    simulation_plan(KeyValueConfig::parse(in, "sim.cfg"));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("numbers print shortest and round-trip") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(2.0) == "2");
  CHECK(format_number(1e-300) == "1e-300");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = normal(rng) * std::pow(10.0, i % 7 - 3);
    CHECK(std::stod(format_number(v)) == v);
  }
}

TEST_CASE("csv round trips are byte identical") {
  check_round_trip("study_id,y,a,age,sex\n1,0.5,1,-0.25,1\n1,-3,0,1.5,0\n2,7.125,0,0,1\n2,1,1,0.1,0\n",
                   read_trials,
                   [](std::ostream& o, const std::vector<TrialDataset>& t) { write_trials(o, t); });
  check_round_trip("profile_id,age,sex\n1,0.5,1\n2,-1.25,0\n",
                   read_profiles, [](std::ostream& o, const ProfileSet& p) { write_profiles(o, p); });
  check_round_trip("profile_id,study_id,tau_hat,se2\n1,1,2.5,0.25\n1,2,-0.125,1e-06\n",
                   read_aggregates,
                   [](std::ostream& o, const std::vector<StudyCateEstimate>& a) { write_aggregates(o, a); });
  check_round_trip(
      "profile_id,tau_pooled,theta2,lower,upper,df,flag_nonoverlap\n1,1.5,0.25,-0.5,3.5,2,crosses_zero\n2,1,0,,,,no_pi\n",
      read_predictions,
      [](std::ostream& o, const std::vector<PredictionRow>& r) { write_predictions(o, r); });
  check_round_trip(
      "profile_id,method,coverage,mean_length,bias,n_effective_replications\n1,linear,0.95,4.25,-0.01,100\n",
      read_metrics, [](std::ostream& o, const std::vector<MetricsRow>& r) { write_metrics(o, r); });
}

TEST_CASE("trial files group studies and validate columns") {
  std::istringstream in("study_id,y,a,age\n2,1,0,0.5\n1,2,1,0.1\n2,3,1,0.2\n");
  const auto trials = read_trials(in, "t.csv");
  REQUIRE(trials.size() == 2);
  CHECK(trials[0].study_id == 2);
  CHECK(trials[0].y == std::vector<double>{1, 3});
  CHECK(trials[1].a == std::vector<int>{1});
  CHECK(trials[0].covariate_names == std::vector<std::string>{"age"});

  CHECK(input_error("study_id,y,age\n1,2,3\n", read_trials).find("missing required column 'a'") !=
        std::string::npos);
  CHECK(input_error("study_id,y,a,age\n1,2,3,4\n", read_trials).find("bad.csv:2") != std::string::npos);
  CHECK(input_error("study_id,y,a,age\n1,x,0,4\n", read_trials).find("bad.csv:2") != std::string::npos);
  CHECK(input_error("study_id,y,a,age\n1,1,0\n", read_trials) != "");
}

TEST_CASE("profile alignment") {
  std::istringstream in("profile_id,sex,age\n1,1,0.5\n");
  const auto set = read_profiles(in, "p.csv");
  const std::vector<std::string> names{"age", "sex"};
  const auto aligned = align_profiles(set, names);
  CHECK(aligned.covariate_names == names);
  CHECK(aligned.profiles[0].x(0) == 0.5);
  CHECK(aligned.profiles[0].x(1) == 1.0);
  const std::vector<std::string> more{"age", "weight"};
  try {
    align_profiles(set, more);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("weight") != std::string::npos);
  }
}

TEST_CASE("sign flags") {
  CHECK(sign_flag(0.1, 2.0) == "positive");
  CHECK(sign_flag(-2.0, -0.1) == "negative");
  CHECK(sign_flag(-1.0, 1.0) == "crosses_zero");
  CHECK(sign_flag(0.0, 1.0) == "crosses_zero");
  CHECK(sign_flag(std::nullopt, std::nullopt) == "no_pi");
}

TEST_CASE("config errors name the key") {
  CHECK(config_error("k_studies = 2\n").find("k_studies") != std::string::npos);
  CHECK(config_error("cate_setting = quadratic\n").find("cate_setting") != std::string::npos);
  CHECK(config_error("n_per_study = many\n").find("n_per_study") != std::string::npos);
  CHECK(config_error("methods = linear, svm\n").find("methods") != std::string::npos);
  CHECK(config_error("colour = red\n").find("colour") != std::string::npos);
  CHECK(config_error("alpha = 0.05\nalpha = 0.1\n").find("alpha") != std::string::npos);
  CHECK(config_error("just words\n") != "");
}

TEST_CASE("config values reach the plan") {
  std::istringstream in(
      "# desk-scale run\nk_studies = 4\nheterogeneity_level = 3  # widest\nmethods = linear, forest_honest\n"
      "forest_trees = 100\ntarget_effects = redrawn\nmaster_seed = 18446744073709551615\n");
  const auto plan = simulation_plan(KeyValueConfig::parse(in, "sim.cfg"));
  CHECK(plan.config.k_studies == 4);
  CHECK(plan.config.heterogeneity_level == 3);
  CHECK(plan.config.target_effects == TargetEffects::kRedrawn);
  CHECK(plan.config.master_seed == std::numeric_limits<std::uint64_t>::max());
  REQUIRE(plan.methods.size() == 2);
  CHECK(plan.methods[0].name == "linear");
  CHECK(plan.methods[1].stage1.forest.n_trees == 100);
  CHECK(plan.methods[1].stage1.forest.honest);
  CHECK(!plan.scenario.empty());
}

TEST_CASE("digests") {
  CHECK(hex_digest(fnv1a("")) == "cbf29ce484222325");
  CHECK(hex_digest(fnv1a("a")) == "af63dc4c8601ec8c");
  CHECK(fnv1a("ab") == fnv1a("b", fnv1a("a")));
}

TEST_CASE("box statistics") {
  const auto b = box_stats({5, 1, 3, 2, 4});
  CHECK(b.min == 1.0);
  CHECK(b.q1 == 2.0);
  CHECK(b.median == 3.0);
  CHECK(b.q3 == 4.0);
  CHECK(b.max == 5.0);
  CHECK(box_stats({1, 2, 3, 4}).median == 2.5);
  CHECK(box_stats({1, 2, 3, 4}).q1 == 1.75);
  CHECK_THROWS_AS(box_stats({}), DomainError);
}

TEST_CASE("prediction figure has one interval per profile") {
  std::vector<PredictionRow> rows;
  for (int i = 1; i <= 17; ++i) {
    PooledCate pooled;
    pooled.profile_id = i;
    pooled.tau_pooled = 0.3 * i - 2.0;
    pooled.theta2 = 0.1;
    PredictionInterval pi;
    pi.lower = pooled.tau_pooled - 1.0;
    pi.upper = pooled.tau_pooled + 1.0;
    pi.df = 3;
    rows.push_back(make_prediction_row(pooled, pi));
  }
  const std::string svg = prediction_interval_svg(rows, "00ff");
  CHECK(count(svg, "class=\"interval\"") == 17);
  CHECK(svg.find("<!-- digest 00ff -->") != std::string::npos);
  CHECK(svg.find("viewBox=\"0 0 800.00 450.00\"") != std::string::npos);
  CHECK(svg == prediction_interval_svg(rows, "00ff"));

  rows[3].lower.reset();
  rows[3].upper.reset();
  CHECK(count(prediction_interval_svg(rows, "00ff"), "class=\"interval\"") == 16);
}

TEST_CASE("comparison figure draws K study intervals and one prediction interval") {
  std::vector<StudyCateEstimate> agg;
  for (int s = 1; s <= 4; ++s) {
    agg.push_back({s, 1, 0.5 * s, 0.04});
    agg.push_back({s, 2, -0.5 * s, 0.09});
  }
  PooledCate p1;
  p1.profile_id = 1;
  p1.tau_pooled = 1.25;
  PredictionInterval pi;
  pi.lower = -1.0;
  pi.upper = 3.5;
  pi.df = 2;
  PooledCate p2 = p1;
  p2.profile_id = 2;
  p2.tau_pooled = -1.25;
  const std::vector<PredictionRow> preds{make_prediction_row(p1, pi), make_prediction_row(p2, pi)};

  const std::vector<int> one{1};
  CHECK(count(compare_intervals_svg(agg, preds, one, "d"), "class=\"interval\"") == 5);
  const std::vector<int> both{2, 1};
  CHECK(count(compare_intervals_svg(agg, preds, both, "d"), "class=\"interval\"") == 10);
  const std::vector<int> missing{7};
  CHECK_THROWS_AS(compare_intervals_svg(agg, preds, missing, "d"), InputError);
}

TEST_CASE("coverage figure has one box per method") {
  std::vector<MetricsRow> rows;
  for (const char* m : {"linear", "forest_honest", "bart"}) {
    for (int i = 1; i <= 10; ++i) rows.push_back({i, m, 0.9 + 0.01 * i, 2.0, 0.0, 50});
  }
  const std::string svg = coverage_boxplot_svg(rows, "linear / level 1", "ab");
  CHECK(count(svg, "<g class=\"box\"") == 3);
  CHECK(svg.find("linear / level 1") != std::string::npos);
}
