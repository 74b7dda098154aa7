#include "metacate/bart.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "metacate/linear.hpp"
#include "metacate/rng.hpp"
#include "metacate/special.hpp"

namespace metacate {
namespace {

constexpr double kProbGrow = 0.5;
constexpr double kProbPrune = 0.4;

struct Node {
  int var = -1;  // -1 marks a leaf
  double cut = 0.0;  // rows with x[var] < cut go left
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  double mu = 0.0;
  bool alive = true;

  bool is_leaf() const { return var < 0; }
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<int> leaf_of;  // leaf node of each training row

  int alive_count() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                          [](const Node& n) { return n.alive; }));
  }
  bool is_nog(int i) const {
    const Node& n = nodes[static_cast<std::size_t>(i)];
    return n.alive && !n.is_leaf() && nodes[static_cast<std::size_t>(n.left)].is_leaf() &&
           nodes[static_cast<std::size_t>(n.right)].is_leaf();
  }
  int add_node(Node node) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].alive) {
        nodes[i] = node;
        return static_cast<int>(i);
      }
    }
    nodes.push_back(node);
    return static_cast<int>(nodes.size()) - 1;
  }
};

class BackfittingSampler {
 public:
  BackfittingSampler(const Eigen::MatrixXd& features, std::vector<double> y,
                     const BartParams& params, double sigma2_guess)
      : x_(features),
        y_(std::move(y)),
        params_(params),
        rng_(make_stream(params.seed, StreamTag::kBartChain)),
        n_(y_.size()) {
    const double sigma_mu = 0.5 / (params.k * std::sqrt(static_cast<double>(params.n_trees)));
    tau2_ = sigma_mu * sigma_mu;
    lambda_ = sigma2_guess * chi_square_quantile(params.nu, 1.0 - params.q) / params.nu;
    sigma2_ = sigma2_guess;

    const double init_mu =
        std::accumulate(y_.begin(), y_.end(), 0.0) / static_cast<double>(n_) / params.n_trees;
    trees_.resize(static_cast<std::size_t>(params.n_trees));
    for (auto& tree : trees_) {
      Node root;
      root.mu = init_mu;
      tree.nodes.push_back(root);
      tree.leaf_of.assign(n_, 0);
    }
    allfit_.assign(n_, init_mu * params.n_trees);
    residual_.assign(n_, 0.0);
  }

  void sweep() {
    for (auto& tree : trees_) {
      for (std::size_t i = 0; i < n_; ++i) {
        residual_[i] = y_[i] - allfit_[i] + tree.nodes[static_cast<std::size_t>(tree.leaf_of[i])].mu;
      }
      propose(tree);
      draw_leaf_values(tree);
      for (std::size_t i = 0; i < n_; ++i) {
        allfit_[i] = y_[i] - residual_[i] + tree.nodes[static_cast<std::size_t>(tree.leaf_of[i])].mu;
      }
    }
    draw_sigma2();
  }

  double predict(const Eigen::Ref<const Eigen::VectorXd>& point) const {
    double f = 0.0;
    for (const auto& tree : trees_) {
      std::size_t node = 0;
      while (!tree.nodes[node].is_leaf()) {
        const Node& n = tree.nodes[node];
        node = static_cast<std::size_t>(point(n.var) < n.cut ? n.left : n.right);
      }
      f += tree.nodes[node].mu;
    }
    return f;
  }

 private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t pick(std::size_t count) {
    return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng_);
  }

  double value(int row, int var) const { return x_(row, var); }

  // Integrated likelihood of a leaf with `count` residuals summing to `sum`,
  // up to terms that cancel in every Metropolis-Hastings ratio.
  double leaf_log_likelihood(int count, double sum) const {
    const double denom = sigma2_ + count * tau2_;
    return -0.5 * std::log(denom / sigma2_) + tau2_ * sum * sum / (2.0 * sigma2_ * denom);
  }

  double split_probability(int depth, bool splittable) const {
    return splittable ? params_.alpha * std::pow(1.0 + depth, -params_.beta) : 0.0;
  }

  bool var_splittable(const std::vector<int>& rows, int var) const {
    const double first = value(rows.front(), var);
    for (int r : rows) {
      if (value(r, var) != first) return true;
    }
    return false;
  }

  std::vector<int> splittable_vars(const std::vector<int>& rows) const {
    std::vector<int> vars;
    if (rows.size() < 2) return vars;
    for (int v = 0; v < x_.cols(); ++v) {
      if (var_splittable(rows, v)) vars.push_back(v);
    }
    return vars;
  }

  bool splittable(const std::vector<int>& rows) const {
    if (rows.size() < 2) return false;
    for (int v = 0; v < x_.cols(); ++v) {
      if (var_splittable(rows, v)) return true;
    }
    return false;
  }

  // Candidate cut points: every distinct value except the smallest.
  std::vector<double> cut_points(const std::vector<int>& rows, int var) const {
    std::vector<double> values;
    values.reserve(rows.size());
    for (int r : rows) values.push_back(value(r, var));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    values.erase(values.begin());
    return values;
  }

  std::vector<std::vector<int>> rows_by_node(const Tree& tree) const {
    std::vector<std::vector<int>> buckets(tree.nodes.size());
    for (std::size_t i = 0; i < n_; ++i) {
      buckets[static_cast<std::size_t>(tree.leaf_of[i])].push_back(static_cast<int>(i));
    }
    return buckets;
  }

  std::pair<int, double> residual_stats(const std::vector<int>& rows) const {
    double s = 0.0;
    for (int r : rows) s += residual_[static_cast<std::size_t>(r)];
    return {static_cast<int>(rows.size()), s};
  }

  void split_rows(const std::vector<int>& rows, int var, double cut, std::vector<int>& left,
                  std::vector<int>& right) const {
    left.clear();
    right.clear();
    for (int r : rows) (value(r, var) < cut ? left : right).push_back(r);
  }

  std::vector<int> nog_nodes(const Tree& tree) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.is_nog(static_cast<int>(i))) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  void propose(Tree& tree) {
    if (tree.alive_count() == 1) {
      grow(tree, 1.0);
      return;
    }
    const double u = uniform();
    if (u < kProbGrow) {
      grow(tree, kProbGrow);
    } else if (u < kProbGrow + kProbPrune) {
      prune(tree);
    } else {
      change(tree);
    }
  }

  void grow(Tree& tree, double prob_grow) {
    const auto buckets = rows_by_node(tree);
    std::vector<int> good;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.nodes[i].alive && tree.nodes[i].is_leaf() && splittable(buckets[i])) {
        good.push_back(static_cast<int>(i));
      }
    }
    if (good.empty()) return;
    const int leaf = good[pick(good.size())];
    const auto& rows = buckets[static_cast<std::size_t>(leaf)];
    const auto vars = splittable_vars(rows);
    const int var = vars[pick(vars.size())];
    const auto cuts = cut_points(rows, var);
    const double cut = cuts[pick(cuts.size())];

    std::vector<int> left, right;
    split_rows(rows, var, cut, left, right);
    const auto [n_left, s_left] = residual_stats(left);
    const auto [n_right, s_right] = residual_stats(right);
    const int depth = tree.nodes[static_cast<std::size_t>(leaf)].depth;

    const double pg = split_probability(depth, true);
    const double pg_left = split_probability(depth + 1, splittable(left));
    const double pg_right = split_probability(depth + 1, splittable(right));
    const int parent = tree.nodes[static_cast<std::size_t>(leaf)].parent;
    const int nog_after = static_cast<int>(nog_nodes(tree).size()) + 1 -
                          (parent >= 0 && tree.is_nog(parent) ? 1 : 0);

    // The uniform split-rule prior 1 / (vars * cuts) cancels against the
    // proposal probability of the same rule.
    const double log_ratio =
        std::log(pg) + std::log1p(-pg_left) + std::log1p(-pg_right) - std::log1p(-pg) +
        leaf_log_likelihood(n_left, s_left) + leaf_log_likelihood(n_right, s_right) -
        leaf_log_likelihood(n_left + n_right, s_left + s_right) +
        std::log(kProbPrune / nog_after) - std::log(prob_grow / static_cast<double>(good.size()));
    if (std::log(uniform()) >= log_ratio) return;

    Node child;
    child.parent = leaf;
    child.depth = depth + 1;
    const int l = tree.add_node(child);
    const int r = tree.add_node(child);
    Node& node = tree.nodes[static_cast<std::size_t>(leaf)];
    node.var = var;
    node.cut = cut;
    node.left = l;
    node.right = r;
    for (int row : left) tree.leaf_of[static_cast<std::size_t>(row)] = l;
    for (int row : right) tree.leaf_of[static_cast<std::size_t>(row)] = r;
  }

  void prune(Tree& tree) {
    const auto nogs = nog_nodes(tree);
    if (nogs.empty()) return;
    const int eta = nogs[pick(nogs.size())];
    const Node& node = tree.nodes[static_cast<std::size_t>(eta)];
    const auto buckets = rows_by_node(tree);
    const auto& left = buckets[static_cast<std::size_t>(node.left)];
    const auto& right = buckets[static_cast<std::size_t>(node.right)];
    std::vector<int> merged(left);
    merged.insert(merged.end(), right.begin(), right.end());

    int good_after = 1;  // eta itself becomes a splittable leaf
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const int idx = static_cast<int>(i);
      if (idx == node.left || idx == node.right) continue;
      if (tree.nodes[i].alive && tree.nodes[i].is_leaf() && splittable(buckets[i])) ++good_after;
    }
    const auto [n_left, s_left] = residual_stats(left);
    const auto [n_right, s_right] = residual_stats(right);

    const double pg = split_probability(node.depth, true);
    const double pg_left = split_probability(node.depth + 1, splittable(left));
    const double pg_right = split_probability(node.depth + 1, splittable(right));
    const double prob_grow_after = eta == 0 ? 1.0 : kProbGrow;

    const double log_ratio =
        -(std::log(pg) + std::log1p(-pg_left) + std::log1p(-pg_right) - std::log1p(-pg)) +
        leaf_log_likelihood(n_left + n_right, s_left + s_right) -
        leaf_log_likelihood(n_left, s_left) - leaf_log_likelihood(n_right, s_right) +
        std::log(prob_grow_after / static_cast<double>(good_after)) -
        std::log(kProbPrune / static_cast<double>(nogs.size()));
    if (std::log(uniform()) >= log_ratio) return;

    tree.nodes[static_cast<std::size_t>(node.left)].alive = false;
    tree.nodes[static_cast<std::size_t>(node.right)].alive = false;
    for (int row : merged) tree.leaf_of[static_cast<std::size_t>(row)] = eta;
    Node& pruned = tree.nodes[static_cast<std::size_t>(eta)];
    pruned.var = -1;
    pruned.left = pruned.right = -1;
  }

  void change(Tree& tree) {
    const auto nogs = nog_nodes(tree);
    if (nogs.empty()) return;
    const int eta = nogs[pick(nogs.size())];
    const Node& node = tree.nodes[static_cast<std::size_t>(eta)];
    const auto buckets = rows_by_node(tree);
    const auto& old_left = buckets[static_cast<std::size_t>(node.left)];
    const auto& old_right = buckets[static_cast<std::size_t>(node.right)];
    std::vector<int> merged(old_left);
    merged.insert(merged.end(), old_right.begin(), old_right.end());

    const auto vars = splittable_vars(merged);
    const int var = vars[pick(vars.size())];
    const auto cuts = cut_points(merged, var);
    const double cut = cuts[pick(cuts.size())];

    std::vector<int> left, right;
    split_rows(merged, var, cut, left, right);
    const auto [n_ol, s_ol] = residual_stats(old_left);
    const auto [n_or, s_or] = residual_stats(old_right);
    const auto [n_nl, s_nl] = residual_stats(left);
    const auto [n_nr, s_nr] = residual_stats(right);
    const int d = node.depth + 1;

    const double log_ratio =
        leaf_log_likelihood(n_nl, s_nl) + leaf_log_likelihood(n_nr, s_nr) -
        leaf_log_likelihood(n_ol, s_ol) - leaf_log_likelihood(n_or, s_or) +
        std::log1p(-split_probability(d, splittable(left))) +
        std::log1p(-split_probability(d, splittable(right))) -
        std::log1p(-split_probability(d, splittable(old_left))) -
        std::log1p(-split_probability(d, splittable(old_right)));
    if (std::log(uniform()) >= log_ratio) return;

    Node& changed = tree.nodes[static_cast<std::size_t>(eta)];
    changed.var = var;
    changed.cut = cut;
    for (int row : left) tree.leaf_of[static_cast<std::size_t>(row)] = changed.left;
    for (int row : right) tree.leaf_of[static_cast<std::size_t>(row)] = changed.right;
  }

  void draw_leaf_values(Tree& tree) {
    std::vector<int> counts(tree.nodes.size(), 0);
    std::vector<double> sums(tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto leaf = static_cast<std::size_t>(tree.leaf_of[i]);
      ++counts[leaf];
      sums[leaf] += residual_[i];
    }
    for (std::size_t l = 0; l < tree.nodes.size(); ++l) {
      Node& node = tree.nodes[l];
      if (!node.alive || !node.is_leaf()) continue;
      const double post_var = 1.0 / (counts[l] / sigma2_ + 1.0 / tau2_);
      const double post_mean = post_var * sums[l] / sigma2_;
      node.mu = post_mean + std::sqrt(post_var) * normal_(rng_);
    }
  }

  void draw_sigma2() {
    double ssr = 0.0;
    for (std::size_t i = 0; i < n_; ++i) ssr += (y_[i] - allfit_[i]) * (y_[i] - allfit_[i]);
    std::chi_squared_distribution<double> chi2(params_.nu + static_cast<double>(n_));
    sigma2_ = (params_.nu * lambda_ + ssr) / chi2(rng_);
  }

  const Eigen::MatrixXd& x_;
  std::vector<double> y_;
  const BartParams& params_;
  Rng rng_;
  std::size_t n_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double tau2_ = 0.0;
  double lambda_ = 0.0;
  double sigma2_ = 0.0;
  std::vector<Tree> trees_;
  std::vector<double> allfit_;
  std::vector<double> residual_;
};

double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

void BartParams::validate() const {
  if (n_trees <= 0 || n_burn < 0 || n_draws <= 0) {
    throw ConfigError("bart: tree, burn-in and draw counts must be positive");
  }
  if (n_burn == 0) throw ConfigError("bart: n_burn must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("bart: alpha must lie in (0, 1)");
  if (!(beta > 0.0)) throw ConfigError("bart: beta must be positive");
  if (!(k > 0.0)) throw ConfigError("bart: k must be positive");
  if (!(nu > 0.0)) throw ConfigError("bart: nu must be positive");
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("bart: q must lie in (0, 1)");
}

BartPosterior::BartPosterior(Eigen::MatrixXd draws, Registry registry, double y_min,
                             double y_max)
    : draws_(std::move(draws)), registry_(std::move(registry)), y_min_(y_min), y_max_(y_max) {}

Eigen::VectorXd BartPosterior::arm_draws(int profile_id, int arm) const {
  const auto it = registry_.find(profile_id);
  if (it == registry_.end()) {
    throw EstimationError("profile " + std::to_string(profile_id) +
                          " was not registered when the BART model was fit");
  }
  return draws_.col(it->second[static_cast<std::size_t>(arm == 1 ? 1 : 0)]);
}

BartPosterior fit_bart_slearner(const TrialDataset& dataset,
                                std::span<const CovariateProfile> profiles,
                                const BartParams& params) {
  params.validate();
  if (profiles.empty()) throw ConfigError("bart: at least one profile must be registered");
  const std::size_t n = dataset.size();
  const auto p = static_cast<Eigen::Index>(dataset.dim());
  if (n < 2) throw EstimationError("bart: study needs at least two rows");

  const auto [min_it, max_it] = std::minmax_element(dataset.y.begin(), dataset.y.end());
  const double y_min = *min_it;
  const double y_max = *max_it;
  const double scale = y_max > y_min ? y_max - y_min : 1.0;
  std::vector<double> y_scaled(n);
  for (std::size_t i = 0; i < n; ++i) y_scaled[i] = (dataset.y[i] - y_min) / scale - 0.5;

  Eigen::MatrixXd features(static_cast<Eigen::Index>(n), p + 1);
  features.leftCols(p) = dataset.x;
  for (std::size_t i = 0; i < n; ++i) {
    features(static_cast<Eigen::Index>(i), p) = dataset.a[i];
  }

  // Prior guess for sigma: OLS residual sd of the scaled outcome on (1, x, a),
  // falling back to the outcome sd when the regression is not estimable.
  const Eigen::VectorXd ys = Eigen::Map<const Eigen::VectorXd>(y_scaled.data(), static_cast<Eigen::Index>(n));
  double sigma2_guess = sample_variance(ys);
  if (static_cast<Eigen::Index>(n) > p + 2) {
    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), p + 2);
    design.col(0).setOnes();
    design.rightCols(p + 1) = features;
    try {
      const auto ls = solve_least_squares(design, ys, {});
      sigma2_guess = ls.rss / static_cast<double>(static_cast<Eigen::Index>(n) - p - 2);
    } catch (const EstimationError&) {
    }
  }
  if (!(sigma2_guess > 0.0)) sigma2_guess = 1e-4;

  BartPosterior::Registry registry;
  Eigen::MatrixXd eval_points(2 * static_cast<Eigen::Index>(profiles.size()), p + 1);
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    const auto& profile = profiles[j];
    if (profile.x.size() != p) {
      throw InputError("profile " + std::to_string(profile.profile_id) +
                       " dimension does not match the trial");
    }
    const auto col = static_cast<Eigen::Index>(2 * j);
    if (!registry.emplace(profile.profile_id, std::array<Eigen::Index, 2>{col, col + 1}).second) {
      throw ConfigError("bart: duplicate profile id " + std::to_string(profile.profile_id));
    }
    eval_points.row(col).head(p) = profile.x.transpose();
    eval_points(col, p) = 0.0;
    eval_points.row(col + 1).head(p) = profile.x.transpose();
    eval_points(col + 1, p) = 1.0;
  }

  BackfittingSampler sampler(features, std::move(y_scaled), params, sigma2_guess);
  for (int it = 0; it < params.n_burn; ++it) sampler.sweep();
  Eigen::MatrixXd draws(params.n_draws, eval_points.rows());
  for (int it = 0; it < params.n_draws; ++it) {
    sampler.sweep();
    for (Eigen::Index c = 0; c < eval_points.rows(); ++c) {
      draws(it, c) = (sampler.predict(eval_points.row(c).transpose()) + 0.5) * scale + y_min;
    }
  }
  return BartPosterior(std::move(draws), std::move(registry), y_min, y_max);
}

StudyCateEstimate bart_cate_normal(const BartPosterior& posterior, const CovariateProfile& profile,
                                   int study_id) {
  const Eigen::VectorXd treated = posterior.arm_draws(profile.profile_id, 1);
  const Eigen::VectorXd control = posterior.arm_draws(profile.profile_id, 0);
  StudyCateEstimate est;
  est.study_id = study_id;
  est.profile_id = profile.profile_id;
  est.tau_hat = treated.mean() - control.mean();
  est.se2 = sample_variance(treated) + sample_variance(control);
  return est;
}

double interpolated_quantile(std::span<const double> sorted_values, double prob) {
  if (sorted_values.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted_values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted_values.size()) return sorted_values.back();
  return sorted_values[lo] + (h - static_cast<double>(lo)) * (sorted_values[lo + 1] - sorted_values[lo]);
}

BartQuantileInterval bart_cate_quantile(const BartPosterior& posterior,
                                        const CovariateProfile& profile, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("bart_cate_quantile: level outside (0, 1)");
  const Eigen::VectorXd diff =
      posterior.arm_draws(profile.profile_id, 1) - posterior.arm_draws(profile.profile_id, 0);
  std::vector<double> sorted(diff.data(), diff.data() + diff.size());
  std::sort(sorted.begin(), sorted.end());
  const double tail = (1.0 - level) / 2.0;
  return {diff.mean(), interpolated_quantile(sorted, tail), interpolated_quantile(sorted, 1.0 - tail)};
}

}  // namespace metacate
