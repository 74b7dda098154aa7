#include "metacate/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "metacate/parallel.hpp"
#include "metacate/rng.hpp"

namespace metacate {
namespace {

using RowIndex = std::uint32_t;

// Draws k distinct elements of `pool` (partial Fisher-Yates on a copy).
std::vector<RowIndex> sample_without_replacement(std::vector<RowIndex> pool, std::size_t k,
                                                 Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

struct ArmSums {
  int n_treated = 0;
  int n_control = 0;
  double sum_treated = 0.0;
  double sum_control = 0.0;

  int size() const { return n_treated + n_control; }
  double tau() const { return sum_treated / n_treated - sum_control / n_control; }
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double criterion = 0.0;
};

class TreeGrower {
 public:
  TreeGrower(const TrialDataset& data, const ForestParams& params, Rng& rng)
      : data_(data), params_(params), rng_(rng), p_(static_cast<int>(data.dim())) {}

  void grow(CausalTree& tree) {
    tree.nodes.clear();
    grow_node(tree, tree.split_rows,
              params_.honest ? tree.estimation_rows : tree.split_rows);
  }

 private:
  double x(RowIndex row, int feature) const {
    return data_.x(static_cast<Eigen::Index>(row), feature);
  }

  ArmSums sums(const std::vector<RowIndex>& rows) const {
    ArmSums s;
    for (RowIndex r : rows) {
      if (data_.a[r] == 1) {
        ++s.n_treated;
        s.sum_treated += data_.y[r];
      } else {
        ++s.n_control;
        s.sum_control += data_.y[r];
      }
    }
    return s;
  }

  bool admissible(int n_treated, int n_control) const {
    return n_treated >= params_.min_leaf_treated && n_control >= params_.min_leaf_control;
  }

  std::vector<int> candidate_features() {
    std::vector<int> features(static_cast<std::size_t>(p_));
    std::iota(features.begin(), features.end(), 0);
    const int mtry = params_.mtry <= 0 ? p_ : std::min(params_.mtry, p_);
    if (mtry < p_) {
      for (int i = 0; i < mtry; ++i) {
        std::uniform_int_distribution<int> pick(i, p_ - 1);
        std::swap(features[static_cast<std::size_t>(i)],
                  features[static_cast<std::size_t>(pick(rng_))]);
      }
      features.resize(static_cast<std::size_t>(mtry));
      std::sort(features.begin(), features.end());
    }
    return features;
  }

  SplitChoice best_split(const std::vector<RowIndex>& split_rows,
                         const std::vector<RowIndex>& est_rows, const ArmSums& total,
                         const ArmSums& est_total) {
    SplitChoice best;
    best.criterion = -std::numeric_limits<double>::infinity();
    const std::size_t m = split_rows.size();
    std::vector<std::pair<double, RowIndex>> sorted(m);
    std::vector<std::pair<double, int>> est_sorted;

    for (int f : candidate_features()) {
      for (std::size_t i = 0; i < m; ++i) sorted[i] = {x(split_rows[i], f), split_rows[i]};
      std::sort(sorted.begin(), sorted.end());
      if (params_.honest) {
        est_sorted.resize(est_rows.size());
        for (std::size_t i = 0; i < est_rows.size(); ++i) {
          est_sorted[i] = {x(est_rows[i], f), data_.a[est_rows[i]]};
        }
        std::sort(est_sorted.begin(), est_sorted.end());
      }
      ArmSums left;
      std::size_t est_pos = 0;
      int est_left_treated = 0;
      int est_left_control = 0;
      for (std::size_t i = 0; i + 1 < m; ++i) {
        const RowIndex r = sorted[i].second;
        if (data_.a[r] == 1) {
          ++left.n_treated;
          left.sum_treated += data_.y[r];
        } else {
          ++left.n_control;
          left.sum_control += data_.y[r];
        }
        const double lo = sorted[i].first;
        const double hi = sorted[i + 1].first;
        if (lo == hi) continue;
        const ArmSums right{total.n_treated - left.n_treated, total.n_control - left.n_control,
                            total.sum_treated - left.sum_treated,
                            total.sum_control - left.sum_control};
        if (!admissible(left.n_treated, left.n_control)) continue;
        // Right-hand counts only shrink from here on.
        if (!admissible(right.n_treated, right.n_control)) break;
        double threshold = lo + 0.5 * (hi - lo);
        if (!(threshold < hi)) threshold = lo;
        if (params_.honest) {
          while (est_pos < est_sorted.size() && est_sorted[est_pos].first <= threshold) {
            if (est_sorted[est_pos].second == 1) {
              ++est_left_treated;
            } else {
              ++est_left_control;
            }
            ++est_pos;
          }
          if (!admissible(est_left_treated, est_left_control) ||
              !admissible(est_total.n_treated - est_left_treated,
                          est_total.n_control - est_left_control)) {
            continue;
          }
        }
        const double tl = left.tau();
        const double tr = right.tau();
        const double criterion = left.size() * tl * tl + right.size() * tr * tr;
        if (criterion > best.criterion) {
          best = {f, threshold, criterion};
        }
      }
    }
    return best;
  }

  int make_leaf(CausalTree& tree, const std::vector<RowIndex>& est_rows) {
    const ArmSums s = sums(est_rows);
    CausalTree::Node leaf;
    leaf.n_treated = s.n_treated;
    leaf.n_control = s.n_control;
    leaf.tau = (s.n_treated > 0 && s.n_control > 0) ? s.tau() : 0.0;
    tree.nodes.push_back(leaf);
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  int grow_node(CausalTree& tree, const std::vector<RowIndex>& split_rows,
                const std::vector<RowIndex>& est_rows) {
    const ArmSums total = sums(split_rows);
    const ArmSums est_total = params_.honest ? sums(est_rows) : total;
    const bool splittable =
        total.n_treated >= 2 * params_.min_leaf_treated &&
        total.n_control >= 2 * params_.min_leaf_control &&
        est_total.n_treated >= 2 * params_.min_leaf_treated &&
        est_total.n_control >= 2 * params_.min_leaf_control;
    if (!splittable) return make_leaf(tree, est_rows);

    const SplitChoice split = best_split(split_rows, est_rows, total, est_total);
    const double parent_tau = total.tau();
    const double parent_criterion = total.size() * parent_tau * parent_tau;
    if (split.feature < 0 || !(split.criterion > parent_criterion)) {
      return make_leaf(tree, est_rows);
    }

    auto partition = [&](const std::vector<RowIndex>& rows, std::vector<RowIndex>& left,
                         std::vector<RowIndex>& right) {
      for (RowIndex r : rows) {
        (x(r, split.feature) <= split.threshold ? left : right).push_back(r);
      }
    };
    std::vector<RowIndex> split_left, split_right, est_left, est_right;
    partition(split_rows, split_left, split_right);
    if (params_.honest) partition(est_rows, est_left, est_right);

    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[static_cast<std::size_t>(index)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(index)].threshold = split.threshold;
    const int left = params_.honest ? grow_node(tree, split_left, est_left)
                                    : grow_node(tree, split_left, split_left);
    const int right = params_.honest ? grow_node(tree, split_right, est_right)
                                     : grow_node(tree, split_right, split_right);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.left = left;
    node.right = right;
    node.n_treated = est_total.n_treated;
    node.n_control = est_total.n_control;
    return index;
  }

  const TrialDataset& data_;
  const ForestParams& params_;
  Rng& rng_;
  int p_;
};

double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

void ForestParams::validate(std::size_t n_covariates) const {
  if (n_trees <= 0) throw ConfigError("forest: n_trees must be positive");
  if (bag_size < 2) throw ConfigError("forest: bag_size must be at least 2");
  if (n_trees % bag_size != 0) {
    throw ConfigError("forest: n_trees (" + std::to_string(n_trees) +
                      ") must be divisible by bag_size (" + std::to_string(bag_size) + ")");
  }
  if (n_trees / bag_size < 2) throw ConfigError("forest: need at least two bags");
  if (min_leaf_treated < 2 || min_leaf_control < 2) {
    throw ConfigError("forest: minimum leaf sizes must be at least 2");
  }
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("forest: subsample_fraction must lie in (0, 1]");
  }
  if (mtry < 0 || static_cast<std::size_t>(mtry) > n_covariates) {
    throw ConfigError("forest: mtry must lie in [0, p]");
  }
}

const CausalTree::Node& CausalTree::leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::size_t node = 0;
  while (!nodes[node].is_leaf()) {
    const Node& n = nodes[node];
    node = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
  }
  return nodes[node];
}

CausalForestModel fit_causal_forest(const TrialDataset& dataset, const ForestParams& params,
                                    int threads) {
  params.validate(dataset.dim());
  const std::size_t n = dataset.size();
  const std::size_t half = n / 2;
  const std::size_t subsample = std::min(
      half, static_cast<std::size_t>(std::llround(params.subsample_fraction * static_cast<double>(n))));
  const std::size_t smallest_set = params.honest ? subsample / 2 : subsample;
  const double treated_share = n == 0 ? 0.0 : static_cast<double>(dataset.count_arm(1)) / n;
  const double smallest_arm = smallest_set * std::min(treated_share, 1.0 - treated_share);
  if (smallest_arm < std::max(params.min_leaf_treated, params.min_leaf_control)) {
    throw ConfigError("forest: study " + std::to_string(dataset.study_id) + " with " +
                      std::to_string(n) +
                      " rows is too small for the requested leaf minima and subsample");
  }

  CausalForestModel model;
  model.params = params;
  model.n_covariates = dataset.dim();
  {
    std::vector<double> y(dataset.y);
    model.se2_floor = kForestVarianceFloorFactor * sample_variance(y);
  }

  const int n_bags = params.n_trees / params.bag_size;
  std::vector<std::vector<RowIndex>> halves(static_cast<std::size_t>(n_bags));
  std::vector<RowIndex> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), RowIndex{0});
  for (int b = 0; b < n_bags; ++b) {
    Rng rng = make_stream(params.seed, StreamTag::kForestBag, {static_cast<std::uint64_t>(b)});
    halves[static_cast<std::size_t>(b)] = sample_without_replacement(all_rows, half, rng);
  }

  model.trees.resize(static_cast<std::size_t>(params.n_trees));
  parallel_for(model.trees.size(), threads, [&](std::size_t t) {
    Rng rng = make_stream(params.seed, StreamTag::kForestTree, {t});
    CausalTree& tree = model.trees[t];
    tree.bag = static_cast<int>(t) / params.bag_size;
    std::vector<RowIndex> rows =
        sample_without_replacement(halves[static_cast<std::size_t>(tree.bag)], subsample, rng);
    if (params.honest) {
      const std::size_t cut = rows.size() / 2;
      tree.split_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
      tree.estimation_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end());
    } else {
      tree.split_rows = rows;
      tree.estimation_rows = std::move(rows);
    }
    TreeGrower(dataset, params, rng).grow(tree);
  });
  return model;
}

StudyCateEstimate forest_cate(const CausalForestModel& model, const CovariateProfile& profile,
                              int study_id) {
  if (static_cast<std::size_t>(profile.x.size()) != model.n_covariates) {
    throw InputError("profile " + std::to_string(profile.profile_id) + " has " +
                     std::to_string(profile.x.size()) + " covariates, forest expects " +
                     std::to_string(model.n_covariates));
  }
  const std::size_t n_trees = model.trees.size();
  int n_bags = 0;
  for (const auto& tree : model.trees) n_bags = std::max(n_bags, tree.bag + 1);
  std::vector<std::vector<double>> by_bag(static_cast<std::size_t>(n_bags));

  std::size_t used = 0;
  double total = 0.0;
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.leaf_for(profile.x);
    if (leaf.n_treated == 0 || leaf.n_control == 0) continue;
    by_bag[static_cast<std::size_t>(tree.bag)].push_back(leaf.tau);
    total += leaf.tau;
    ++used;
  }
  if (used == 0 || 2 * (n_trees - used) > n_trees) {
    throw EstimationError("profile " + std::to_string(profile.profile_id) + ": " +
                          std::to_string(n_trees - used) + " of " + std::to_string(n_trees) +
                          " trees reached a leaf with an empty arm");
  }

  std::vector<double> bag_means;
  double within = 0.0;
  double group_size = 0.0;
  for (const auto& values : by_bag) {
    if (values.size() < 2) continue;
    bag_means.push_back(std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(values.size()));
    within += sample_variance(values);
    group_size += static_cast<double>(values.size());
  }
  double se2 = model.se2_floor;
  if (bag_means.size() >= 2) {
    const double b = static_cast<double>(bag_means.size());
    within /= b;
    group_size /= b;
    se2 = std::max(sample_variance(bag_means) - within / group_size, model.se2_floor);
  }

  StudyCateEstimate est;
  est.study_id = study_id;
  est.profile_id = profile.profile_id;
  est.tau_hat = total / static_cast<double>(used);
  est.se2 = se2;
  return est;
}

}  // namespace metacate
