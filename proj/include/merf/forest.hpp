#pragma once

// Regression random forest: bootstrap-aggregated CART trees with mtry split
// candidates per node, variance-reduction splits, and out-of-bag predictions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "merf/error.hpp"
#include "merf/log.hpp"
#include "merf/parallel.hpp"
#include "merf/random.hpp"

namespace merf {

struct ForestConfig {
  std::size_t n_trees = 500;
  std::size_t mtry = 1;
  std::size_t min_node_size = 5;
  std::uint64_t seed = 1;
  /// Sampling fraction is fixed at 1.0 with replacement. Disabling the
  /// bootstrap grows every tree on the full training set (test hook).
  bool bootstrap = true;
  /// Worker hint; 0 uses every hardware thread. Never affects results.
  unsigned threads = 0;

  void validate(std::size_t p) const {
    if (n_trees == 0) throw ConfigError("n_trees must be positive");
    if (min_node_size == 0) throw ConfigError("min_node_size must be positive");
    if (mtry == 0 || mtry > p)
      throw ConfigError("mtry must lie in [1, p] (mtry=" + std::to_string(mtry) + ", p=" + std::to_string(p) + ")");
  }
};

struct TreeNode {
  /// -1 marks a leaf.
  std::int32_t feature = -1;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double threshold = 0.0;
  /// Leaf: mean of the in-bag responses reaching it. Internal: node mean.
  double value = 0.0;

  bool leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Array-encoded binary tree; node 0 is the root. Rows with
/// x[feature] <= threshold go left.
struct RegressionTree {
  std::vector<TreeNode> nodes;
  /// Bootstrap sample as a sorted multiset of training row indices.
  std::vector<std::uint32_t> in_bag;

  template <class Row>
  double predict(const Row& x) const {
    std::uint32_t k = 0;
    while (!nodes[k].leaf()) k = x(nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }

  double predict(const Eigen::MatrixXd& X, Eigen::Index row) const {
    std::uint32_t k = 0;
    while (!nodes[k].leaf()) k = X(row, nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }

  bool contains(std::uint32_t row) const { return std::binary_search(in_bag.begin(), in_bag.end(), row); }

  std::size_t leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); }));
  }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

namespace detail {

struct SplitCandidate {
  std::int32_t feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // sum_L^2/n_L + sum_R^2/n_R
};

/// Row orderings of the training matrix, one per feature; shared read-only
/// by every tree of a fit.
struct FeatureOrder {
  std::vector<std::vector<std::uint32_t>> by_feature;

  explicit FeatureOrder(const Eigen::MatrixXd& X) : by_feature(static_cast<std::size_t>(X.cols())) {
    const auto n = static_cast<std::uint32_t>(X.rows());
    for (std::size_t f = 0; f < by_feature.size(); ++f) {
      auto& order = by_feature[f];
      order.resize(n);
      std::iota(order.begin(), order.end(), 0u);
      const auto col = static_cast<Eigen::Index>(f);
      std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return X(a, col) < X(b, col); });
    }
  }
};

// Grows one tree. Each feature keeps the node's rows (with bootstrap
// multiplicity) sorted by that feature; a split stably partitions every
// feature's segment, so no per-node sorting is needed.
//
// Split candidates at a node are drawn from a key derived from the node's
// path below the root, not from a running stream: a change in one subtree
// leaves the draws everywhere else untouched.
class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& X, std::span<const double> y, const FeatureOrder& order,
             const ForestConfig& config, Engine& rng)
      : X_(X), y_(y), order_(order), config_(config), rng_(rng), features_(static_cast<std::size_t>(X.cols())) {
    std::iota(features_.begin(), features_.end(), 0);
  }

  /// `multiplicity[r]` is how often row r appears in the tree's sample.
  RegressionTree grow(const std::vector<std::uint32_t>& multiplicity, std::size_t sample_size) {
    const std::size_t p = features_.size();
    sorted_.assign(p, {});
    for (std::size_t f = 0; f < p; ++f) {
      auto& seg = sorted_[f];
      seg.reserve(sample_size);
      for (std::uint32_t r : order_.by_feature[f])
        for (std::uint32_t c = 0; c < multiplicity[r]; ++c) seg.push_back(r);
    }
    scratch_.resize(sample_size);
    goes_left_.assign(static_cast<std::size_t>(X_.rows()), 0);

    RegressionTree tree;
    struct Pending {
      std::uint32_t node;
      std::size_t begin, end;
      std::uint64_t key;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, sample_size, rng_()});
    while (!stack.empty()) {
      Pending job = stack.back();
      stack.pop_back();
      const std::size_t count = job.end - job.begin;
      const auto& rows = sorted_[0];
      double sum = 0.0, lo = y_[rows[job.begin]], hi = lo;
      for (std::size_t k = job.begin; k < job.end; ++k) {
        const double v = y_[rows[k]];
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      tree.nodes[job.node].value = lo == hi ? lo : sum / static_cast<double>(count);
      if (count < 2 * config_.min_node_size || lo == hi) continue;

      SplitCandidate best = find_split(job.begin, job.end, sum, job.key);
      if (best.feature < 0) continue;

      const std::size_t split = partition(job.begin, job.end, best);
      const auto left = static_cast<std::uint32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[job.node];
      node.feature = best.feature;
      node.threshold = best.threshold;
      node.left = left;
      node.right = left + 1;
      // Right child pushed first so the left subtree is expanded first.
      stack.push_back({left + 1, split, job.end, splitmix64(job.key ^ 0x5bd1e9955bd1e995ULL)});
      stack.push_back({left, job.begin, split, splitmix64(job.key ^ 0x27d4eb2f165667c5ULL)});
    }
    return tree;
  }

 private:
  // Best split among mtry randomly drawn features. Ties, up to rounding,
  // resolve to the lowest feature index, then the smallest threshold.
  SplitCandidate find_split(std::size_t begin, std::size_t end, double total, std::uint64_t key) {
    const std::size_t p = features_.size();
    std::iota(features_.begin(), features_.end(), 0);
    for (std::size_t i = 0; i < config_.mtry; ++i) {
      const auto draw = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(splitmix64(key + i)) * static_cast<unsigned __int128>(p - i)) >> 64);
      std::swap(features_[i], features_[i + draw]);
    }
    candidates_.assign(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(config_.mtry));
    std::sort(candidates_.begin(), candidates_.end());

    const std::size_t count = end - begin;
    SplitCandidate best;
    best.score = total * total / static_cast<double>(count);
    for (std::int32_t f : candidates_) {
      const auto& rows = sorted_[static_cast<std::size_t>(f)];
      double left_sum = 0.0;
      double x_next = X_(rows[begin], f);
      for (std::size_t k = begin; k + 1 < end; ++k) {
        const double x = x_next;
        x_next = X_(rows[k + 1], f);
        left_sum += y_[rows[k]];
        if (x == x_next) continue;
        const double nl = static_cast<double>(k + 1 - begin), nr = static_cast<double>(end - k - 1);
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / nl + right_sum * right_sum / nr;
        if (score > best.score + 1e-12 * std::abs(best.score)) {
          best.score = score;
          best.feature = f;
          best.threshold = 0.5 * (x + x_next);
          // Midpoint may round onto the upper value for adjacent doubles.
          if (!(best.threshold < x_next)) best.threshold = x;
        }
      }
    }
    return best;
  }

  std::size_t partition(std::size_t begin, std::size_t end, const SplitCandidate& split) {
    const auto& primary = sorted_[static_cast<std::size_t>(split.feature)];
    std::size_t n_left = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t r = primary[k];
      const bool left = X_(r, split.feature) <= split.threshold;
      goes_left_[r] = left;
      n_left += left;
    }
    for (auto& seg : sorted_) {
      std::size_t l = begin, r = 0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint32_t row = seg[k];
        if (goes_left_[row]) seg[l++] = row;
        else scratch_[r++] = row;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r), seg.begin() + static_cast<std::ptrdiff_t>(l));
    }
    return begin + n_left;
  }

  const Eigen::MatrixXd& X_;
  std::span<const double> y_;
  const FeatureOrder& order_;
  const ForestConfig& config_;
  Engine& rng_;
  std::vector<std::int32_t> features_;
  std::vector<std::int32_t> candidates_;
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<std::uint32_t> scratch_;
  std::vector<char> goes_left_;
};

/// Compact layout for bulk prediction. Children are adjacent, so a step is
/// `left + (x > threshold)`; rows advance level by level and drop out of the
/// active set (branch-free) once they reach a leaf.
struct FlatTree {
  struct Node {
    double threshold;
    std::int32_t feature;  // -1 for leaves
    std::uint32_t left;
  };
  std::vector<Node> nodes;
  std::vector<double> value;

  FlatTree() = default;
  explicit FlatTree(const RegressionTree& tree) {
    nodes.resize(tree.nodes.size());
    value.resize(tree.nodes.size());
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      const TreeNode& t = tree.nodes[k];
      value[k] = t.value;
      if (t.leaf()) {
        nodes[k] = {0.0, -1, 0};
      } else {
        if (t.right != t.left + 1) throw ConfigError("tree children must be stored adjacently");
        nodes[k] = {t.threshold, t.feature, t.left};
      }
    }
  }

  // Folds this tree's prediction for rows [begin, end) into the running mean
  // out[begin..end) over `seen` earlier trees.
  void accumulate(const Eigen::MatrixXd& X, std::size_t begin, std::size_t end, std::vector<std::uint32_t>& pos,
                  std::vector<std::uint32_t>& active, double* out, std::size_t seen = 0) const {
    const std::size_t m = end - begin;
    pos.assign(m, 0);
    std::size_t live = 0;
    if (nodes[0].feature >= 0) {
      active.resize(m);
      for (std::size_t i = 0; i < m; ++i) active[i] = static_cast<std::uint32_t>(i);
      live = m;
    }
    const double* data = X.data() + begin;
    const auto stride = static_cast<std::size_t>(X.rows());
    while (live > 0) {
      std::size_t kept = 0;
      for (std::size_t a = 0; a < live; ++a) {
        const std::uint32_t i = active[a];
        const Node& nd = nodes[pos[i]];
        const double x = data[static_cast<std::size_t>(nd.feature) * stride + i];
        const std::uint32_t next = nd.left + static_cast<std::uint32_t>(x > nd.threshold);
        pos[i] = next;
        active[kept] = i;
        kept += static_cast<std::size_t>(nodes[next].feature >= 0);
      }
      live = kept;
    }
    const double weight = 1.0 / static_cast<double>(seen + 1);
    for (std::size_t i = 0; i < m; ++i) out[begin + i] += (value[pos[i]] - out[begin + i]) * weight;
  }
};

}  // namespace detail

class Forest {
 public:
  Forest() = default;

  /// Wraps explicitly constructed trees (no training data, no OOB).
  static Forest from_trees(std::vector<RegressionTree> trees, ForestConfig config, std::size_t p) {
    if (trees.empty()) throw ConfigError("a forest needs at least one tree");
    Forest f;
    config.n_trees = trees.size();
    f.trees_ = std::move(trees);
    f.config_ = config;
    f.p_ = p;
    f.flatten();
    return f;
  }

  static Forest fit(const Eigen::MatrixXd& X, std::span<const double> y, const ForestConfig& config) {
    const std::size_t n = y.size();
    if (static_cast<std::size_t>(X.rows()) != n)
      throw ShapeError("X has " + std::to_string(X.rows()) + " rows, y has " + std::to_string(n));
    if (n < 2) throw ConfigError("a forest needs at least 2 observations");
    for (double v : y)
      if (!std::isfinite(v)) throw ConfigError("non-finite response passed to the forest");
    const std::size_t p = static_cast<std::size_t>(X.cols());
    config.validate(p);

    Forest f;
    f.config_ = config;
    f.p_ = p;
    f.n_train_ = n;
    f.trees_.resize(config.n_trees);
    f.flat_.resize(config.n_trees);
    const detail::FeatureOrder order(X);
    // Per-tree predictions at every training row; reduced in tree order below.
    std::vector<std::vector<double>> train_pred(config.n_trees);

    parallel_for(config.n_trees, config.threads, [&](std::size_t t) {
      Engine rng = make_engine(config.seed, {stream::tree, t});
      std::vector<std::uint32_t> multiplicity(n, config.bootstrap ? 0u : 1u);
      if (config.bootstrap)
        for (std::size_t k = 0; k < n; ++k) ++multiplicity[uniform_index(rng, n)];
      detail::TreeGrower grower(X, y, order, config, rng);
      RegressionTree tree = grower.grow(multiplicity, n);
      tree.in_bag.reserve(n);
      for (std::size_t r = 0; r < n; ++r)
        tree.in_bag.insert(tree.in_bag.end(), multiplicity[r], static_cast<std::uint32_t>(r));
      detail::FlatTree flat(tree);
      auto& pred = train_pred[t];
      pred.assign(n, 0.0);
      std::vector<std::uint32_t> pos, active;
      flat.accumulate(X, 0, n, pos, active, pred.data());
      f.trees_[t] = std::move(tree);
      f.flat_[t] = std::move(flat);
    });

    // Running means in tree order.
    std::vector<double> oob_mean(n, 0.0), full_mean(n, 0.0);
    std::vector<std::size_t> oob_count(n, 0);
    std::vector<char> in_bag(n);
    for (std::size_t t = 0; t < config.n_trees; ++t) {
      std::fill(in_bag.begin(), in_bag.end(), 0);
      for (std::uint32_t r : f.trees_[t].in_bag) in_bag[r] = 1;
      const double weight = 1.0 / static_cast<double>(t + 1);
      for (std::size_t j = 0; j < n; ++j) {
        const double v = train_pred[t][j];
        full_mean[j] += (v - full_mean[j]) * weight;
        if (!in_bag[j]) {
          ++oob_count[j];
          oob_mean[j] += (v - oob_mean[j]) / static_cast<double>(oob_count[j]);
        }
      }
    }
    f.oob_.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (oob_count[j] > 0) {
        f.oob_[j] = oob_mean[j];
      } else {
        f.oob_[j] = full_mean[j];
        ++f.oob_fallbacks_;
      }
    }
    if (f.oob_fallbacks_ > 0 && config.bootstrap)
      log::warn(std::to_string(f.oob_fallbacks_) + " training rows were never out-of-bag; used full-forest predictions");
    return f;
  }

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index row) const {
    double mean = 0.0, seen = 0.0;
    for (const auto& tree : trees_) mean += (tree.predict(X, row) - mean) / ++seen;
    return mean;
  }

  std::vector<double> predict(const Eigen::MatrixXd& X) const {
    check_columns(X);
    const auto m = static_cast<std::size_t>(X.rows());
    std::vector<double> out(m, 0.0);
    // Trees outer, row blocks inner: one tree stays cache resident while it
    // visits a block. Per-row means still accumulate in tree order.
    constexpr std::size_t chunk = 1024;
    parallel_for((m + chunk - 1) / chunk, config_.threads, [&](std::size_t c) {
      const std::size_t begin = c * chunk, end = std::min(m, (c + 1) * chunk);
      std::vector<std::uint32_t> pos, active;
      for (std::size_t t = 0; t < flat_.size(); ++t) flat_[t].accumulate(X, begin, end, pos, active, out.data(), t);
    });
    return out;
  }

  /// OOB predictions for the training rows; rows never left out of any
  /// bootstrap sample fall back to the full-forest prediction.
  const std::vector<double>& oob_predictions() const {
    if (oob_.empty()) throw ConfigError("forest carries no training data for OOB predictions");
    return oob_;
  }

  std::size_t oob_fallbacks() const { return oob_fallbacks_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  const ForestConfig& config() const { return config_; }
  std::size_t features() const { return p_; }
  std::size_t training_rows() const { return n_train_; }

  /// Restores a deserialized forest.
  static Forest restore(std::vector<RegressionTree> trees, ForestConfig config, std::size_t p,
                        std::vector<double> oob, std::size_t fallbacks) {
    Forest f = from_trees(std::move(trees), config, p);
    f.n_train_ = oob.size();
    f.oob_ = std::move(oob);
    f.oob_fallbacks_ = fallbacks;
    return f;
  }

 private:
  void check_columns(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != p_)
      throw ShapeError("forest trained on " + std::to_string(p_) + " columns, got " + std::to_string(X.cols()));
  }

  void flatten() {
    flat_.clear();
    flat_.reserve(trees_.size());
    for (const auto& t : trees_) {
      for (const auto& node : t.nodes)
        if (!node.leaf() && static_cast<std::size_t>(node.feature) >= p_)
          throw ShapeError("tree references feature " + std::to_string(node.feature) + " of " + std::to_string(p_));
      flat_.emplace_back(t);
    }
  }

  std::vector<RegressionTree> trees_;
  std::vector<detail::FlatTree> flat_;
  ForestConfig config_;
  std::size_t p_ = 0;
  std::size_t n_train_ = 0;
  std::vector<double> oob_;
  std::size_t oob_fallbacks_ = 0;
};

inline Forest fit_forest(const Eigen::MatrixXd& X, std::span<const double> y, const ForestConfig& config) {
  return Forest::fit(X, y, config);
}

inline std::vector<double> predict(const Forest& forest, const Eigen::MatrixXd& X_new) { return forest.predict(X_new); }

inline const std::vector<double>& predict_oob(const Forest& forest) { return forest.oob_predictions(); }

}  // namespace merf
