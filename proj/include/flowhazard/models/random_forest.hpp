#pragma once

// Regression forest: CART trees grown by variance reduction on bootstrap
// samples, prediction is the mean of the tree outputs.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flowhazard/models/common.hpp"
#include "flowhazard/rng.hpp"

namespace flowhazard::models {

struct RandomForestParams {
  int n_trees = 100;
  std::optional<int> max_depth;           // unbounded when empty
  int min_leaf = 2;
  std::optional<int> features_per_split;  // ceil(F/3) when empty
  bool bootstrap = true;

  void validate() const {
    if (n_trees < 1) throw Error(ErrorKind::InvalidConfig, "n_trees must be >= 1");
    if (max_depth && *max_depth < 0) throw Error(ErrorKind::InvalidConfig, "max_depth must be >= 0");
    if (min_leaf < 1) throw Error(ErrorKind::InvalidConfig, "min_leaf must be >= 1");
    if (features_per_split && *features_per_split < 1) {
      throw Error(ErrorKind::InvalidConfig, "features_per_split must be >= 1");
    }
  }

  friend bool operator==(const RandomForestParams&, const RandomForestParams&) = default;
};

/// Flat node arrays. feature == -1 marks a leaf; internal nodes send
/// x[feature] <= threshold to the left child.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  std::size_t size() const noexcept { return feature.size(); }

  double predict(std::span<const double> x) const {
    std::size_t node = 0;
    while (feature[node] >= 0) {
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] <= threshold[node]
                                          ? left[node]
                                          : right[node]);
    }
    return value[node];
  }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct ForestState {
  std::vector<RegressionTree> trees;

  double predict(std::span<const double> x) const {
    double sum = 0.0;
    for (const auto& t : trees) sum += t.predict(x);
    return sum / static_cast<double>(trees.size());
  }

  friend bool operator==(const ForestState&, const ForestState&) = default;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<double>& x, std::size_t n_features, const std::vector<double>& y,
              const RandomForestParams& params, Rng& rng)
      : x_(x), F_(n_features), y_(y), params_(params), rng_(rng) {
    mtry_ = params.features_per_split
                ? std::min<std::size_t>(static_cast<std::size_t>(*params.features_per_split), F_)
                : std::max<std::size_t>(1, (F_ + 2) / 3);
  }

  RegressionTree build(std::vector<std::size_t> sample) {
    tree_ = RegressionTree{};
    grow(sample, 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    std::size_t n_left = 0;
  };

  double at(std::size_t row, std::size_t j) const { return x_[row * F_ + j]; }

  int add_node() {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(0.0);
    return static_cast<int>(tree_.feature.size() - 1);
  }

  int grow(std::vector<std::size_t>& sample, int depth) {
    const int node = add_node();
    double sum = 0.0;
    for (auto i : sample) sum += y_[i];
    tree_.value[static_cast<std::size_t>(node)] = sum / static_cast<double>(sample.size());

    const bool depth_reached = params_.max_depth && depth >= *params_.max_depth;
    const std::size_t min_leaf = static_cast<std::size_t>(params_.min_leaf);
    const bool pure = std::all_of(sample.begin(), sample.end(),
                                  [&](std::size_t i) { return y_[i] == y_[sample.front()]; });
    if (depth_reached || pure || sample.size() < 2 * min_leaf) return node;

    const auto split = find_split(sample, sum);
    if (split.feature < 0) return node;

    const auto f = static_cast<std::size_t>(split.feature);
    std::vector<std::size_t> left_rows;
    std::vector<std::size_t> right_rows;
    left_rows.reserve(split.n_left);
    right_rows.reserve(sample.size() - split.n_left);
    for (auto i : sample) (at(i, f) <= split.threshold ? left_rows : right_rows).push_back(i);
    sample.clear();
    sample.shrink_to_fit();

    const auto n = static_cast<std::size_t>(node);
    tree_.feature[n] = split.feature;
    tree_.threshold[n] = split.threshold;
    const int l = grow(left_rows, depth + 1);
    tree_.left[n] = l;
    const int r = grow(right_rows, depth + 1);
    tree_.right[n] = r;
    return node;
  }

  // Features are visited in a random order; the first `mtry_` form the
  // candidate set. If none of them admits a valid split, further features are
  // drawn one at a time. Ties on gain keep the lowest feature index, then the
  // lowest threshold.
  Split find_split(const std::vector<std::size_t>& sample, double total) {
    std::vector<std::size_t> order(F_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_in_place(order, rng_);

    Split best;
    std::size_t next = std::min(mtry_, F_);
    std::vector<std::size_t> candidates(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(next));
    std::sort(candidates.begin(), candidates.end());
    for (;;) {
      for (auto f : candidates) evaluate_feature(sample, f, total, best);
      if (best.feature >= 0 || next >= F_) break;
      candidates.assign(1, order[next++]);
    }
    return best;
  }

  void evaluate_feature(const std::vector<std::size_t>& sample, std::size_t f, double total,
                        Split& best) {
    const std::size_t m = sample.size();
    const std::size_t min_leaf = static_cast<std::size_t>(params_.min_leaf);
    buffer_.resize(m);
    for (std::size_t k = 0; k < m; ++k) buffer_[k] = {at(sample[k], f), y_[sample[k]]};
    std::sort(buffer_.begin(), buffer_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (buffer_.front().first == buffer_.back().first) return;

    const double base = total * total / static_cast<double>(m);
    double left_sum = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      left_sum += buffer_[k].second;
      const std::size_t nl = k + 1;
      const std::size_t nr = m - nl;
      if (nl < min_leaf) continue;
      if (nr < min_leaf) break;
      if (buffer_[k].first == buffer_[k + 1].first) continue;
      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(nl) +
                          right_sum * right_sum / static_cast<double>(nr) - base;
      const bool better = best.feature < 0 || gain > best.gain ||
                          (gain == best.gain && (static_cast<int>(f) < best.feature ||
                                                 (static_cast<int>(f) == best.feature &&
                                                  buffer_[k].first < best.threshold)));
      if (better) best = Split{static_cast<int>(f), buffer_[k].first, gain, nl};
    }
  }

  const std::vector<double>& x_;
  std::size_t F_;
  const std::vector<double>& y_;
  const RandomForestParams& params_;
  Rng& rng_;
  std::size_t mtry_ = 1;
  RegressionTree tree_;
  std::vector<std::pair<double, double>> buffer_;
};

}  // namespace detail

/// Fits on raw features; split thresholds are observed training values, so
/// the forest is unchanged by strictly increasing transforms of a feature.
inline ForestState fit_random_forest(const BinaryDataset& data, const RandomForestParams& params,
                                     std::uint64_t seed) {
  params.validate();
  const std::size_t n = data.size();
  const std::size_t F = data.schema.size();
  std::vector<double> x;
  x.reserve(n * F);
  for (const auto& row : data.rows) x.insert(x.end(), row.features.begin(), row.features.end());

  ForestState forest;
  forest.trees.reserve(static_cast<std::size_t>(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng = make_rng(split_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> sample(n);
    if (params.bootstrap) {
      for (auto& s : sample) s = uniform_index(rng, n);
      std::sort(sample.begin(), sample.end());
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    detail::TreeBuilder builder(x, F, data.targets, params, rng);
    forest.trees.push_back(builder.build(std::move(sample)));
  }
  return forest;
}

}  // namespace flowhazard::models
