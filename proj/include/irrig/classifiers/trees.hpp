#pragma once

// Tree ensembles: a bootstrap random forest of Gini CART trees and Newton-step
// gradient-boosted regression trees on the logistic loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "irrig/classifiers/dataset.hpp"
#include "irrig/core/error.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/core/random.hpp"

namespace irrig {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  /// Left branch when x[feature] <= threshold.
  double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }
  bool operator==(const Tree&) const = default;
};

// ---------------------------------------------------------------------------
// Random forest

struct ForestParams {
  int trees = 1000;
  int min_leaf = 5;
  int max_features = 0;  // 0 = floor(sqrt(d))
  std::uint64_t seed = 0;
};

struct Forest {
  std::vector<Tree> trees;
  std::size_t features = 0;

  /// Mean over trees of the leaf irrigated-class frequency.
  double predict(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }
};

namespace detail {

/// Draws n indices with probability proportional to weight.
inline std::vector<std::size_t> weighted_bootstrap(std::span<const double> weights, Rng& rng) {
  std::vector<double> cdf(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cdf.begin());
  const double total = cdf.back();
  std::vector<std::size_t> out(weights.size());
  for (auto& o : out) {
    const double u = uniform01(rng) * total;
    o = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    o = std::min(o, weights.size() - 1);
  }
  return out;
}

inline Tree grow_cart(const std::vector<double>& X, std::size_t d, const std::vector<int>& y,
                      std::vector<std::size_t> rows, const ForestParams& p, Rng& rng) {
  Tree tree;
  const std::size_t mtry =
      p.max_features > 0 ? std::min<std::size_t>(p.max_features, d)
                         : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
  struct Task {
    int node;
    std::size_t lo, hi;
  };
  tree.nodes.emplace_back();
  std::vector<Task> stack{{0, 0, rows.size()}};
  std::vector<std::size_t> feats(d);
  std::vector<std::pair<double, int>> vals;
  const std::size_t min_leaf = static_cast<std::size_t>(std::max(1, p.min_leaf));
  while (!stack.empty()) {
    const Task task = stack.back();
    stack.pop_back();
    const std::size_t n = task.hi - task.lo;
    std::size_t pos = 0;
    for (std::size_t i = task.lo; i < task.hi; ++i) pos += static_cast<std::size_t>(y[rows[i]]);
    tree.nodes[task.node].value = static_cast<double>(pos) / static_cast<double>(n);
    if (pos == 0 || pos == n || n < 2 * min_leaf) continue;

    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t k = 0; k < mtry; ++k) std::swap(feats[k], feats[k + uniform_index(rng, d - k)]);
    const double parent = 1.0 - std::pow(pos / double(n), 2) - std::pow((n - pos) / double(n), 2);
    double best_gain = 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t f = feats[k];
      vals.clear();
      for (std::size_t i = task.lo; i < task.hi; ++i) vals.emplace_back(X[rows[i] * d + f], y[rows[i]]);
      std::sort(vals.begin(), vals.end());
      std::size_t left_pos = 0;
      for (std::size_t i = 1; i < n; ++i) {
        left_pos += static_cast<std::size_t>(vals[i - 1].second);
        if (i < min_leaf || n - i < min_leaf) continue;
        if (!(vals[i].first > vals[i - 1].first)) continue;
        const double nl = static_cast<double>(i), nr = static_cast<double>(n - i);
        const double pl = left_pos / nl, pr = (pos - left_pos) / nr;
        const double gini = (nl * (2 * pl * (1 - pl)) + nr * (2 * pr * (1 - pr))) / static_cast<double>(n);
        const double gain = parent - gini;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (vals[i - 1].first + vals[i].first);
          if (!(best_thr < vals[i].first)) best_thr = vals[i - 1].first;
        }
      }
    }
    if (best_f < 0) continue;
    const auto mid = std::partition(rows.begin() + task.lo, rows.begin() + task.hi,
                                    [&](std::size_t r) { return X[r * d + best_f] <= best_thr; });
    const std::size_t split = static_cast<std::size_t>(mid - rows.begin());
    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    tree.nodes[task.node].feature = best_f;
    tree.nodes[task.node].threshold = best_thr;
    tree.nodes[task.node].left = l;
    tree.nodes[task.node].right = l + 1;
    stack.push_back({l + 1, split, task.hi});
    stack.push_back({l, task.lo, split});
  }
  return tree;
}

}  // namespace detail

/// Trees are grown independently from per-tree streams, so the forest does not depend
/// on the worker count. Single-class data yields a constant predictor.
inline Forest fit_random_forest(const Dataset& data, const ForestParams& p) {
  data.validate();
  if (data.size() < 2) throw NumericError("fit_random_forest: need at least 2 samples");
  Forest f;
  f.features = data.width();
  if (!data.has_both_classes()) {
    log::warn("fit_random_forest: single-class training data, fitting a constant predictor");
    Tree t;
    t.nodes.push_back({-1, 0.0, -1, -1, static_cast<double>(data.labels.front())});
    f.trees.push_back(t);
    return f;
  }
  f.trees.resize(static_cast<std::size_t>(p.trees));
  parallel_for(f.trees.size(), [&](std::size_t k) {
    Rng rng = make_stream(p.seed, k);
    auto rows = detail::weighted_bootstrap(data.weights, rng);
    f.trees[k] = detail::grow_cart(data.features, data.width(), data.labels, std::move(rows), p, rng);
  });
  return f;
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

struct GbdtParams {
  int max_rounds = 1000;
  int depth = 6;
  double learning_rate = 0.1;
  int early_stopping_rounds = 50;
  double l2 = 1.0;
  double min_child_hessian = 1e-3;
};

struct Gbdt {
  double base_logit = 0.0;
  double learning_rate = 0.1;
  std::vector<Tree> trees;  // leaf values are unshrunk Newton steps
  std::vector<double> train_logloss;  // after each round (weighted mean)
  std::vector<double> valid_logloss;
  int best_round = 0;  // number of trees kept

  double logit(std::span<const double> x) const {
    double z = base_logit;
    for (const auto& t : trees) z += learning_rate * t.predict(x);
    return z;
  }
  double predict(std::span<const double> x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }
};

namespace detail {

inline double logloss(std::span<const double> z, std::span<const int> y, std::span<const double> w) {
  double s = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // log(1 + e^z) - y z, stable for both signs.
    const double sp = z[i] > 0 ? z[i] + std::log1p(std::exp(-z[i])) : std::log1p(std::exp(z[i]));
    s += w[i] * (sp - y[i] * z[i]);
    sw += w[i];
  }
  return s / sw;
}

/// Level-wise exact greedy tree on presorted features. One pass per feature per level
/// finds the best split of every open node.
inline Tree grow_newton_tree(const std::vector<double>& X, std::size_t d,
                             const std::vector<std::vector<std::uint32_t>>& order, std::span<const double> g,
                             std::span<const double> h, const GbdtParams& p) {
  const std::size_t N = g.size();
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<int> node_of(N, 0);
  std::vector<int> open{0};
  for (int level = 0; level <= p.depth && !open.empty(); ++level) {
    const std::size_t K = open.size();
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < K; ++k) slot[open[k]] = static_cast<int>(k);
    std::vector<double> G(K, 0.0), H(K, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const int nd = node_of[i];
      if (nd < 0 || slot[nd] < 0) continue;
      G[slot[nd]] += g[i];
      H[slot[nd]] += h[i];
    }
    for (std::size_t k = 0; k < K; ++k) tree.nodes[open[k]].value = -G[k] / (H[k] + p.l2);
    if (level == p.depth) break;

    std::vector<double> best_gain(K, 1e-12), best_thr(K, 0.0);
    std::vector<int> best_f(K, -1);
    std::vector<double> gl(K), hl(K), last(K);
    std::vector<char> seen(K);
    for (std::size_t f = 0; f < d; ++f) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (std::uint32_t i : order[f]) {
        const int nd = node_of[i];
        if (nd < 0) continue;
        const int k = slot[nd];
        if (k < 0) continue;
        const double v = X[i * d + f];
        if (seen[k] && v > last[k] && hl[k] >= p.min_child_hessian && H[k] - hl[k] >= p.min_child_hessian) {
          const double gr = G[k] - gl[k], hr = H[k] - hl[k];
          const double gain =
              gl[k] * gl[k] / (hl[k] + p.l2) + gr * gr / (hr + p.l2) - G[k] * G[k] / (H[k] + p.l2);
          if (gain > best_gain[k]) {
            best_gain[k] = gain;
            best_f[k] = static_cast<int>(f);
            double thr = 0.5 * (last[k] + v);
            if (!(thr < v)) thr = last[k];
            best_thr[k] = thr;
          }
        }
        gl[k] += g[i];
        hl[k] += h[i];
        last[k] = v;
        seen[k] = 1;
      }
    }
    std::vector<int> next;
    for (std::size_t k = 0; k < K; ++k) {
      if (best_f[k] < 0) continue;
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& nd = tree.nodes[open[k]];
      nd.feature = best_f[k];
      nd.threshold = best_thr[k];
      nd.left = l;
      nd.right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    for (std::size_t i = 0; i < N; ++i) {
      const int nd = node_of[i];
      if (nd < 0) continue;
      const auto& node = tree.nodes[nd];
      if (slot[nd] < 0 || node.feature < 0) {
        node_of[i] = -1;  // settled in a leaf
        continue;
      }
      node_of[i] = X[i * d + node.feature] <= node.threshold ? node.left : node.right;
    }
    open = std::move(next);
  }
  return tree;
}

inline std::vector<std::vector<std::uint32_t>> presort(const std::vector<double>& X, std::size_t N, std::size_t d) {
  std::vector<std::vector<std::uint32_t>> order(d, std::vector<std::uint32_t>(N));
  parallel_for(d, [&](std::size_t f) {
    auto& o = order[f];
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return X[a * d + f] < X[b * d + f]; });
  });
  return order;
}

}  // namespace detail

/// Boosting with gradients/hessians scaled by sample weights. With a validation set,
/// stops after `early_stopping_rounds` rounds without a validation logloss improvement
/// and keeps the best prefix of trees.
inline Gbdt fit_gbdt(const Dataset& train, const GbdtParams& p, const Dataset* valid = nullptr) {
  train.validate();
  if (train.size() == 0) throw NumericError("fit_gbdt: empty training set");
  const std::size_t N = train.size(), d = train.width();
  Gbdt model;
  model.learning_rate = p.learning_rate;
  double sw = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    sw += train.weights[i];
    sy += train.weights[i] * train.labels[i];
  }
  if (!train.has_both_classes()) {
    log::warn("fit_gbdt: single-class training data, fitting a constant predictor");
    model.base_logit = train.labels.front() == 1 ? std::numeric_limits<double>::infinity()
                                                 : -std::numeric_limits<double>::infinity();
    model.best_round = 0;
    model.train_logloss.push_back(0.0);
    return model;
  }
  const double prior = sy / sw;
  model.base_logit = std::log(prior / (1.0 - prior));

  const auto order = detail::presort(train.features, N, d);
  std::vector<double> z(N, model.base_logit), g(N), h(N);
  std::vector<double> zv;
  if (valid) zv.assign(valid->size(), model.base_logit);
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int round = 0; round < p.max_rounds; ++round) {
    for (std::size_t i = 0; i < N; ++i) {
      const double prob = 1.0 / (1.0 + std::exp(-z[i]));
      g[i] = train.weights[i] * (prob - train.labels[i]);
      h[i] = train.weights[i] * std::max(prob * (1.0 - prob), 1e-16);
    }
    model.trees.push_back(detail::grow_newton_tree(train.features, d, order, g, h, p));
    const Tree& tree = model.trees.back();
    for (std::size_t i = 0; i < N; ++i) z[i] += p.learning_rate * tree.predict(train.sample(i));
    model.train_logloss.push_back(detail::logloss(z, train.labels, train.weights));
    if (valid && valid->size() > 0) {
      for (std::size_t i = 0; i < valid->size(); ++i) zv[i] += p.learning_rate * tree.predict(valid->sample(i));
      const double vl = detail::logloss(zv, valid->labels, valid->weights);
      model.valid_logloss.push_back(vl);
      if (vl < best_valid) {
        best_valid = vl;
        model.best_round = round + 1;
        since_best = 0;
      } else if (++since_best >= p.early_stopping_rounds) {
        break;
      }
    } else {
      model.best_round = round + 1;
    }
  }
  model.trees.resize(static_cast<std::size_t>(model.best_round));
  return model;
}

}  // namespace irrig
