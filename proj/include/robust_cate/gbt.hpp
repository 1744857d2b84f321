#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "robust_cate/losses.hpp"
#include "robust_cate/numeric.hpp"

namespace robust_cate {

/// Boosted-tree hyperparameters. The loss drives the per-round
/// pseudo-residuals: g_i = psi_loss(y_i - F_i), first-order updates.
struct GbtParams {
  int n_trees = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  int min_samples_leaf = 40;
  LossKind loss = LossKind::squared_error();
  std::uint64_t seed = 0;
  int max_bins = 256;

  void validate() const {
    if (n_trees < 1) throw std::invalid_argument("gbt: n_trees must be >= 1");
    if (max_depth < 1) throw std::invalid_argument("gbt: max_depth must be >= 1");
    if (!(learning_rate > 0.0) || learning_rate > 1.0) {
      throw std::invalid_argument("gbt: learning_rate outside (0,1]");
    }
    if (min_samples_leaf < 1) {
      throw std::invalid_argument("gbt: min_samples_leaf must be >= 1");
    }
    if (max_bins < 2) throw std::invalid_argument("gbt: max_bins must be >= 2");
  }
};

namespace gbt_detail {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int idx = 0;
    while (nodes[idx].feature >= 0) {
      idx = x[nodes[idx].feature] <= nodes[idx].threshold ? nodes[idx].left
                                                          : nodes[idx].right;
    }
    return nodes[idx].value;
  }
};

/// Quantile bin edges per feature; bin b covers (edges[b-1], edges[b]].
struct BinnedMatrix {
  std::vector<std::vector<double>> edges;              // per feature, ascending
  Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> bins;

  static BinnedMatrix build(const Eigen::MatrixXd& x, int max_bins) {
    BinnedMatrix out;
    const Eigen::Index n = x.rows(), d = x.cols();
    out.edges.resize(d);
    out.bins.resize(n, d);
    std::vector<double> col(n);
    for (Eigen::Index f = 0; f < d; ++f) {
      for (Eigen::Index i = 0; i < n; ++i) col[i] = x(i, f);
      std::sort(col.begin(), col.end());
      auto& e = out.edges[f];
      for (int k = 1; k < max_bins; ++k) {
        const auto pos = static_cast<Eigen::Index>(
            static_cast<double>(k) * n / max_bins);
        if (pos >= n) break;
        const double v = col[pos];
        if (e.empty() || v > e.back()) e.push_back(v);
      }
      // Drop a top edge equal to the max so the last bin is non-empty.
      while (!e.empty() && e.back() >= col[n - 1]) e.pop_back();
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto it = std::upper_bound(e.begin(), e.end(), x(i, f));
        out.bins(i, f) = static_cast<std::uint16_t>(it - e.begin());
      }
    }
    return out;
  }

  int bin_count(Eigen::Index f) const {
    return static_cast<int>(edges[f].size()) + 1;
  }
};

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;  // left = bins <= bin
};

/// Grows one least-squares regression tree on the gradient vector.
/// `hessians` is optional curvature for Newton-style leaf values; with a
/// null pointer leaves are weighted gradient means (unit curvature).
class TreeBuilder {
 public:
  TreeBuilder(const BinnedMatrix& binned, const Eigen::MatrixXd& x,
              const GbtParams& params, const std::vector<double>& weights)
      : binned_(binned), x_(x), params_(params), weights_(weights) {}

  Tree grow(const std::vector<double>& gradients,
            const std::vector<double>* hessians, double leaf_clip) {
    gradients_ = &gradients;
    hessians_ = hessians;
    leaf_clip_ = leaf_clip;
    Tree tree;
    std::vector<int> all(x_.rows());
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[i] = i;
    build_node(tree, std::move(all), 0);
    return tree;
  }

 private:
  int build_node(Tree& tree, std::vector<int> samples, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const SplitChoice split =
        depth < params_.max_depth ? find_split(samples) : SplitChoice{};
    if (split.feature < 0) {
      tree.nodes[node_id].value = leaf_value(samples);
      return node_id;
    }
    std::vector<int> left, right;
    left.reserve(samples.size());
    right.reserve(samples.size());
    for (int i : samples) {
      (binned_.bins(i, split.feature) <= split.bin ? left : right).push_back(i);
    }
    tree.nodes[node_id].feature = split.feature;
    tree.nodes[node_id].threshold = binned_.edges[split.feature][split.bin];
    samples.clear();
    samples.shrink_to_fit();
    const int left_id = build_node(tree, std::move(left), depth + 1);
    const int right_id = build_node(tree, std::move(right), depth + 1);
    tree.nodes[node_id].left = left_id;
    tree.nodes[node_id].right = right_id;
    return node_id;
  }

  SplitChoice find_split(const std::vector<int>& samples) const {
    SplitChoice best;
    if (static_cast<int>(samples.size()) < 2 * params_.min_samples_leaf) {
      return best;
    }
    const Eigen::Index d = x_.cols();
    double total_g = 0.0, total_w = 0.0;
    for (int i : samples) {
      total_g += weights_[i] * (*gradients_)[i];
      total_w += curvature(i);
    }
    if (total_w <= 0.0) return best;
    const double parent_score = total_g * total_g / total_w;

    std::vector<double> hist_g, hist_w;
    std::vector<int> hist_n;
    for (Eigen::Index f = 0; f < d; ++f) {
      const int bins = binned_.bin_count(f);
      if (bins < 2) continue;
      hist_g.assign(bins, 0.0);
      hist_w.assign(bins, 0.0);
      hist_n.assign(bins, 0);
      for (int i : samples) {
        const int b = binned_.bins(i, f);
        hist_g[b] += weights_[i] * (*gradients_)[i];
        hist_w[b] += curvature(i);
        hist_n[b] += 1;
      }
      double left_g = 0.0, left_w = 0.0;
      int left_n = 0;
      for (int b = 0; b + 1 < bins; ++b) {
        left_g += hist_g[b];
        left_w += hist_w[b];
        left_n += hist_n[b];
        const int right_n = static_cast<int>(samples.size()) - left_n;
        if (left_n < params_.min_samples_leaf) continue;
        if (right_n < params_.min_samples_leaf) break;
        const double right_g = total_g - left_g;
        const double right_w = total_w - left_w;
        if (left_w <= 0.0 || right_w <= 0.0) continue;
        const double gain = left_g * left_g / left_w +
                            right_g * right_g / right_w - parent_score;
        if (gain > best.gain + 1e-12) {
          best.gain = gain;
          best.feature = static_cast<int>(f);
          best.bin = b;
        }
      }
    }
    return best;
  }

  double leaf_value(const std::vector<int>& samples) const {
    double sum_g = 0.0, sum_w = 0.0;
    for (int i : samples) {
      sum_g += weights_[i] * (*gradients_)[i];
      sum_w += curvature(i);
    }
    if (sum_w <= 0.0) return 0.0;
    return std::clamp(sum_g / sum_w, -leaf_clip_, leaf_clip_);
  }

  double curvature(int i) const {
    return hessians_ ? weights_[i] * (*hessians_)[i] : weights_[i];
  }

  const BinnedMatrix& binned_;
  const Eigen::MatrixXd& x_;
  const GbtParams& params_;
  const std::vector<double>& weights_;
  const std::vector<double>* gradients_ = nullptr;
  const std::vector<double>* hessians_ = nullptr;
  double leaf_clip_ = 1e30;
};

inline std::vector<double> resolve_weights(
    Eigen::Index n, const std::optional<Eigen::VectorXd>& sample_weights) {
  if (!sample_weights) return std::vector<double>(n, 1.0);
  if (sample_weights->size() != n) {
    throw std::invalid_argument("gbt: sample_weights size mismatch");
  }
  std::vector<double> weights(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = (*sample_weights)[i];
    if (!(wi >= 0.0) || !std::isfinite(wi)) {
      throw std::invalid_argument("gbt: weights must be finite and >= 0");
    }
    weights[i] = wi;
  }
  return weights;
}

}  // namespace gbt_detail

/// Additive regression ensemble: F(x) = base + sum_t lr * tree_t(x).
class GbtModel {
 public:
  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double f = base_score_;
    for (const auto& tree : trees_) f += learning_rate_ * tree.predict(x);
    return f;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_one(x.row(i));
    return out;
  }

  double base_score() const { return base_score_; }
  const GbtParams& params() const { return params_; }

 private:
  friend GbtModel fit_gbt(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                          const GbtParams&,
                          const std::optional<Eigen::VectorXd>&);
  double base_score_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<gbt_detail::Tree> trees_;
  GbtParams params_;
};

inline GbtModel fit_gbt(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const GbtParams& params,
                        const std::optional<Eigen::VectorXd>& sample_weights =
                            std::nullopt) {
  params.validate();
  const Eigen::Index n = x.rows();
  if (n == 0) throw std::invalid_argument("gbt: empty data");
  if (y.size() != n) throw std::invalid_argument("gbt: X/y size mismatch");
  if (n < 2 * params.min_samples_leaf) {
    throw std::invalid_argument("gbt: fewer rows than 2*min_samples_leaf");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw std::invalid_argument("gbt: non-finite target");
  }
  const auto weights = gbt_detail::resolve_weights(n, sample_weights);

  GbtModel model;
  model.params_ = params;
  model.learning_rate_ = params.learning_rate;
  std::vector<double> yv(y.data(), y.data() + n);
  model.base_score_ = params.loss.family == LossFamily::SquaredError
                          ? weighted_mean(yv, weights)
                          : weighted_median(yv, weights);

  const auto binned = gbt_detail::BinnedMatrix::build(x, params.max_bins);
  gbt_detail::TreeBuilder builder(binned, x, params, weights);

  Eigen::VectorXd f = Eigen::VectorXd::Constant(n, model.base_score_);
  std::vector<double> gradients(n);
  for (int round = 0; round < params.n_trees; ++round) {
    for (Eigen::Index i = 0; i < n; ++i) {
      gradients[i] = evaluate_loss(params.loss, y[i] - f[i]).psi;
    }
    auto tree = builder.grow(gradients, nullptr, 1e30);
    for (Eigen::Index i = 0; i < n; ++i) {
      f[i] += params.learning_rate * tree.predict(x.row(i));
    }
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

/// Boosted logistic model for the propensity; predictions are clipped into
/// [clip_lo, clip_hi].
class PropensityModel {
 public:
  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double f = base_logit_;
    for (const auto& tree : trees_) f += learning_rate_ * tree.predict(x);
    const double p = 1.0 / (1.0 + std::exp(-f));
    return std::clamp(p, clip_lo_, clip_hi_);
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_one(x.row(i));
    return out;
  }

  double clip_lo() const { return clip_lo_; }
  double clip_hi() const { return clip_hi_; }

 private:
  friend PropensityModel fit_propensity(const Eigen::MatrixXd&,
                                        const Eigen::VectorXi&,
                                        const GbtParams&, double, double,
                                        const std::optional<Eigen::VectorXd>&);
  double base_logit_ = 0.0;
  double learning_rate_ = 0.1;
  double clip_lo_ = 0.01;
  double clip_hi_ = 0.99;
  std::vector<gbt_detail::Tree> trees_;
};

inline PropensityModel fit_propensity(
    const Eigen::MatrixXd& x, const Eigen::VectorXi& w,
    const GbtParams& params, double clip_lo = 0.01, double clip_hi = 0.99,
    const std::optional<Eigen::VectorXd>& sample_weights = std::nullopt) {
  params.validate();
  const Eigen::Index n = x.rows();
  if (n == 0 || w.size() != n) throw std::invalid_argument("propensity: bad shapes");
  if (!(clip_lo > 0.0) || !(clip_hi < 1.0) || clip_lo >= clip_hi) {
    throw std::invalid_argument("propensity: bad clip bounds");
  }
  Eigen::Index treated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] != 0 && w[i] != 1) {
      throw std::invalid_argument("propensity: treatment must be 0/1");
    }
    treated += w[i];
  }
  if (treated == 0 || treated == n) {
    throw std::invalid_argument("propensity: single-class input");
  }
  const auto weights = gbt_detail::resolve_weights(n, sample_weights);

  PropensityModel model;
  model.learning_rate_ = params.learning_rate;
  model.clip_lo_ = clip_lo;
  model.clip_hi_ = clip_hi;
  const double p_bar =
      std::clamp(static_cast<double>(treated) / n, 1e-6, 1.0 - 1e-6);
  model.base_logit_ = std::log(p_bar / (1.0 - p_bar));

  const auto binned = gbt_detail::BinnedMatrix::build(x, params.max_bins);
  gbt_detail::TreeBuilder builder(binned, x, params, weights);

  Eigen::VectorXd f = Eigen::VectorXd::Constant(n, model.base_logit_);
  std::vector<double> gradients(n), hessians(n);
  for (int round = 0; round < params.n_trees; ++round) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-f[i]));
      gradients[i] = static_cast<double>(w[i]) - p;
      hessians[i] = std::max(p * (1.0 - p), 1e-12);
    }
    auto tree = builder.grow(gradients, &hessians, 4.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      f[i] += params.learning_rate * tree.predict(x.row(i));
    }
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

}  // namespace robust_cate
