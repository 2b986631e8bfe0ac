// Copyright (c) 2026 The gmmresnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Diagonal-covariance GMMs trained by binary splitting + EM. Every split is
// recorded in a lineage tree so that components descending from the same
// ancestor can later be grouped together.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gmmresnet/binary_io.hpp"
#include "gmmresnet/errors.hpp"
#include "gmmresnet/lfcc.hpp"

namespace gmmresnet {

inline bool is_power_of_two(long long v) { return v > 0 && (v & (v - 1)) == 0; }

struct LineageNode {
  int id = 0;
  int parent = -1;
  std::array<int, 2> children{-1, -1};
  int component = -1;  // leaves only

  bool is_leaf() const { return children[0] < 0; }
  bool operator==(const LineageNode&) const = default;
};

// Binary split tree. nodes[0] is the root; node ids equal their index.
class Lineage {
 public:
  static Lineage single_component() {
    Lineage l;
    l.nodes_.push_back(LineageNode{0, -1, {-1, -1}, 0});
    return l;
  }

  static Lineage from_nodes(std::vector<LineageNode> nodes) {
    Lineage l;
    l.nodes_ = std::move(nodes);
    return l;
  }

  const std::vector<LineageNode>& nodes() const { return nodes_; }
  std::vector<LineageNode>& mutable_nodes() { return nodes_; }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(
        nodes_.begin(), nodes_.end(),
        [](const LineageNode& n) { return n.is_leaf(); }));
  }

  // Every leaf gains two children. Leaf for component c spawns components
  // 2c and 2c+1, which keeps left-to-right leaf order equal to index order.
  void split_all_leaves() {
    const std::size_t existing = nodes_.size();
    for (std::size_t i = 0; i < existing; ++i) {
      if (!nodes_[i].is_leaf()) continue;
      const int c = nodes_[i].component;
      for (int side = 0; side < 2; ++side) {
        LineageNode child;
        child.id = static_cast<int>(nodes_.size());
        child.parent = static_cast<int>(i);
        child.component = 2 * c + side;
        nodes_[i].children[side] = child.id;
        nodes_.push_back(child);
      }
      nodes_[i].component = -1;
    }
  }

  // Nodes at the given depth, left to right.
  std::vector<int> level(int depth) const {
    std::vector<int> current{0};
    for (int d = 0; d < depth; ++d) {
      std::vector<int> next;
      for (int id : current) {
        const auto& n = nodes_[id];
        if (n.is_leaf()) return {};
        next.push_back(n.children[0]);
        next.push_back(n.children[1]);
      }
      current = std::move(next);
    }
    return current;
  }

  // Component indices of all leaves below a node, left to right.
  std::vector<int> leaves_under(int node_id) const {
    std::vector<int> out;
    std::vector<int> stack{node_id};
    while (!stack.empty()) {
      const auto& n = nodes_[stack.back()];
      stack.pop_back();
      if (n.is_leaf()) {
        out.push_back(n.component);
      } else {
        stack.push_back(n.children[1]);
        stack.push_back(n.children[0]);
      }
    }
    return out;
  }

  // Structural check: ids, parent/child links, exactly `components` leaves
  // covering 0..components-1 once.
  void validate(int components) const {
    if (nodes_.empty()) throw FormatError("lineage: no nodes");
    if (nodes_[0].parent != -1) throw FormatError("lineage: root has a parent");
    std::vector<int> seen(static_cast<std::size_t>(components), 0);
    const auto count = static_cast<int>(nodes_.size());
    for (int i = 0; i < count; ++i) {
      const auto& n = nodes_[i];
      if (n.id != i) throw FormatError("lineage: node id mismatch");
      if (n.is_leaf()) {
        if (n.children[1] >= 0) throw FormatError("lineage: half-split node");
        if (n.component < 0 || n.component >= components ||
            seen[n.component]++) {
          throw FormatError("lineage: bad leaf component index");
        }
      } else {
        for (int c : n.children) {
          if (c <= 0 || c >= count || nodes_[c].parent != i) {
            throw FormatError("lineage: inconsistent child link");
          }
        }
        if (n.component != -1) throw FormatError("lineage: internal component");
      }
    }
    if (leaf_count() != static_cast<std::size_t>(components)) {
      throw FormatError("lineage: leaf count does not match order");
    }
  }

  bool operator==(const Lineage&) const = default;

 private:
  std::vector<LineageNode> nodes_;
};

struct Gmm {
  Vector weights;   // K
  Matrix means;     // K x D
  Matrix variances; // K x D, diagonal covariances
  Lineage lineage = Lineage::single_component();

  int order() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  bool operator==(const Gmm& o) const {
    return weights.size() == o.weights.size() && means.rows() == o.means.rows() &&
           means.cols() == o.means.cols() && weights == o.weights &&
           means == o.means && variances == o.variances && lineage == o.lineage;
  }
};

struct EmConfig {
  int n_iterations = 30;
  // Per-dimension floor = ratio * global data variance of that dimension.
  double variance_floor_ratio = 1e-3;
  double split_epsilon = 0.1;

  void validate() const {
    if (n_iterations < 1) throw ConfigError("em: n_iterations must be >= 1");
    if (!(variance_floor_ratio > 0)) {
      throw ConfigError("em: variance_floor_ratio must be positive");
    }
    if (!(split_epsilon > 0)) throw ConfigError("em: split_epsilon must be positive");
  }
};

namespace detail {

inline Vector variance_floor(const Matrix& data, double ratio) {
  const Vector mean = data.colwise().mean().transpose();
  Vector var = (data.rowwise() - mean.transpose())
                   .array()
                   .square()
                   .colwise()
                   .mean()
                   .transpose();
  for (Eigen::Index d = 0; d < var.size(); ++d) {
    var[d] = ratio * std::max(var[d], 1e-12);
  }
  return var;
}

// N x K matrix of log w_k + log N(x_n; mu_k, Sigma_k).
inline Matrix weighted_log_densities(const Gmm& g, const Matrix& data) {
  const Matrix precision = g.variances.cwiseInverse();
  const Matrix mean_prec = g.means.cwiseProduct(precision);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  Vector constant(g.order());
  for (int k = 0; k < g.order(); ++k) {
    constant[k] = std::log(g.weights[k]) -
                  0.5 * (g.variances.row(k).array().log().sum() +
                         g.dim() * log_2pi +
                         g.means.row(k).dot(mean_prec.row(k)));
  }
  Matrix lp = -0.5 * data.array().square().matrix() * precision.transpose();
  lp.noalias() += data * mean_prec.transpose();
  lp.rowwise() += constant.transpose();
  return lp;
}

// Row-wise log-sum-exp.
inline Vector log_sum_exp_rows(const Matrix& lp) {
  Vector out(lp.rows());
  for (Eigen::Index n = 0; n < lp.rows(); ++n) {
    const double mx = lp.row(n).maxCoeff();
    out[n] = mx + std::log((lp.row(n).array() - mx).exp().sum());
  }
  return out;
}

inline void check_data(const Gmm& g, const Matrix& data) {
  if (data.cols() != g.dim()) {
    throw ShapeError("gmm: data dimension " + std::to_string(data.cols()) +
                     " != model dimension " + std::to_string(g.dim()));
  }
  if (!data.allFinite()) throw Error("gmm: data contains non-finite values");
}

}  // namespace detail

// Sum over frames of log p(x_n) under the mixture.
inline double total_log_likelihood(const Gmm& g, const Matrix& data) {
  detail::check_data(g, data);
  return detail::log_sum_exp_rows(detail::weighted_log_densities(g, data)).sum();
}

// Runs cfg.n_iterations EM iterations. When `trace` is given it receives the
// data log-likelihood before every M-step followed by the final value.
inline Gmm em_fit(Gmm gmm, const Matrix& data, const EmConfig& cfg,
                  std::vector<double>* trace = nullptr) {
  cfg.validate();
  detail::check_data(gmm, data);
  const Eigen::Index n = data.rows();
  const int k_count = gmm.order();
  if (n < k_count) {
    throw Error("em_fit: need at least as many frames (" + std::to_string(n) +
                ") as components (" + std::to_string(k_count) + ")");
  }
  const Vector floor = detail::variance_floor(data, cfg.variance_floor_ratio);
  const Vector global_var = floor / cfg.variance_floor_ratio;
  for (int k = 0; k < k_count; ++k) {
    gmm.variances.row(k) = gmm.variances.row(k).cwiseMax(floor.transpose());
  }
  const Matrix data_sq = data.array().square().matrix();
  if (trace) trace->clear();

  for (int iter = 0; iter < cfg.n_iterations; ++iter) {
    Matrix resp = detail::weighted_log_densities(gmm, data);
    const Vector frame_ll = detail::log_sum_exp_rows(resp);
    if (trace) trace->push_back(frame_ll.sum());
    resp = (resp.colwise() - frame_ll).array().exp().matrix();

    const Vector occupancy = resp.colwise().sum().transpose();
    const Matrix first = resp.transpose() * data;
    const Matrix second = resp.transpose() * data_sq;

    // Frames ranked by how badly the current model explains them; used to
    // reseed components that attracted no responsibility.
    std::vector<Eigen::Index> worst;
    int reseeded = 0;
    for (int k = 0; k < k_count; ++k) {
      if (occupancy[k] > 1e-10) {
        gmm.weights[k] = occupancy[k] / static_cast<double>(n);
        gmm.means.row(k) = first.row(k) / occupancy[k];
        gmm.variances.row(k) =
            (second.row(k) / occupancy[k] -
             gmm.means.row(k).cwiseAbs2())
                .cwiseMax(floor.transpose());
        continue;
      }
      if (worst.empty()) {
        worst.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) worst[i] = i;
        std::stable_sort(worst.begin(), worst.end(),
                         [&](Eigen::Index a, Eigen::Index b) {
                           return frame_ll[a] < frame_ll[b];
                         });
      }
      const Eigen::Index seed = worst[static_cast<std::size_t>(reseeded++) % n];
      gmm.weights[k] = 1.0 / static_cast<double>(n);
      gmm.means.row(k) = data.row(seed);
      gmm.variances.row(k) = global_var.transpose().cwiseMax(floor.transpose());
    }
    gmm.weights /= gmm.weights.sum();
  }
  if (trace) trace->push_back(total_log_likelihood(gmm, data));
  return gmm;
}

// Doubles the order: each component becomes mu -/+ eps * sigma with half the
// weight and the same variances. Child 2c takes the minus side.
inline Gmm binary_split(const Gmm& gmm, const EmConfig& cfg) {
  cfg.validate();
  const int k_count = gmm.order();
  Gmm out;
  out.weights.resize(2 * k_count);
  out.means.resize(2 * k_count, gmm.dim());
  out.variances.resize(2 * k_count, gmm.dim());
  for (int k = 0; k < k_count; ++k) {
    const auto offset =
        (cfg.split_epsilon * gmm.variances.row(k).array().sqrt()).matrix();
    out.means.row(2 * k) = gmm.means.row(k) - offset;
    out.means.row(2 * k + 1) = gmm.means.row(k) + offset;
    out.weights[2 * k] = out.weights[2 * k + 1] = 0.5 * gmm.weights[k];
    out.variances.row(2 * k) = gmm.variances.row(k);
    out.variances.row(2 * k + 1) = gmm.variances.row(k);
  }
  out.lineage = gmm.lineage;
  out.lineage.split_all_leaves();
  return out;
}

// Returns the models of order 1, 2, 4, ..., target_order from one run.
inline std::vector<Gmm> train_by_splitting(const Matrix& data,
                                           int target_order,
                                           const EmConfig& cfg) {
  if (!is_power_of_two(target_order)) {
    throw ConfigError("train_by_splitting: target order must be a power of 2");
  }
  if (data.rows() == 0) throw Error("train_by_splitting: no training frames");
  Gmm g;
  g.weights = Vector::Ones(1);
  g.means = Matrix::Zero(1, data.cols());
  g.variances = Matrix::Ones(1, data.cols());
  std::vector<Gmm> models;
  models.push_back(em_fit(std::move(g), data, cfg));
  while (models.back().order() < target_order) {
    models.push_back(em_fit(binary_split(models.back(), cfg), data, cfg));
  }
  return models;
}

// y_i(x) = -1/2 x' S_i^-1 x + x' S_i^-1 mu_i for every frame; T x K.
inline Matrix lgp_raw(const Gmm& gmm, const Matrix& frames) {
  if (frames.cols() != gmm.dim()) {
    throw ShapeError("lgp_transform: feature dimension " +
                     std::to_string(frames.cols()) + " != GMM dimension " +
                     std::to_string(gmm.dim()));
  }
  const Matrix precision = gmm.variances.cwiseInverse();
  Matrix y = -0.5 * frames.array().square().matrix() * precision.transpose();
  y.noalias() += frames * gmm.means.cwiseProduct(precision).transpose();
  return y;
}

// Per-column zero mean / unit variance over time. Constant columns become 0.
inline void normalize_columns(Matrix& m) {
  const auto t_count = static_cast<double>(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    auto col = m.col(c);
    const double mean = col.sum() / t_count;
    col.array() -= mean;
    const double var = col.squaredNorm() / t_count;
    if (var <= 1e-24 * std::max(1.0, mean * mean)) {
      col.setZero();
    } else {
      col /= std::sqrt(var);
    }
  }
}

inline FeatureMatrix lgp_transform(const Gmm& gmm, const FeatureMatrix& feat) {
  FeatureMatrix out;
  out.kind = FeatureKind::kLgp;
  out.values = lgp_raw(gmm, feat.values);
  normalize_columns(out.values);
  return out;
}

// Binary layout of one model record (after any file header):
//   u64 D, u64 K, K weights, K*D means, K*D variances (row-major doubles),
//   u64 node count, then per node i32 parent, i32 child0, i32 child1,
//   i32 component.
inline void write_gmm_record(io::BinaryWriter& w, const Gmm& g) {
  w.put(static_cast<std::uint64_t>(g.dim()));
  w.put(static_cast<std::uint64_t>(g.order()));
  w.put_array(g.weights.data(), static_cast<std::size_t>(g.weights.size()));
  w.put_array(g.means.data(), static_cast<std::size_t>(g.means.size()));
  w.put_array(g.variances.data(), static_cast<std::size_t>(g.variances.size()));
  const auto& nodes = g.lineage.nodes();
  w.put(static_cast<std::uint64_t>(nodes.size()));
  for (const auto& n : nodes) {
    w.put(static_cast<std::int32_t>(n.parent));
    w.put(static_cast<std::int32_t>(n.children[0]));
    w.put(static_cast<std::int32_t>(n.children[1]));
    w.put(static_cast<std::int32_t>(n.component));
  }
}

inline Gmm read_gmm_record(io::BinaryReader& r) {
  Gmm g;
  const auto dim = static_cast<Eigen::Index>(r.get_count(1u << 16));
  const auto order = static_cast<Eigen::Index>(r.get_count(1u << 20));
  if (dim == 0 || !is_power_of_two(order)) {
    throw FormatError("gmm record: bad dimension or order");
  }
  g.weights.resize(order);
  g.means.resize(order, dim);
  g.variances.resize(order, dim);
  r.get_array(g.weights.data(), static_cast<std::size_t>(order));
  r.get_array(g.means.data(), static_cast<std::size_t>(order * dim));
  r.get_array(g.variances.data(), static_cast<std::size_t>(order * dim));
  const auto count = r.get_count(1u << 22);
  std::vector<LineageNode> nodes(count);
  for (std::size_t i = 0; i < count; ++i) {
    nodes[i].id = static_cast<int>(i);
    nodes[i].parent = r.get<std::int32_t>();
    nodes[i].children[0] = r.get<std::int32_t>();
    nodes[i].children[1] = r.get<std::int32_t>();
    nodes[i].component = r.get<std::int32_t>();
  }
  g.lineage = Lineage::from_nodes(std::move(nodes));
  g.lineage.validate(static_cast<int>(order));
  if (std::abs(g.weights.sum() - 1.0) > 1e-9 || (g.variances.array() <= 0).any()) {
    throw FormatError("gmm record: invalid weights or variances");
  }
  return g;
}

inline constexpr std::string_view kGmmMagic = "GRN2GMM_";
inline constexpr std::uint32_t kGmmVersion = 1;

inline void save_gmm(const std::filesystem::path& path, const Gmm& g) {
  io::BinaryWriter w(path.string());
  w.put_magic(kGmmMagic, kGmmVersion);
  write_gmm_record(w, g);
  w.close();
}

inline Gmm load_gmm(const std::filesystem::path& path) {
  io::BinaryReader r(path.string());
  r.expect_magic(kGmmMagic, kGmmVersion);
  Gmm g = read_gmm_record(r);
  r.expect_end();
  return g;
}

}  // namespace gmmresnet
