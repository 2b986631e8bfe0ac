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

// Multi-order LGP features and their partition into G groups.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gmmresnet/binary_io.hpp"
#include "gmmresnet/errors.hpp"
#include "gmmresnet/gmm.hpp"
#include "gmmresnet/lfcc.hpp"

namespace gmmresnet {

struct GmmBank {
  std::vector<Gmm> gmms;  // strictly increasing orders

  std::vector<int> orders() const {
    std::vector<int> o;
    for (const auto& g : gmms) o.push_back(g.order());
    return o;
  }
  int total_dim() const {
    int total = 0;
    for (const auto& g : gmms) total += g.order();
    return total;
  }
  int feature_dim() const { return gmms.empty() ? 0 : gmms.front().dim(); }

  void validate() const {
    if (gmms.empty()) throw ShapeError("gmm bank is empty");
    for (std::size_t i = 1; i < gmms.size(); ++i) {
      if (gmms[i].order() <= gmms[i - 1].order()) {
        throw ShapeError("gmm bank orders must be strictly increasing");
      }
      if (gmms[i].dim() != gmms[0].dim()) {
        throw ShapeError("gmm bank models disagree on feature dimension");
      }
    }
  }
};

// Picks the requested orders out of a splitting run.
inline GmmBank select_orders(const std::vector<Gmm>& models,
                             const std::vector<int>& orders) {
  GmmBank bank;
  for (int order : orders) {
    auto it = std::find_if(models.begin(), models.end(),
                           [&](const Gmm& g) { return g.order() == order; });
    if (it == models.end()) {
      throw ConfigError("no trained GMM of order " + std::to_string(order));
    }
    bank.gmms.push_back(*it);
  }
  bank.validate();
  return bank;
}

inline constexpr std::string_view kBankMagic = "GRN2BANK";
inline constexpr std::uint32_t kBankVersion = 1;

// u64 model count followed by one GMM record per order.
inline void save_bank(const std::filesystem::path& path, const GmmBank& bank) {
  bank.validate();
  io::BinaryWriter w(path.string());
  w.put_magic(kBankMagic, kBankVersion);
  w.put(static_cast<std::uint64_t>(bank.gmms.size()));
  for (const auto& g : bank.gmms) write_gmm_record(w, g);
  w.close();
}

inline GmmBank load_bank(const std::filesystem::path& path) {
  io::BinaryReader r(path.string());
  r.expect_magic(kBankMagic, kBankVersion);
  GmmBank bank;
  const auto count = r.get_count(64);
  for (std::uint64_t i = 0; i < count; ++i) bank.gmms.push_back(read_gmm_record(r));
  r.expect_end();
  bank.validate();
  return bank;
}

// Concatenates the normalized LGP blocks of every order (ascending).
inline FeatureMatrix extract_multiscale_lgp(const GmmBank& bank,
                                            const FeatureMatrix& lfcc) {
  bank.validate();
  if (lfcc.dims() != bank.feature_dim()) {
    throw ShapeError("extract_multiscale_lgp: LFCC dimension " +
                     std::to_string(lfcc.dims()) + " != bank dimension " +
                     std::to_string(bank.feature_dim()));
  }
  FeatureMatrix out;
  out.kind = FeatureKind::kLgp;
  out.values.resize(lfcc.frames(), bank.total_dim());
  Eigen::Index offset = 0;
  for (const auto& g : bank.gmms) {
    out.values.middleCols(offset, g.order()) = lgp_transform(g, lfcc).values;
    offset += g.order();
  }
  return out;
}

struct GroupAssignment {
  int n_groups = 1;
  std::vector<int> orders;
  std::vector<std::vector<int>> group_of;  // per order: component -> group

  int total_dim() const {
    return std::accumulate(orders.begin(), orders.end(), 0);
  }
  bool operator==(const GroupAssignment&) const = default;

  void validate() const {
    if (!is_power_of_two(n_groups)) {
      throw ConfigError("group count must be a power of 2");
    }
    if (orders.size() != group_of.size()) {
      throw ShapeError("group assignment: orders/maps size mismatch");
    }
    for (std::size_t o = 0; o < orders.size(); ++o) {
      if (static_cast<int>(group_of[o].size()) != orders[o]) {
        throw ShapeError("group assignment: map size != order");
      }
      std::vector<int> sizes(static_cast<std::size_t>(n_groups), 0);
      for (int g : group_of[o]) {
        if (g < 0 || g >= n_groups) throw ShapeError("group index out of range");
        ++sizes[g];
      }
      for (int s : sizes) {
        if (s != orders[o] / n_groups) {
          throw ShapeError("group assignment is not balanced");
        }
      }
    }
  }
};

namespace detail {

inline void check_group_count(const GmmBank& bank, int n_groups) {
  if (!is_power_of_two(n_groups)) {
    throw ConfigError("group count " + std::to_string(n_groups) +
                      " is not a power of 2");
  }
  bank.validate();
  for (const auto& g : bank.gmms) {
    if (g.order() < n_groups) {
      throw ConfigError("GMM order " + std::to_string(g.order()) +
                        " is smaller than group count " +
                        std::to_string(n_groups));
    }
  }
}

}  // namespace detail

// Components under the same node at depth log2(G) share a group; groups are
// numbered left to right across that level.
inline GroupAssignment lineage_grouping(const GmmBank& bank, int n_groups) {
  detail::check_group_count(bank, n_groups);
  GroupAssignment a;
  a.n_groups = n_groups;
  int depth = 0;
  while ((1 << depth) < n_groups) ++depth;
  for (const auto& g : bank.gmms) {
    const auto level = g.lineage.level(depth);
    if (static_cast<int>(level.size()) != n_groups) {
      throw ShapeError("lineage of order " + std::to_string(g.order()) +
                       " has no complete level with " +
                       std::to_string(n_groups) + " nodes");
    }
    std::vector<int> map(static_cast<std::size_t>(g.order()), -1);
    for (int group = 0; group < n_groups; ++group) {
      for (int c : g.lineage.leaves_under(level[group])) map[c] = group;
    }
    a.orders.push_back(g.order());
    a.group_of.push_back(std::move(map));
  }
  a.validate();
  return a;
}

// Balanced uniformly random partition of each order's components.
inline GroupAssignment random_grouping(const GmmBank& bank, int n_groups,
                                       std::uint64_t seed) {
  detail::check_group_count(bank, n_groups);
  std::mt19937_64 rng(seed);
  GroupAssignment a;
  a.n_groups = n_groups;
  for (const auto& g : bank.gmms) {
    std::vector<int> perm(static_cast<std::size_t>(g.order()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const int per_group = g.order() / n_groups;
    std::vector<int> map(perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j) {
      map[perm[j]] = static_cast<int>(j) / per_group;
    }
    a.orders.push_back(g.order());
    a.group_of.push_back(std::move(map));
  }
  return a;
}

// Column indices into the concatenated LGP feature for every group, ordered
// by ascending GMM order, then ascending component index.
inline std::vector<std::vector<int>> group_columns(const GroupAssignment& a) {
  a.validate();
  std::vector<std::vector<int>> cols(static_cast<std::size_t>(a.n_groups));
  int offset = 0;
  for (std::size_t o = 0; o < a.orders.size(); ++o) {
    for (int c = 0; c < a.orders[o]; ++c) {
      cols[a.group_of[o][c]].push_back(offset + c);
    }
    offset += a.orders[o];
  }
  return cols;
}

inline std::vector<FeatureMatrix> group_slices(const GroupAssignment& a,
                                               const FeatureMatrix& feat) {
  if (feat.dims() != a.total_dim()) {
    throw ShapeError("group_slices: feature dimension " +
                     std::to_string(feat.dims()) + " != assignment total " +
                     std::to_string(a.total_dim()));
  }
  const auto cols = group_columns(a);
  std::vector<FeatureMatrix> slices;
  slices.reserve(cols.size());
  for (const auto& idx : cols) {
    FeatureMatrix s;
    s.kind = FeatureKind::kLgpGroup;
    s.values.resize(feat.frames(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      s.values.col(static_cast<Eigen::Index>(j)) = feat.values.col(idx[j]);
    }
    slices.push_back(std::move(s));
  }
  return slices;
}

inline void write_assignment_record(io::BinaryWriter& w,
                                    const GroupAssignment& a) {
  w.put(static_cast<std::uint32_t>(a.n_groups));
  w.put(static_cast<std::uint64_t>(a.orders.size()));
  for (std::size_t o = 0; o < a.orders.size(); ++o) {
    w.put(static_cast<std::uint64_t>(a.orders[o]));
    for (int g : a.group_of[o]) w.put(static_cast<std::int32_t>(g));
  }
}

inline GroupAssignment read_assignment_record(io::BinaryReader& r) {
  GroupAssignment a;
  a.n_groups = static_cast<int>(r.get<std::uint32_t>());
  const auto n_orders = r.get_count(64);
  for (std::uint64_t o = 0; o < n_orders; ++o) {
    const auto order = r.get_count(1u << 20);
    std::vector<int> map(order);
    for (auto& g : map) g = r.get<std::int32_t>();
    a.orders.push_back(static_cast<int>(order));
    a.group_of.push_back(std::move(map));
  }
  try {
    a.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("group assignment record: ") + e.what());
  }
  return a;
}

}  // namespace gmmresnet
