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

#include "gmmresnet/multiscale.hpp"

#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace gmmresnet {
namespace {

// Builds orders 1..max_order by splitting, with randomized parameters.
std::vector<Gmm> split_chain(int max_order, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.5, 2.0);
  Gmm g;
  g.weights = Vector::Ones(1);
  g.means = Matrix::Zero(1, d);
  g.variances = Matrix::Ones(1, d);
  std::vector<Gmm> chain{g};
  while (chain.back().order() < max_order) {
    Gmm next = binary_split(chain.back(), EmConfig{});
    for (Eigen::Index i = 0; i < next.means.size(); ++i) {
      next.means.data()[i] = nd(rng);
      next.variances.data()[i] = ud(rng);
    }
    chain.push_back(std::move(next));
  }
  return chain;
}

GmmBank default_bank(int d = 60) {
  return select_orders(split_chain(1024, d, 1), {64, 128, 256, 512, 1024});
}

FeatureMatrix random_lfcc(Eigen::Index t, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  FeatureMatrix f;
  f.values.resize(t, d);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = nd(rng);
  return f;
}

TEST(ExtractMultiscale, DefaultBankGives1984Dims) {
  const GmmBank bank = default_bank();
  const auto lgp = extract_multiscale_lgp(bank, random_lfcc(400, 60, 2));
  EXPECT_EQ(lgp.dims(), 1984);
  EXPECT_EQ(lgp.frames(), 400);
  EXPECT_EQ(lgp.kind, FeatureKind::kLgp);
}

TEST(ExtractMultiscale, BlocksEqualSingleOrderTransforms) {
  const GmmBank bank = default_bank(20);
  const auto lfcc = random_lfcc(50, 20, 3);
  const auto lgp = extract_multiscale_lgp(bank, lfcc);
  Eigen::Index offset = 0;
  for (const auto& g : bank.gmms) {
    EXPECT_EQ(lgp.values.middleCols(offset, g.order()), lgp_transform(g, lfcc).values);
    offset += g.order();
  }
}

TEST(ExtractMultiscale, SingleOrderBank) {
  const GmmBank bank = select_orders(split_chain(64, 60, 4), {64});
  EXPECT_EQ(extract_multiscale_lgp(bank, random_lfcc(400, 60, 5)).dims(), 64);
}

TEST(ExtractMultiscale, DimensionMismatchIsShapeError) {
  const GmmBank bank = select_orders(split_chain(8, 5, 4), {8});
  EXPECT_THROW(extract_multiscale_lgp(bank, random_lfcc(10, 6, 5)), ShapeError);
}

TEST(Bank, SaveLoadRoundTrip) {
  testing::TempDir dir;
  const GmmBank bank = select_orders(split_chain(16, 3, 8), {4, 8, 16});
  save_bank(dir / "bank.bin", bank);
  const GmmBank back = load_bank(dir / "bank.bin");
  ASSERT_EQ(back.gmms.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.gmms[i], bank.gmms[i]);
}

TEST(Bank, MissingOrderIsRejected) {
  EXPECT_ANY_THROW(select_orders(split_chain(16, 3, 8), {4, 32}));
}

// Random trees: shuffle which component sits at each leaf and swap the
// children of random internal nodes, so that tree order and index order differ.
Gmm scrambled(Gmm g, std::mt19937_64& rng) {
  auto& nodes = g.lineage.mutable_nodes();
  std::vector<int> comps;
  for (const auto& n : nodes) {
    if (n.is_leaf()) comps.push_back(n.component);
  }
  std::shuffle(comps.begin(), comps.end(), rng);
  std::size_t next = 0;
  for (auto& n : nodes) {
    if (n.is_leaf()) {
      n.component = comps[next++];
    } else if (rng() % 2) {
      std::swap(n.children[0], n.children[1]);
    }
  }
  g.lineage.validate(g.order());
  return g;
}

TEST(LineageGrouping, MatchesAncestorWalkOnScrambledTrees) {
  std::mt19937_64 rng(99);
  const auto chain = split_chain(256, 2, 7);
  for (int trial = 0; trial < 20; ++trial) {
    GmmBank bank;
    for (int order : {16, 64, 256}) {
      bank.gmms.push_back(scrambled(chain[static_cast<std::size_t>(std::log2(order))], rng));
    }
    for (int groups : {1, 2, 4, 8, 16}) {
      const auto a = lineage_grouping(bank, groups);
      int depth = 0;
      while ((1 << depth) < groups) ++depth;
      for (std::size_t o = 0; o < bank.gmms.size(); ++o) {
        for (int c = 0; c < bank.gmms[o].order(); ++c) {
          ASSERT_EQ(a.group_of[o][c],
                    testing::ancestor_group(bank.gmms[o].lineage, c, depth))
              << "trial " << trial << " G=" << groups << " component " << c;
        }
      }
    }
  }
}

TEST(LineageGrouping, EqualGroupSizesAndSliceWidth) {
  const GmmBank bank = default_bank(2);
  const auto a = lineage_grouping(bank, 8);
  std::vector<int> sizes(8, 0);
  for (int g : a.group_of[0]) ++sizes[g];
  EXPECT_EQ(sizes, std::vector<int>(8, 8));
  for (const auto& cols : group_columns(a)) EXPECT_EQ(cols.size(), 248u);
}

TEST(LineageGrouping, SiblingsAreCoGrouped) {
  const GmmBank bank = select_orders(split_chain(64, 2, 3), {64});
  const auto a = lineage_grouping(bank, 8);
  // Components 2c and 2c+1 share a parent, so any ancestor at depth 3.
  for (int c = 0; c < 32; ++c) EXPECT_EQ(a.group_of[0][2 * c], a.group_of[0][2 * c + 1]);
  // Unscrambled trees group contiguous index ranges.
  for (int c = 0; c < 64; ++c) EXPECT_EQ(a.group_of[0][c], c / 8);
}

TEST(LineageGrouping, InvalidGroupCounts) {
  const GmmBank bank = select_orders(split_chain(16, 2, 3), {4, 16});
  EXPECT_THROW(lineage_grouping(bank, 3), ConfigError);
  EXPECT_THROW(lineage_grouping(bank, 8), ConfigError);
  EXPECT_THROW(random_grouping(bank, 6, 1), ConfigError);
  EXPECT_THROW(random_grouping(bank, 8, 1), ConfigError);
}

TEST(RandomGrouping, DeterministicBalancedAndSeedSensitive) {
  const GmmBank bank = default_bank(2);
  const auto a = random_grouping(bank, 8, 42);
  EXPECT_EQ(a, random_grouping(bank, 8, 42));
  std::vector<int> sizes(8, 0);
  for (int g : a.group_of[0]) ++sizes[g];
  EXPECT_EQ(sizes, std::vector<int>(8, 8));
  std::set<std::vector<std::vector<int>>> distinct;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    distinct.insert(random_grouping(bank, 8, seed).group_of);
  }
  EXPECT_EQ(distinct.size(), 10u);
}

TEST(GroupSlices, DefaultShapesAndPartition) {
  const GmmBank bank = default_bank();
  const auto feat = extract_multiscale_lgp(bank, random_lfcc(400, 60, 11));
  for (const auto& a : {lineage_grouping(bank, 8), random_grouping(bank, 8, 5)}) {
    const auto slices = group_slices(a, feat);
    ASSERT_EQ(slices.size(), 8u);
    for (const auto& s : slices) {
      EXPECT_EQ(s.dims(), 248);
      EXPECT_EQ(s.frames(), 400);
    }
    // Inverse permutation reconstructs the input exactly.
    const auto cols = group_columns(a);
    Matrix rebuilt = Matrix::Constant(400, 1984, std::nan(""));
    std::vector<int> hits(1984, 0);
    for (std::size_t g = 0; g < cols.size(); ++g) {
      for (std::size_t j = 0; j < cols[g].size(); ++j) {
        rebuilt.col(cols[g][j]) = slices[g].values.col(static_cast<Eigen::Index>(j));
        ++hits[cols[g][j]];
      }
    }
    EXPECT_EQ(hits, std::vector<int>(1984, 1));
    EXPECT_EQ(rebuilt, feat.values);
  }
}

TEST(GroupSlices, RowOrderIsOrderThenComponent) {
  const GmmBank bank = select_orders(split_chain(16, 2, 3), {4, 8, 16});
  std::mt19937_64 rng(1);
  const auto a = random_grouping(bank, 2, 3);
  // Oracle: walk orders ascending, components ascending, keep those in g.
  const auto cols = group_columns(a);
  for (int g = 0; g < 2; ++g) {
    std::vector<int> expected;
    int offset = 0;
    for (std::size_t o = 0; o < a.orders.size(); ++o) {
      for (int c = 0; c < a.orders[o]; ++c) {
        if (a.group_of[o][c] == g) expected.push_back(offset + c);
      }
      offset += a.orders[o];
    }
    EXPECT_EQ(cols[g], expected);
  }
}

TEST(GroupSlices, SingleGroupIsWholeFeature) {
  const GmmBank bank = select_orders(split_chain(16, 3, 3), {8, 16});
  const auto feat = extract_multiscale_lgp(bank, random_lfcc(30, 3, 2));
  const auto slices = group_slices(lineage_grouping(bank, 1), feat);
  ASSERT_EQ(slices.size(), 1u);
  EXPECT_EQ(slices[0].values, feat.values);
}

TEST(GroupSlices, MismatchIsShapeError) {
  const GmmBank bank = select_orders(split_chain(16, 3, 3), {8, 16});
  const auto a = lineage_grouping(bank, 2);
  EXPECT_THROW(group_slices(a, random_lfcc(30, 23, 2)), ShapeError);
}

TEST(Assignment, RecordRoundTrip) {
  testing::TempDir dir;
  const auto a = random_grouping(default_bank(2), 4, 17);
  {
    io::BinaryWriter w((dir / "a.bin").string());
    write_assignment_record(w, a);
    w.close();
  }
  io::BinaryReader r((dir / "a.bin").string());
  EXPECT_EQ(read_assignment_record(r), a);
}

}  // namespace
}  // namespace gmmresnet
