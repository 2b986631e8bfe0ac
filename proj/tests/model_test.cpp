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

#include "gmmresnet/model.hpp"

#include <random>

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace gmmresnet {
namespace {

using ad::Tensor;

Tensor random_input(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

ModelCfg tiny_cfg() {
  ModelCfg c;
  c.n_groups = 2;
  c.n_blocks = 2;
  c.block.channels = 8;
  c.group_input_dim = 6;
  return c;
}

std::vector<Tensor> tiny_inputs(const ModelCfg& c, std::size_t n, std::size_t t,
                                std::uint64_t seed) {
  std::vector<Tensor> xs;
  for (int g = 0; g < c.n_groups; ++g) {
    xs.push_back(random_input({n, static_cast<std::size_t>(c.group_input_dim), t},
                              seed + static_cast<std::uint64_t>(g)));
  }
  return xs;
}

std::vector<double> values_of(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

void fill(Tensor& t, double v) {
  for (double& x : t.values()) x = v;
}

TEST(ImprovedBlock, ZeroSecondConvIsIdentity) {
  Model m = Model::create(tiny_cfg(), 1);
  auto& blk = m.branches()[0].blocks[0];
  fill(blk.conv2.weight, 0.0);
  fill(blk.conv2.bias, 0.0);
  const Tensor x = random_input({3, 8, 10}, 2);
  EXPECT_EQ(values_of(improved_residual_block(x, blk)), values_of(x));
}

TEST(ImprovedBlock, OneNormalizationAndOneActivation) {
  Model m = Model::create(tiny_cfg(), 1);
  const auto ops = ad::graph_ops(
      improved_residual_block(random_input({2, 8, 10}, 3), m.branches()[0].blocks[0]));
  EXPECT_EQ(ops.at("batchnorm1d"), 1);
  EXPECT_EQ(ops.at("relu"), 1);
  EXPECT_EQ(ops.at("conv1d"), 2);
  EXPECT_EQ(ops.at("add"), 1);
}

TEST(StandardBlock, TwoNormalizationsAndTwoActivations) {
  ModelCfg c = tiny_cfg();
  c.improved_block = false;
  Model m = Model::create(c, 1);
  const auto ops = ad::graph_ops(
      residual_block(random_input({2, 8, 10}, 3), m.branches()[0].blocks[0]));
  EXPECT_EQ(ops.at("batchnorm1d"), 2);
  EXPECT_EQ(ops.at("relu"), 2);
}

TEST(ImprovedBlock, ChannelMismatchIsShapeError) {
  Model m = Model::create(tiny_cfg(), 1);
  EXPECT_THROW(improved_residual_block(random_input({1, 5, 10}, 3),
                                       m.branches()[0].blocks[0]),
               ShapeError);
}

TEST(ImprovedBlock, GradientCheck) {
  Model m = Model::create(tiny_cfg(), 4);
  auto& blk = m.branches()[0].blocks[0];
  Tensor x = random_input({2, 8, 9}, 5);
  x = Tensor::from(x.shape(), values_of(x), true);
  const Tensor r = random_input({2, 8, 9}, 6);
  const auto report = testing::check_gradients(
      [&] { return ad::sum(ad::mul(improved_residual_block(x, blk), r)); },
      {{"x", x},
       {"conv1.w", blk.conv1.weight},
       {"bn1.gamma", blk.bn1.gamma},
       {"bn1.beta", blk.bn1.beta},
       {"conv2.w", blk.conv2.weight},
       {"conv2.b", blk.conv2.bias}});
  EXPECT_TRUE(report.ok) << report.worst_at;
}

TEST(Branch, EmbeddingWidthIndependentOfLength) {
  ModelCfg c = tiny_cfg();
  c.block.channels = 16;
  Model m = Model::create(c, 7);
  for (std::size_t t : {400u, 200u}) {
    const Tensor e = m.branch_embedding(0, random_input({2, 6, t}, t));
    EXPECT_EQ(e.shape(), (ad::Shape{2, 16}));
  }
}

TEST(Branch, DefaultConfigEmbeddingIs256) {
  ModelCfg c;
  c.n_groups = 1;
  c.n_blocks = 1;
  Model m = Model::create(c, 7);
  EXPECT_EQ(m.branch_embedding(0, random_input({1, 248, 20}, 1)).shape(),
            (ad::Shape{1, 256}));
}

TEST(Branch, MfaSwitchChangesGraph) {
  ModelCfg c = tiny_cfg();
  Model with = Model::create(c, 1);
  c.mfa = false;
  Model without = Model::create(c, 1);
  const Tensor x = random_input({2, 6, 12}, 2);
  const auto a = ad::graph_ops(with.branch_embedding(0, x));
  const auto b = ad::graph_ops(without.branch_embedding(0, x));
  EXPECT_EQ(a.at("concat_channels"), 1);
  EXPECT_EQ(b.count("concat_channels"), 0u);
  EXPECT_EQ(a.at("batchnorm1d"), b.at("batchnorm1d") + 1);
}

TEST(Branch, NoMfaUsesLastBlockOutputOnly) {
  ModelCfg c = tiny_cfg();
  c.mfa = false;
  Model m = Model::create(c, 3);
  auto& b = m.branches()[0];
  const Tensor x = random_input({2, 6, 12}, 2);
  Tensor h = ad::relu(ad::batchnorm1d(b.entry(x), b.entry_bn));
  for (auto& blk : b.blocks) h = residual_block(h, blk);
  const Tensor expected = ad::max_pool_time(h);
  EXPECT_EQ(values_of(m.branch_embedding(0, x)), values_of(expected));
}

TEST(Branch, ZeroSecondConvsReduceToEntryAndMfa) {
  Model m = Model::create(tiny_cfg(), 9);
  m.set_mode(ad::Mode::kEval);
  auto& b = m.branches()[1];
  for (auto& blk : b.blocks) {
    fill(blk.conv2.weight, 0.0);
    fill(blk.conv2.bias, 0.0);
  }
  const Tensor x = random_input({2, 6, 12}, 4);
  const Tensor h0 = ad::relu(ad::batchnorm1d(b.entry(x), b.entry_bn));
  const Tensor mfa = ad::relu(ad::batchnorm1d(
      b.mfa(ad::concat_channels(std::vector<Tensor>(b.blocks.size(), h0))), b.mfa_bn));
  EXPECT_EQ(values_of(m.branch_embedding(1, x)), values_of(ad::max_pool_time(mfa)));
}

TEST(Model, EnsembleIsMeanOfGroups) {
  ModelCfg c = tiny_cfg();
  c.n_groups = 4;
  Model m = Model::create(c, 11);
  const auto out = m.forward(tiny_inputs(c, 3, 10, 20));
  ASSERT_EQ(out.groups.size(), 4u);
  for (std::size_t i = 0; i < out.ensemble.numel(); ++i) {
    double mean = 0.0;
    for (const auto& g : out.groups) mean += g.values()[i];
    EXPECT_NEAR(out.ensemble.values()[i], mean / 4.0, 1e-12);
  }
}

TEST(Model, IdenticalBranchesGiveEnsembleEqualToGroup) {
  ModelCfg c = tiny_cfg();
  Model m = Model::create(c, 12);
  m.branches()[1] = m.branches()[0];
  const Tensor x = random_input({3, 6, 10}, 30);
  const auto out = m.forward({x, x});
  EXPECT_EQ(values_of(out.ensemble), values_of(out.groups[0]));
}

TEST(Model, GroupIndependence) {
  ModelCfg c = tiny_cfg();
  c.n_groups = 3;
  Model m = Model::create(c, 13);
  m.set_mode(ad::Mode::kEval);
  const auto xs = tiny_inputs(c, 2, 10, 40);
  const auto before = m.forward(xs);
  for (double& v : m.branches()[1].blocks[1].conv1.weight.values()) v *= 1.5;
  const auto after = m.forward(xs);
  EXPECT_EQ(values_of(after.groups[0]), values_of(before.groups[0]));
  EXPECT_NE(values_of(after.groups[1]), values_of(before.groups[1]));
  EXPECT_EQ(values_of(after.groups[2]), values_of(before.groups[2]));
  EXPECT_NE(values_of(after.ensemble), values_of(before.ensemble));
}

TEST(Model, WrongGroupCountIsShapeError) {
  Model m = Model::create(tiny_cfg(), 1);
  EXPECT_THROW(m.forward({random_input({1, 6, 8}, 1)}), ShapeError);
  EXPECT_THROW(m.forward({random_input({1, 5, 8}, 1), random_input({1, 5, 8}, 2)}),
               ShapeError);
}

TEST(Model, FullGradientCheckAtTinyConfig) {
  Model m = Model::create(tiny_cfg(), 14);
  const auto xs = tiny_inputs(tiny_cfg(), 3, 16, 50);
  const std::vector<int> labels{0, 1, 1};
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& p : m.parameters()) params.emplace_back(p.name, p.tensor);
  const auto report = testing::check_gradients(
      [&] { return ad::softmax_cross_entropy(m.forward(xs).ensemble, labels); }, params);
  EXPECT_TRUE(report.ok) << report.worst_at << " rel " << report.worst_rel;
  EXPECT_EQ(report.checked, m.parameter_count());
}

class ParamCount : public ::testing::TestWithParam<std::tuple<bool, bool>> {};

TEST_P(ParamCount, MatchesClosedForm) {
  ModelCfg c;
  std::tie(c.mfa, c.improved_block) = GetParam();
  const Model m = Model::create(c, 0);
  EXPECT_EQ(m.parameter_count(), testing::closed_form_param_count(c));
  EXPECT_EQ(describe(m).total, m.parameter_count());
}

INSTANTIATE_TEST_SUITE_P(Variants, ParamCount,
                         ::testing::Combine(::testing::Bool(), ::testing::Bool()));

TEST(ParamCount, DefaultConfigTotal) {
  // 8 * (248*256 + 512 + 6*(2*196608 + 768) + 6*65536 + 512 + 514)
  const Model m = Model::create(ModelCfg{}, 0);
  EXPECT_EQ(m.parameter_count(), 22577168u);
  std::size_t sum = 0;
  for (const auto& [name, n] : describe(m).modules) sum += n;
  EXPECT_EQ(sum, m.parameter_count());
}

TEST(Score, Examples) {
  ModelOutput out;
  out.ensemble = Tensor::from({3, 2}, {3, 1, 0.5, 0.5, 10, 7});
  EXPECT_EQ(score(out), (std::vector<double>{2.0, 0.0, 3.0}));
  out.ensemble = Tensor::from({3, 2}, {103, 101, 100.5, 100.5, 110, 107});
  EXPECT_EQ(score(out), (std::vector<double>{2.0, 0.0, 3.0}));
}

TEST(ModelForward, SlicesByAssignment) {
  ModelCfg c = tiny_cfg();
  c.group_input_dim = 3;
  Model m = Model::create(c, 15);
  m.set_mode(ad::Mode::kEval);
  GroupAssignment a;
  a.n_groups = 2;
  a.orders = {2, 4};
  a.group_of = {{1, 0}, {0, 1, 1, 0}};
  std::vector<FeatureMatrix> lgp(2);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (auto& f : lgp) {
    f.values.resize(10, 6);
    for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = nd(rng);
  }
  const auto out = model_forward(m, lgp, a);
  // Group 0 gets columns {1, 2, 5}; group 1 gets {0, 3, 4}.
  std::vector<double> g0(2 * 3 * 10);
  for (std::size_t n = 0; n < 2; ++n) {
    const int cols[] = {1, 2, 5};
    for (std::size_t c2 = 0; c2 < 3; ++c2)
      for (std::size_t t = 0; t < 10; ++t)
        g0[(n * 3 + c2) * 10 + t] = lgp[n].values(static_cast<Eigen::Index>(t), cols[c2]);
  }
  EXPECT_EQ(values_of(out.groups[0]),
            values_of(m.branch_logits(0, Tensor::from({2, 3, 10}, g0))));
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  testing::TempDir dir;
  ModelCfg c = tiny_cfg();
  Model m = Model::create(c, 16);
  m.forward(tiny_inputs(c, 4, 10, 60));  // move running stats off their init
  m.set_mode(ad::Mode::kEval);
  GroupAssignment a;
  a.n_groups = 2;
  a.orders = {4, 8};
  a.group_of = {{0, 0, 1, 1}, {0, 1, 0, 1, 0, 1, 0, 1}};
  save_checkpoint(dir / "m.ckpt", m, a);
  auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.assignment, a);
  const auto xs = tiny_inputs(c, 3, 10, 70);
  EXPECT_EQ(values_of(ck.model.forward(xs).ensemble), values_of(m.forward(xs).ensemble));
}

TEST(Checkpoint, TruncatedIsFormatError) {
  testing::TempDir dir;
  Model m = Model::create(tiny_cfg(), 1);
  GroupAssignment a;
  a.n_groups = 2;
  a.orders = {2};
  a.group_of = {{0, 1}};
  save_checkpoint(dir / "m.ckpt", m, a);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 3);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
}

TEST(Clone, IsDeep) {
  Model m = Model::create(tiny_cfg(), 1);
  Model copy = m.clone();
  m.branches()[0].entry.weight.values()[0] += 1.0;
  m.branches()[0].entry_bn.running_mean[0] = 5.0;
  EXPECT_NE(copy.branches()[0].entry.weight.values()[0],
            m.branches()[0].entry.weight.values()[0]);
  EXPECT_EQ(copy.branches()[0].entry_bn.running_mean[0], 0.0);
}

TEST(ModelCfg, Validation) {
  ModelCfg c;
  c.block.kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelCfg{};
  c.block.stride = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace gmmresnet
