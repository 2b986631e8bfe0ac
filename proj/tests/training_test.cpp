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

#include "gmmresnet/training.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

namespace gmmresnet {
namespace {

using ad::Tensor;

ModelCfg tiny_cfg(int groups = 2) {
  ModelCfg c;
  c.n_groups = groups;
  c.n_blocks = 2;
  c.block.channels = 8;
  c.group_input_dim = 4;
  return c;
}

// Class 1 slices carry a bump on the first feature row at random times.
Dataset toy_dataset(std::size_t n, int groups, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    d.utt_ids.push_back("u" + std::to_string(i));
    d.labels.push_back(label);
    std::vector<FeatureMatrix> slices;
    for (int g = 0; g < groups; ++g) {
      FeatureMatrix f;
      f.kind = FeatureKind::kLgpGroup;
      f.values.resize(12, 4);
      for (Eigen::Index k = 0; k < f.values.size(); ++k) f.values.data()[k] = nd(rng);
      if (label == 1) f.values(static_cast<Eigen::Index>(rng() % 12), 0) += 4.0;
      slices.push_back(std::move(f));
    }
    d.slices.push_back(std::move(slices));
  }
  return d;
}

ModelOutput output_of(std::vector<std::vector<double>> groups, std::size_t n) {
  ModelOutput out;
  for (auto& g : groups) out.groups.push_back(Tensor::from({n, 2}, std::move(g), true));
  out.ensemble = ad::mean_of(out.groups);
  return out;
}

TEST(EnsembleLoss, IdenticalGroupsEqualEnsembleCrossEntropy) {
  const std::vector<double> logits{0.3, -1.2, 2.0, 0.5, -0.7, 0.1};
  const auto out = output_of({logits, logits, logits}, 3);
  const std::vector<int> labels{0, 1, 1};
  EXPECT_DOUBLE_EQ(ensemble_aware_loss(out, labels).item(),
                   ad::softmax_cross_entropy(out.ensemble, labels).item());
}

TEST(EnsembleLoss, SingleGroupEqualsGroupCrossEntropy) {
  const auto out = output_of({{1.0, -2.0, 0.5, 0.25}}, 2);
  const std::vector<int> labels{1, 0};
  EXPECT_DOUBLE_EQ(ensemble_aware_loss(out, labels).item(),
                   ad::softmax_cross_entropy(out.groups[0], labels).item());
}

TEST(EnsembleLoss, ExplicitAverageOfTerms) {
  const auto out = output_of({{1.0, -2.0, 0.5, 0.25}, {0.0, 3.0, -1.0, 1.0}}, 2);
  const std::vector<int> labels{1, 0};
  const double expected =
      (ad::softmax_cross_entropy(out.ensemble, labels).item() +
       ad::softmax_cross_entropy(out.groups[0], labels).item() +
       ad::softmax_cross_entropy(out.groups[1], labels).item()) / 3.0;
  EXPECT_NEAR(ensemble_aware_loss(out, labels).item(), expected, 1e-15);
  EXPECT_GE(ensemble_aware_loss(out, labels).item(), 0.0);
}

TEST(EnsembleLoss, InvariantUnderGroupPermutation) {
  const std::vector<std::vector<double>> g{
      {1.0, -2.0, 0.5, 0.25}, {0.0, 3.0, -1.0, 1.0}, {2.0, 2.0, -3.0, 0.0}};
  const std::vector<int> labels{1, 0};
  const double ref = ensemble_aware_loss(output_of(g, 2), labels).item();
  const double perm = ensemble_aware_loss(output_of({g[2], g[0], g[1]}, 2), labels).item();
  EXPECT_NEAR(perm, ref, 1e-14);
}

TEST(EnsembleLoss, ApproachesZeroForConfidentCorrectClassifiers) {
  const auto out = output_of({{50.0, -50.0, -50.0, 50.0}, {40.0, -40.0, -40.0, 40.0}}, 2);
  const std::vector<int> labels{0, 1};
  EXPECT_LT(ensemble_aware_loss(out, labels).item(), 1e-30);
}

TEST(EnsembleLoss, GradientCheckThroughTinyModel) {
  Model m = Model::create(tiny_cfg(), 3);
  const Dataset d = toy_dataset(4, 2, 1);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto xs = pack_group_batch(d.slices, idx);
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& p : m.parameters()) params.emplace_back(p.name, p.tensor);
  const auto r = testing::check_gradients(
      [&] { return ensemble_aware_loss(m.forward(xs), d.labels); }, params);
  EXPECT_TRUE(r.ok) << r.worst_at;
}

TEST(LossSwitch, PlainLossHasOneCrossEntropyNode) {
  const auto out = output_of({{1.0, 0.0}, {0.0, 1.0}}, 1);
  const std::vector<int> labels{0};
  TrainConfig cfg;
  EXPECT_EQ(ad::graph_ops(training_loss(out, labels, cfg)).at("softmax_cross_entropy"), 3);
  cfg.ensemble_aware_loss = false;
  EXPECT_EQ(ad::graph_ops(training_loss(out, labels, cfg)).at("softmax_cross_entropy"), 1);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Tensor p = Tensor::from({3}, {1.0, 1.0, 1.0}, true);
  p.node().grad = {0.5, -2.0, 1e-3};
  AdamState state;
  std::vector<Tensor> ps{p};
  adam_step(ps, state, 0.01);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.values()[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.values()[1], 1.0 + 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.values()[2], 1.0 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  Tensor p = Tensor::from({2}, {0.3, -0.4}, true);
  AdamState state;
  std::vector<Tensor> ps{p};
  adam_step(ps, state, 0.1);
  adam_step(ps, state, 0.1);
  EXPECT_EQ(p.values()[0], 0.3);
  EXPECT_EQ(p.values()[1], -0.4);
  EXPECT_EQ(state.step, 2);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
  AdamState state;
  std::vector<Tensor> ps{p};
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 100; ++i) {
    p.node().grad = {3.0, -0.2};
    adam_step(ps, state, 1e-3);
    EXPECT_LT(p.values()[0], prev0);
    EXPECT_GT(p.values()[1], prev1);
    prev0 = p.values()[0];
    prev1 = p.values()[1];
  }
}

TEST(Plateau, StrictlyDecreasingKeepsRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  const std::vector<double> h{5, 4, 3, 2, 1, 0.5, 0.25, 0.1};
  EXPECT_EQ(reduce_on_plateau(h, cfg), 0.1);
}

TEST(Plateau, FlatHistoryReducesOnce) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.plateau_patience = 3;
  const std::vector<double> flat(4, 1.0);
  EXPECT_DOUBLE_EQ(reduce_on_plateau(flat, cfg), 0.05);
  const std::vector<double> shorter(3, 1.0);
  EXPECT_EQ(reduce_on_plateau(shorter, cfg), 0.1);
}

TEST(Plateau, ImprovementResetsCounter) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.plateau_patience = 3;
  const std::vector<double> h{1.0, 1.0, 1.0, 0.5, 0.5, 0.5};
  EXPECT_EQ(reduce_on_plateau(h, cfg), 0.1);
  // Changes below min_delta do not count as improvement.
  const std::vector<double> tiny{1.0, 1.0 - 1e-6, 1.0 - 2e-6, 1.0 - 3e-6};
  EXPECT_DOUBLE_EQ(reduce_on_plateau(tiny, cfg), 0.05);
}

TrainConfig fast_cfg() {
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.epochs = 30;
  cfg.seed = 5;
  return cfg;
}

TEST(TrainModel, LossFallsByNinetyPercent) {
  const Dataset d = toy_dataset(32, 2, 2);
  const auto result = train_model(d, nullptr, tiny_cfg(), fast_cfg());
  ASSERT_EQ(result.log.size(), 30u);
  const double first = result.log.front().train_loss;
  const double last = result.log.back().train_loss;
  EXPECT_LE(last, 0.1 * first) << "first " << first << " last " << last;
}

TEST(TrainModel, SameSeedIsDeterministic) {
  const Dataset d = toy_dataset(16, 2, 3);
  TrainConfig cfg = fast_cfg();
  cfg.epochs = 3;
  const auto a = train_model(d, &d, tiny_cfg(), cfg);
  const auto b = train_model(d, &d, tiny_cfg(), cfg);
  EXPECT_EQ(a.log.front().train_loss, b.log.front().train_loss);
  Model ma = a.best.clone(), mb = b.best.clone();
  EXPECT_EQ(evaluate(ma, d, cfg).scores, evaluate(mb, d, cfg).scores);
  cfg.seed = 6;
  const auto c = train_model(d, &d, tiny_cfg(), cfg);
  EXPECT_NE(c.log.front().train_loss, a.log.front().train_loss);
}

TEST(TrainModel, BestModelTracksLowestMonitoredLoss) {
  const Dataset d = toy_dataset(16, 2, 4);
  TrainConfig cfg = fast_cfg();
  cfg.epochs = 6;
  const auto r = train_model(d, &d, tiny_cfg(), cfg);
  int argmin = 0;
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    if (r.log[i].dev_loss < r.log[static_cast<std::size_t>(argmin)].dev_loss) {
      argmin = static_cast<int>(i);
    }
  }
  EXPECT_EQ(r.best_epoch, argmin + 1);
  Model best = r.best.clone();
  EXPECT_EQ(evaluate(best, d, cfg).loss, r.log[static_cast<std::size_t>(argmin)].dev_loss);
}

TEST(TrainModel, CallbackCanStopEarly) {
  const Dataset d = toy_dataset(8, 2, 5);
  int calls = 0;
  const auto r = train_model(d, nullptr, tiny_cfg(), fast_cfg(),
                             [&](const EpochLog&, Model&) { return ++calls < 2; });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(TrainModel, EmptySetIsAnError) {
  EXPECT_THROW(train_model(Dataset{}, nullptr, tiny_cfg(), fast_cfg()), Error);
}

TEST(Evaluate, LossIsIndependentOfBatching) {
  const Dataset d = toy_dataset(10, 2, 6);
  Model m = Model::create(tiny_cfg(), 7);
  TrainConfig small = fast_cfg(), large = fast_cfg();
  small.batch_size = 3;
  large.batch_size = 64;
  const auto a = evaluate(m, d, small);
  const auto b = evaluate(m, d, large);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  ASSERT_EQ(a.scores.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(a.scores[i], b.scores[i], 1e-12);
}

TEST(Evaluate, CheckpointReloadGivesIdenticalScores) {
  testing::TempDir dir;
  const Dataset d = toy_dataset(12, 2, 8);
  TrainConfig cfg = fast_cfg();
  cfg.epochs = 2;
  auto r = train_model(d, nullptr, tiny_cfg(), cfg);
  GroupAssignment a;
  a.n_groups = 2;
  a.orders = {8};
  a.group_of = {{0, 0, 0, 0, 1, 1, 1, 1}};
  save_checkpoint(dir / "best.ckpt", r.best, a);
  auto ck = load_checkpoint(dir / "best.ckpt");
  EXPECT_EQ(evaluate(ck.model, d, cfg).scores, evaluate(r.best, d, cfg).scores);
}

TEST(EpochLog, CsvHasHeaderOnce) {
  testing::TempDir dir;
  EpochLog e;
  e.epoch = 1;
  e.train_loss = 0.5;
  e.lr = 1e-4;
  append_epoch_log(dir / "log.csv", e);
  e.epoch = 2;
  append_epoch_log(dir / "log.csv", e);
  std::ifstream in(dir / "log.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "epoch,train_loss,dev_loss,lr,dev_eer");
  EXPECT_EQ(lines[2].substr(0, 6), "2,0.5,");
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.plateau_factor = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace gmmresnet
