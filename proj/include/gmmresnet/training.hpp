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

// Ensemble-aware loss, Adam, plateau learning-rate schedule and the
// epoch loop over pre-grouped LGP features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmmresnet/errors.hpp"
#include "gmmresnet/eval.hpp"
#include "gmmresnet/model.hpp"
#include "gmmresnet/tensor.hpp"

namespace gmmresnet {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  int plateau_patience = 5;
  double plateau_factor = 0.5;
  double plateau_min_delta = 1e-4;
  std::uint64_t seed = 0;
  // false trains on the ensemble cross-entropy alone.
  bool ensemble_aware_loss = true;

  void validate() const {
    if (!(learning_rate >= 0) || batch_size < 1 || epochs < 1 ||
        plateau_patience < 1) {
      throw ConfigError("train: learning rate, batch size, epochs and patience "
                        "must be positive");
    }
    if (!(plateau_factor > 0 && plateau_factor < 1)) {
      throw ConfigError("train: plateau_factor must be in (0, 1)");
    }
  }
};

// (CE(b, y) + sum_i CE(b_i, y)) / (G + 1)
inline ad::Tensor ensemble_aware_loss(const ModelOutput& out,
                                      std::span<const int> labels) {
  std::vector<ad::Tensor> terms{ad::softmax_cross_entropy(out.ensemble, labels)};
  for (const auto& g : out.groups) {
    terms.push_back(ad::softmax_cross_entropy(g, labels));
  }
  return ad::mean_of(terms);
}

inline ad::Tensor training_loss(const ModelOutput& out,
                                std::span<const int> labels,
                                const TrainConfig& cfg) {
  return cfg.ensemble_aware_loss
             ? ensemble_aware_loss(out, labels)
             : ad::softmax_cross_entropy(out.ensemble, labels);
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Bias-corrected Adam; no weight decay.
inline void adam_step(std::span<ad::Tensor> params, AdamState& state,
                      double lr) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam: parameter list changed between steps");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = params[i].values();
    if (m.size() != values.size()) throw ShapeError("adam: parameter resized");
    const auto grad = params[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * grad[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * grad[j] * grad[j];
      values[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

// Replays the monitored history: whenever the value has not improved on the
// best by more than min_delta for `patience` consecutive epochs the rate is
// multiplied by the factor and the counter restarts.
inline double reduce_on_plateau(std::span<const double> history,
                                const TrainConfig& cfg) {
  double lr = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  for (double v : history) {
    if (v < best - cfg.plateau_min_delta) {
      best = v;
      bad = 0;
    } else if (++bad >= cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      bad = 0;
    }
  }
  return lr;
}

// Pre-grouped features: slices[i][g] is utterance i's group-g slice.
struct Dataset {
  std::vector<std::string> utt_ids;
  std::vector<std::vector<FeatureMatrix>> slices;
  std::vector<int> labels;  // 0 = bona fide, 1 = spoof

  std::size_t size() const { return labels.size(); }
};

struct Evaluation {
  double loss = 0.0;
  std::vector<double> scores;
};

// Eval-mode pass over a dataset in fixed order. The loss is the batch-size
// weighted mean of the training objective.
inline Evaluation evaluate(Model& model, const Dataset& data,
                           const TrainConfig& cfg) {
  model.set_mode(ad::Mode::kEval);
  Evaluation ev;
  double weighted = 0.0;
  for (std::size_t start = 0; start < data.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end =
        std::min(data.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = model.forward(pack_group_batch(data.slices, idx));
    const std::span<const int> labels(data.labels.data() + start, end - start);
    weighted += training_loss(out, labels, cfg).item() *
                static_cast<double>(idx.size());
    for (double s : score(out)) ev.scores.push_back(s);
  }
  ev.loss = data.size() ? weighted / static_cast<double>(data.size()) : 0.0;
  return ev;
}

inline double dataset_eer(const Dataset& data, std::span<const double> scores) {
  std::vector<double> bona, spoof;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.labels[i] == 0 ? bona : spoof).push_back(scores[i]);
  }
  if (bona.empty() || spoof.empty()) return std::numeric_limits<double>::quiet_NaN();
  return compute_eer(bona, spoof).eer;
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
  double dev_eer = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Model best;
  Model last;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

// Called after every epoch with the current model; return false to stop.
using EpochCallback = std::function<bool(const EpochLog&, Model&)>;

// Mini-batch training. The plateau schedule and best-model selection monitor
// the dev loss, or the training loss when no dev set is given.
inline TrainResult train_model(const Dataset& train, const Dataset* dev,
                               const ModelCfg& model_cfg,
                               const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.size() == 0) throw Error("train: empty training set");
  std::mt19937_64 rng(cfg.seed);
  Model model = Model::create(model_cfg, rng());
  auto params = model.parameters();
  std::vector<ad::Tensor> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);

  AdamState adam;
  TrainResult result;
  std::vector<double> monitor;
  double best = std::numeric_limits<double>::infinity();
  double lr = cfg.learning_rate;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    model.set_mode(ad::Mode::kTrain);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      std::vector<int> labels;
      for (auto i : batch) labels.push_back(train.labels[i]);
      const auto out = model.forward(pack_group_batch(train.slices, batch));
      auto loss = training_loss(out, labels, cfg);
      weighted += loss.item() * static_cast<double>(batch.size());
      model.zero_grad();
      ad::backward(loss);
      adam_step(tensors, adam, lr);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = weighted / static_cast<double>(train.size());
    entry.lr = lr;
    double monitored = entry.train_loss;
    if (dev && dev->size() > 0) {
      const auto ev = evaluate(model, *dev, cfg);
      entry.dev_loss = ev.loss;
      entry.dev_eer = dataset_eer(*dev, ev.scores);
      monitored = ev.loss;
    }
    monitor.push_back(monitored);
    lr = reduce_on_plateau(monitor, cfg);
    result.log.push_back(entry);
    if (monitored < best) {
      best = monitored;
      result.best_epoch = epoch;
      result.best = model.clone();
    }
    if (on_epoch && !on_epoch(entry, model)) break;
  }
  model.set_mode(ad::Mode::kEval);
  result.best.set_mode(ad::Mode::kEval);
  result.last = std::move(model);
  return result;
}

// CSV epoch log; the header is written when the file is new or empty.
inline void append_epoch_log(const std::filesystem::path& path,
                             const EpochLog& e) {
  const bool fresh = !std::filesystem::exists(path) ||
                     std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open epoch log " + path.string());
  if (fresh) out << "epoch,train_loss,dev_loss,lr,dev_eer\n";
  out << std::setprecision(10) << e.epoch << ',' << e.train_loss << ','
      << e.dev_loss << ',' << e.lr << ',' << e.dev_eer << '\n';
}

}  // namespace gmmresnet
