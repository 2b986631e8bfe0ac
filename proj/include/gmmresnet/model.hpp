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

// Grouped 1-D ResNet: one branch per LGP group (entry 1x1 conv, residual
// blocks, multi-scale feature aggregation, max pooling over time, linear
// head), with the group logits averaged into the ensemble output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmmresnet/binary_io.hpp"
#include "gmmresnet/errors.hpp"
#include "gmmresnet/lfcc.hpp"
#include "gmmresnet/multiscale.hpp"
#include "gmmresnet/tensor.hpp"

namespace gmmresnet {

struct ResidualBlockCfg {
  int channels = 256;
  int kernel = 3;
  int stride = 1;
};

struct ModelCfg {
  int n_groups = 8;
  int n_blocks = 6;
  ResidualBlockCfg block;
  int group_input_dim = 248;
  int n_classes = 2;
  bool mfa = true;
  // false selects the conventional conv-BN-ReLU-conv-BN block with a
  // post-addition ReLU.
  bool improved_block = true;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const {
    if (n_groups < 1 || n_blocks < 1 || group_input_dim < 1 || n_classes < 2) {
      throw ConfigError("model: groups, blocks and input dim must be positive, "
                        "classes >= 2");
    }
    if (block.channels < 1) throw ConfigError("model: channels must be positive");
    if (block.kernel < 1 || block.kernel % 2 == 0) {
      throw ConfigError("model: kernel must be odd");
    }
    if (block.stride != 1) {
      throw ConfigError("model: identity skips require stride 1");
    }
    if (!(bn_momentum > 0 && bn_momentum <= 1) || !(bn_epsilon > 0)) {
      throw ConfigError("model: invalid batch-norm momentum/epsilon");
    }
  }
};

struct Conv {
  ad::Tensor weight;  // Cout x Cin x k
  ad::Tensor bias;    // empty when a batch norm follows
  std::size_t padding = 0;

  ad::Tensor operator()(const ad::Tensor& x) const {
    return ad::conv1d(x, weight, bias, 1, padding);
  }
};

struct LinearLayer {
  ad::Tensor weight;  // O x F
  ad::Tensor bias;

  ad::Tensor operator()(const ad::Tensor& x) const {
    return ad::linear(x, weight, bias);
  }
};

struct ResidualBlock {
  Conv conv1;
  ad::BatchNormState bn1;
  Conv conv2;
  ad::BatchNormState bn2;  // conventional block only
  bool improved = true;
};

struct Branch {
  Conv entry;
  ad::BatchNormState entry_bn;
  std::vector<ResidualBlock> blocks;
  Conv mfa;  // unused when cfg.mfa is false
  ad::BatchNormState mfa_bn;
  LinearLayer classifier;
};

struct NamedParam {
  std::string module;  // e.g. "block3"
  std::string name;    // e.g. "group1.block3.conv1.weight"
  ad::Tensor tensor;
};

// x + conv2(relu(bn(conv1(x)))): one normalization and one activation, none
// after the second convolution.
inline ad::Tensor improved_residual_block(const ad::Tensor& x,
                                          ResidualBlock& block) {
  if (x.rank() != 3 || x.dim(1) != block.conv1.weight.dim(1)) {
    throw ShapeError("residual block: input channels do not match block");
  }
  auto h = ad::relu(ad::batchnorm1d(block.conv1(x), block.bn1));
  return ad::add(x, block.conv2(h));
}

inline ad::Tensor standard_residual_block(const ad::Tensor& x,
                                          ResidualBlock& block) {
  if (x.rank() != 3 || x.dim(1) != block.conv1.weight.dim(1)) {
    throw ShapeError("residual block: input channels do not match block");
  }
  auto h = ad::relu(ad::batchnorm1d(block.conv1(x), block.bn1));
  h = ad::batchnorm1d(block.conv2(h), block.bn2);
  return ad::relu(ad::add(x, h));
}

inline ad::Tensor residual_block(const ad::Tensor& x, ResidualBlock& block) {
  return block.improved ? improved_residual_block(x, block)
                        : standard_residual_block(x, block);
}

struct ModelOutput {
  ad::Tensor ensemble;             // N x classes
  std::vector<ad::Tensor> groups;  // per group, N x classes
};

class Model {
 public:
  Model() = default;

  // Kaiming-uniform (fan-in) weights, zero biases, BN gamma 1 / beta 0.
  static Model create(const ModelCfg& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    const auto c = static_cast<std::size_t>(cfg.block.channels);
    const auto k = static_cast<std::size_t>(cfg.block.kernel);
    const auto pad = k / 2;
    auto bn = [&] {
      return ad::BatchNormState::create(c, cfg.bn_momentum, cfg.bn_epsilon);
    };
    for (int g = 0; g < cfg.n_groups; ++g) {
      Branch b;
      b.entry = make_conv(rng, c, static_cast<std::size_t>(cfg.group_input_dim),
                          1, false);
      b.entry_bn = bn();
      for (int i = 0; i < cfg.n_blocks; ++i) {
        ResidualBlock blk;
        blk.improved = cfg.improved_block;
        blk.conv1 = make_conv(rng, c, c, k, false);
        blk.conv1.padding = pad;
        blk.bn1 = bn();
        blk.conv2 = make_conv(rng, c, c, k, cfg.improved_block);
        blk.conv2.padding = pad;
        if (!cfg.improved_block) blk.bn2 = bn();
        b.blocks.push_back(std::move(blk));
      }
      if (cfg.mfa) {
        b.mfa = make_conv(rng, c, c * static_cast<std::size_t>(cfg.n_blocks), 1,
                          false);
        b.mfa_bn = bn();
      }
      b.classifier = make_linear(rng, static_cast<std::size_t>(cfg.n_classes), c);
      m.branches_.push_back(std::move(b));
    }
    return m;
  }

  const ModelCfg& cfg() const { return cfg_; }
  std::vector<Branch>& branches() { return branches_; }
  const std::vector<Branch>& branches() const { return branches_; }

  void set_mode(ad::Mode mode) {
    for (auto* bn : batchnorms()) bn->mode = mode;
  }

  // Embedding of one group: N x Dg x T -> N x channels.
  ad::Tensor branch_embedding(int group, const ad::Tensor& x) {
    auto& b = branches_.at(static_cast<std::size_t>(group));
    if (x.rank() != 3 || x.dim(1) != static_cast<std::size_t>(cfg_.group_input_dim)) {
      throw ShapeError("branch input must be N x " +
                       std::to_string(cfg_.group_input_dim) + " x T, got " +
                       ad::shape_str(x.shape()));
    }
    auto h = ad::relu(ad::batchnorm1d(b.entry(x), b.entry_bn));
    std::vector<ad::Tensor> block_outputs;
    for (auto& blk : b.blocks) {
      h = residual_block(h, blk);
      block_outputs.push_back(h);
    }
    if (cfg_.mfa) {
      h = ad::relu(ad::batchnorm1d(b.mfa(ad::concat_channels(block_outputs)),
                                   b.mfa_bn));
    }
    return ad::max_pool_time(h);
  }

  ad::Tensor branch_logits(int group, const ad::Tensor& x) {
    return branches_.at(static_cast<std::size_t>(group))
        .classifier(branch_embedding(group, x));
  }

  // One input tensor per group; the ensemble is the mean of group logits.
  ModelOutput forward(const std::vector<ad::Tensor>& group_inputs) {
    if (group_inputs.size() != branches_.size()) {
      throw ShapeError("model expects " + std::to_string(branches_.size()) +
                       " group inputs, got " +
                       std::to_string(group_inputs.size()));
    }
    ModelOutput out;
    for (std::size_t g = 0; g < branches_.size(); ++g) {
      out.groups.push_back(branch_logits(static_cast<int>(g), group_inputs[g]));
    }
    out.ensemble = ad::mean_of(out.groups);
    return out;
  }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> ps;
    for (std::size_t g = 0; g < branches_.size(); ++g) {
      const auto& b = branches_[g];
      const std::string pre = "group" + std::to_string(g) + ".";
      auto add = [&](const std::string& module, const std::string& leaf,
                     const ad::Tensor& t) {
        if (t.defined()) ps.push_back({module, pre + module + "." + leaf, t});
      };
      add("entry", "conv.weight", b.entry.weight);
      add("entry", "bn.gamma", b.entry_bn.gamma);
      add("entry", "bn.beta", b.entry_bn.beta);
      for (std::size_t i = 0; i < b.blocks.size(); ++i) {
        const auto& blk = b.blocks[i];
        const std::string mod = "block" + std::to_string(i + 1);
        add(mod, "conv1.weight", blk.conv1.weight);
        add(mod, "bn1.gamma", blk.bn1.gamma);
        add(mod, "bn1.beta", blk.bn1.beta);
        add(mod, "conv2.weight", blk.conv2.weight);
        add(mod, "conv2.bias", blk.conv2.bias);
        if (!blk.improved) {
          add(mod, "bn2.gamma", blk.bn2.gamma);
          add(mod, "bn2.beta", blk.bn2.beta);
        }
      }
      if (cfg_.mfa) {
        add("mfa", "conv.weight", b.mfa.weight);
        add("mfa", "bn.gamma", b.mfa_bn.gamma);
        add("mfa", "bn.beta", b.mfa_bn.beta);
      }
      add("classifier", "weight", b.classifier.weight);
      add("classifier", "bias", b.classifier.bias);
    }
    return ps;
  }

  std::vector<ad::BatchNormState*> batchnorms() {
    std::vector<ad::BatchNormState*> out;
    for (auto& b : branches_) {
      out.push_back(&b.entry_bn);
      for (auto& blk : b.blocks) {
        out.push_back(&blk.bn1);
        if (!blk.improved) out.push_back(&blk.bn2);
      }
      if (cfg_.mfa) out.push_back(&b.mfa_bn);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  // Deep copy of all parameters and BN state.
  Model clone() const {
    Model m;
    m.cfg_ = cfg_;
    m.branches_ = branches_;
    auto copy = [](ad::Tensor& t) {
      if (t.defined()) {
        t = ad::Tensor::from(t.shape(),
                             std::vector<double>(t.values().begin(),
                                                 t.values().end()),
                             t.requires_grad());
      }
    };
    for (auto& b : m.branches_) {
      copy(b.entry.weight);
      copy(b.entry.bias);
      copy(b.entry_bn.gamma);
      copy(b.entry_bn.beta);
      for (auto& blk : b.blocks) {
        for (auto* t : {&blk.conv1.weight, &blk.conv1.bias, &blk.bn1.gamma,
                        &blk.bn1.beta, &blk.conv2.weight, &blk.conv2.bias,
                        &blk.bn2.gamma, &blk.bn2.beta}) {
          copy(*t);
        }
      }
      for (auto* t : {&b.mfa.weight, &b.mfa.bias, &b.mfa_bn.gamma,
                      &b.mfa_bn.beta, &b.classifier.weight, &b.classifier.bias}) {
        copy(*t);
      }
    }
    return m;
  }

 private:
  static ad::Tensor kaiming(std::mt19937_64& rng, ad::Shape shape,
                            std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return ad::Tensor::from(std::move(shape), std::move(v), true);
  }

  static Conv make_conv(std::mt19937_64& rng, std::size_t c_out,
                        std::size_t c_in, std::size_t k, bool with_bias) {
    Conv conv;
    conv.weight = kaiming(rng, {c_out, c_in, k}, c_in * k);
    if (with_bias) conv.bias = ad::Tensor::zeros({c_out}, true);
    return conv;
  }

  static LinearLayer make_linear(std::mt19937_64& rng, std::size_t out,
                                 std::size_t in) {
    LinearLayer l;
    l.weight = kaiming(rng, {out, in}, in);
    l.bias = ad::Tensor::zeros({out}, true);
    return l;
  }

  ModelCfg cfg_;
  std::vector<Branch> branches_;
};

// Packs per-utterance group slices (time-major T x Dg) into one N x Dg x T
// tensor per group. `batch` indexes into `slices`.
inline std::vector<ad::Tensor> pack_group_batch(
    const std::vector<std::vector<FeatureMatrix>>& slices,
    std::span<const std::size_t> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const std::size_t n_groups = slices.at(batch[0]).size();
  std::vector<ad::Tensor> out;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const auto& first = slices[batch[0]][g];
    const auto d = static_cast<std::size_t>(first.dims());
    const auto t = static_cast<std::size_t>(first.frames());
    std::vector<double> v(batch.size() * d * t);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& s = slices.at(batch[i]).at(g);
      if (static_cast<std::size_t>(s.dims()) != d ||
          static_cast<std::size_t>(s.frames()) != t) {
        throw ShapeError("batch members disagree on group slice shape");
      }
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t f = 0; f < t; ++f) {
          v[(i * d + c) * t + f] =
              s.values(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c));
        }
      }
    }
    out.push_back(ad::Tensor::from({batch.size(), d, t}, std::move(v)));
  }
  return out;
}

// Full forward from concatenated LGP features (time-major T x total_dim).
inline ModelOutput model_forward(Model& model,
                                 const std::vector<FeatureMatrix>& lgp,
                                 const GroupAssignment& assignment) {
  if (assignment.n_groups != model.cfg().n_groups) {
    throw ShapeError("assignment group count does not match model");
  }
  std::vector<std::vector<FeatureMatrix>> slices;
  for (const auto& f : lgp) slices.push_back(group_slices(assignment, f));
  std::vector<std::size_t> idx(lgp.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return model.forward(pack_group_batch(slices, idx));
}

// Bona fide logit minus spoof logit of the ensemble output, per utterance.
inline std::vector<double> score(const ModelOutput& output) {
  const auto& b = output.ensemble;
  if (b.rank() != 2 || b.dim(1) < 2) throw ShapeError("score: expected N x 2 logits");
  std::vector<double> s(b.dim(0));
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = b.values()[i * b.dim(1)] - b.values()[i * b.dim(1) + 1];
  }
  return s;
}

struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> modules;  // summed over groups
  std::size_t total = 0;
};

inline ParamBreakdown describe(const Model& model) {
  ParamBreakdown out;
  for (const auto& p : model.parameters()) {
    auto it = std::find_if(out.modules.begin(), out.modules.end(),
                           [&](const auto& e) { return e.first == p.module; });
    if (it == out.modules.end()) {
      out.modules.emplace_back(p.module, p.tensor.numel());
    } else {
      it->second += p.tensor.numel();
    }
    out.total += p.tensor.numel();
  }
  return out;
}

inline constexpr std::string_view kCheckpointMagic = "GRN2CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, version, model config, group assignment record, u64 param
// count, then per parameter (name, u64 numel, doubles), u64 BN count, then
// per BN (u64 C, running mean, running var).
inline void save_checkpoint(const std::filesystem::path& path,
                            const Model& model,
                            const GroupAssignment& assignment) {
  io::BinaryWriter w(path.string());
  w.put_magic(kCheckpointMagic, kCheckpointVersion);
  const auto& c = model.cfg();
  for (int v : {c.n_groups, c.n_blocks, c.block.channels, c.block.kernel,
                c.block.stride, c.group_input_dim, c.n_classes}) {
    w.put(static_cast<std::int32_t>(v));
  }
  w.put(static_cast<std::uint8_t>(c.mfa));
  w.put(static_cast<std::uint8_t>(c.improved_block));
  w.put(c.bn_momentum);
  w.put(c.bn_epsilon);
  write_assignment_record(w, assignment);
  const auto params = model.parameters();
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put(static_cast<std::uint64_t>(p.tensor.numel()));
    w.put_array(p.tensor.values().data(), p.tensor.numel());
  }
  auto bns = const_cast<Model&>(model).batchnorms();
  w.put(static_cast<std::uint64_t>(bns.size()));
  for (const auto* bn : bns) {
    w.put(static_cast<std::uint64_t>(bn->channels()));
    w.put_array(bn->running_mean.data(), bn->channels());
    w.put_array(bn->running_var.data(), bn->channels());
  }
  w.close();
}

struct Checkpoint {
  Model model;
  GroupAssignment assignment;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path.string());
  r.expect_magic(kCheckpointMagic, kCheckpointVersion);
  ModelCfg c;
  int* fields[] = {&c.n_groups, &c.n_blocks, &c.block.channels, &c.block.kernel,
                   &c.block.stride, &c.group_input_dim, &c.n_classes};
  for (int* f : fields) *f = r.get<std::int32_t>();
  c.mfa = r.get<std::uint8_t>() != 0;
  c.improved_block = r.get<std::uint8_t>() != 0;
  c.bn_momentum = r.get<double>();
  c.bn_epsilon = r.get<double>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Checkpoint ck{Model::create(c, 0), read_assignment_record(r)};
  auto params = ck.model.parameters();
  if (r.get_count(1u << 24) != params.size()) {
    throw FormatError(path.string() + ": parameter list does not match config");
  }
  for (auto& p : params) {
    if (r.get_string() != p.name || r.get_count(1ull << 32) != p.tensor.numel()) {
      throw FormatError(path.string() + ": unexpected parameter " + p.name);
    }
    r.get_array(p.tensor.values().data(), p.tensor.numel());
  }
  auto bns = ck.model.batchnorms();
  if (r.get_count(1u << 24) != bns.size()) {
    throw FormatError(path.string() + ": batch-norm count mismatch");
  }
  for (auto* bn : bns) {
    if (r.get_count(1u << 24) != bn->channels()) {
      throw FormatError(path.string() + ": batch-norm width mismatch");
    }
    r.get_array(bn->running_mean.data(), bn->channels());
    r.get_array(bn->running_var.data(), bn->channels());
  }
  r.expect_end();
  ck.model.set_mode(ad::Mode::kEval);
  return ck;
}

}  // namespace gmmresnet
