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

// key=value configuration covering every stage of the pipeline.
//
//   # comment
//   lfcc.n_filters = 20
//   features.gmm_orders = 64,128,256,512,1024
//   model.channels = 256
//
// Unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gmmresnet/errors.hpp"
#include "gmmresnet/gmm.hpp"
#include "gmmresnet/lfcc.hpp"
#include "gmmresnet/model.hpp"
#include "gmmresnet/training.hpp"

namespace gmmresnet {

enum class GroupingMethod { kLineage, kRandom };

struct PipelineConfig {
  LfccConfig lfcc;
  EmConfig em;
  std::vector<int> gmm_orders{64, 128, 256, 512, 1024};
  int target_frames = 400;
  bool multi_gmm = true;  // false keeps only the largest order
  int n_groups = 8;
  bool grouping = true;   // false collapses to a single branch
  GroupingMethod grouping_method = GroupingMethod::kLineage;
  std::uint64_t grouping_seed = 0;
  ModelCfg model;
  TrainConfig train;

  std::vector<int> effective_orders() const {
    if (multi_gmm || gmm_orders.empty()) return gmm_orders;
    return {*std::max_element(gmm_orders.begin(), gmm_orders.end())};
  }
  int effective_groups() const { return grouping ? n_groups : 1; }
  int max_order() const {
    return *std::max_element(gmm_orders.begin(), gmm_orders.end());
  }

  // Model configuration with the group count and per-group input width
  // implied by the feature settings.
  ModelCfg model_cfg() const {
    ModelCfg m = model;
    m.n_groups = effective_groups();
    const auto orders = effective_orders();
    m.group_input_dim = std::accumulate(orders.begin(), orders.end(), 0) /
                        m.n_groups;
    return m;
  }

  void validate() const {
    lfcc.validate();
    em.validate();
    train.validate();
    if (gmm_orders.empty()) throw ConfigError("features.gmm_orders is empty");
    for (std::size_t i = 0; i < gmm_orders.size(); ++i) {
      if (!is_power_of_two(gmm_orders[i])) {
        throw ConfigError("GMM orders must be powers of 2");
      }
      if (i && gmm_orders[i] <= gmm_orders[i - 1]) {
        throw ConfigError("GMM orders must be strictly increasing");
      }
    }
    if (target_frames < 1) throw ConfigError("features.target_frames must be >= 1");
    if (!is_power_of_two(n_groups)) throw ConfigError("grouping.groups must be a power of 2");
    for (int o : effective_orders()) {
      if (o < effective_groups()) {
        throw ConfigError("every GMM order must be >= the group count");
      }
    }
    model_cfg().validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config: bad value '" + text + "' for " + key);
  }
  return value;
}

inline bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: bad boolean '" + text + "' for " + key);
}

inline std::vector<int> parse_int_list(const std::string& text,
                                       const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    out.push_back(parse_number<int>(trim(item), key));
  }
  return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&,
                                  const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = [] {
    std::map<std::string, Setter> s;
    auto num = [](auto member) {
      return [member](PipelineConfig& c, const std::string& v,
                      const std::string& k) {
        auto& field = member(c);
        field = parse_number<std::remove_reference_t<decltype(field)>>(v, k);
      };
    };
    auto flag = [](auto member) {
      return [member](PipelineConfig& c, const std::string& v,
                      const std::string& k) { member(c) = parse_bool(v, k); };
    };
    s["lfcc.sample_rate"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.sample_rate; });
    s["lfcc.frame_len_ms"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.frame_len_ms; });
    s["lfcc.frame_shift_ms"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.frame_shift_ms; });
    s["lfcc.fft_size"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.fft_size; });
    s["lfcc.n_filters"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.n_filters; });
    s["lfcc.n_ceps"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.n_ceps; });
    s["lfcc.log_floor"] = num([](PipelineConfig& c) -> auto& { return c.lfcc.log_floor; });
    s["lfcc.include_energy"] = flag([](PipelineConfig& c) -> auto& { return c.lfcc.include_energy; });
    s["lfcc.deltas"] = flag([](PipelineConfig& c) -> auto& { return c.lfcc.deltas; });
    s["em.iterations"] = num([](PipelineConfig& c) -> auto& { return c.em.n_iterations; });
    s["em.variance_floor_ratio"] = num([](PipelineConfig& c) -> auto& { return c.em.variance_floor_ratio; });
    s["em.split_epsilon"] = num([](PipelineConfig& c) -> auto& { return c.em.split_epsilon; });
    s["features.gmm_orders"] = [](PipelineConfig& c, const std::string& v,
                                  const std::string& k) {
      c.gmm_orders = parse_int_list(v, k);
    };
    s["features.target_frames"] = num([](PipelineConfig& c) -> auto& { return c.target_frames; });
    s["features.multi_gmm"] = flag([](PipelineConfig& c) -> auto& { return c.multi_gmm; });
    s["grouping.groups"] = num([](PipelineConfig& c) -> auto& { return c.n_groups; });
    s["grouping.enabled"] = flag([](PipelineConfig& c) -> auto& { return c.grouping; });
    s["grouping.seed"] = num([](PipelineConfig& c) -> auto& { return c.grouping_seed; });
    s["grouping.method"] = [](PipelineConfig& c, const std::string& v,
                              const std::string& k) {
      if (v == "lineage") {
        c.grouping_method = GroupingMethod::kLineage;
      } else if (v == "random") {
        c.grouping_method = GroupingMethod::kRandom;
      } else {
        throw ConfigError("config: " + k + " must be 'lineage' or 'random'");
      }
    };
    s["model.blocks"] = num([](PipelineConfig& c) -> auto& { return c.model.n_blocks; });
    s["model.channels"] = num([](PipelineConfig& c) -> auto& { return c.model.block.channels; });
    s["model.kernel"] = num([](PipelineConfig& c) -> auto& { return c.model.block.kernel; });
    s["model.stride"] = num([](PipelineConfig& c) -> auto& { return c.model.block.stride; });
    s["model.mfa"] = flag([](PipelineConfig& c) -> auto& { return c.model.mfa; });
    s["model.improved_block"] = flag([](PipelineConfig& c) -> auto& { return c.model.improved_block; });
    s["model.bn_momentum"] = num([](PipelineConfig& c) -> auto& { return c.model.bn_momentum; });
    s["model.bn_epsilon"] = num([](PipelineConfig& c) -> auto& { return c.model.bn_epsilon; });
    s["train.learning_rate"] = num([](PipelineConfig& c) -> auto& { return c.train.learning_rate; });
    s["train.batch_size"] = num([](PipelineConfig& c) -> auto& { return c.train.batch_size; });
    s["train.epochs"] = num([](PipelineConfig& c) -> auto& { return c.train.epochs; });
    s["train.plateau_patience"] = num([](PipelineConfig& c) -> auto& { return c.train.plateau_patience; });
    s["train.plateau_factor"] = num([](PipelineConfig& c) -> auto& { return c.train.plateau_factor; });
    s["train.plateau_min_delta"] = num([](PipelineConfig& c) -> auto& { return c.train.plateau_min_delta; });
    s["train.seed"] = num([](PipelineConfig& c) -> auto& { return c.train.seed; });
    s["train.ensemble_aware_loss"] = flag([](PipelineConfig& c) -> auto& { return c.train.ensemble_aware_loss; });
    return s;
  }();
  return setters;
}

}  // namespace detail

inline PipelineConfig parse_config(std::istream& in, PipelineConfig cfg = {}) {
  const auto& setters = detail::config_setters();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ParseError("unknown config key '" + key + "'", line_no);
    try {
      it->second(cfg, value, key);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in);
}

}  // namespace gmmresnet
