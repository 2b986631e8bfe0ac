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

// Glue from manifests to trained models and scores.

#include <filesystem>
#include <string>
#include <vector>

#include "gmmresnet/config.hpp"
#include "gmmresnet/corpus_io.hpp"
#include "gmmresnet/eval.hpp"
#include "gmmresnet/gmm.hpp"
#include "gmmresnet/lfcc.hpp"
#include "gmmresnet/model.hpp"
#include "gmmresnet/multiscale.hpp"
#include "gmmresnet/training.hpp"

namespace gmmresnet {

inline FeatureMatrix clip_lfcc(const AudioClip& clip, const LfccConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw UnsupportedError(clip.utt_id + ": sample rate " +
                           std::to_string(clip.sample_rate) + " Hz, expected " +
                           std::to_string(cfg.sample_rate) +
                           " Hz (resample the corpus first)");
  }
  return lfcc_extract(clip, cfg);
}

// LFCC frames of every clip stacked into one matrix for GMM training.
inline Matrix pool_frames(const std::vector<AudioClip>& clips,
                          const LfccConfig& cfg) {
  std::vector<FeatureMatrix> feats;
  Eigen::Index rows = 0;
  for (const auto& c : clips) {
    feats.push_back(clip_lfcc(c, cfg));
    rows += feats.back().frames();
  }
  Matrix pooled(rows, cfg.dim());
  Eigen::Index at = 0;
  for (const auto& f : feats) {
    pooled.middleRows(at, f.frames()) = f.values;
    at += f.frames();
  }
  return pooled;
}

inline std::vector<AudioClip> load_clips(const Manifest& manifest) {
  std::vector<AudioClip> clips;
  for (const auto& e : manifest.entries) {
    auto clip = read_wav(e.audio_path);
    clip.utt_id = e.label.utt_id;
    clips.push_back(std::move(clip));
  }
  return clips;
}

// One splitting run up to the largest configured order; the bank keeps the
// configured orders.
inline GmmBank train_gmm_bank(const Matrix& frames, const PipelineConfig& cfg) {
  const auto models = train_by_splitting(frames, cfg.max_order(), cfg.em);
  return select_orders(models, cfg.effective_orders());
}

inline GroupAssignment make_grouping(const GmmBank& bank,
                                     const PipelineConfig& cfg) {
  return cfg.grouping_method == GroupingMethod::kLineage
             ? lineage_grouping(bank, cfg.effective_groups())
             : random_grouping(bank, cfg.effective_groups(), cfg.grouping_seed);
}

// Length-fixed LFCC followed by the multi-order LGP transform.
inline FeatureMatrix clip_lgp(const AudioClip& clip, const GmmBank& bank,
                              const PipelineConfig& cfg) {
  return extract_multiscale_lgp(
      bank, fix_length(clip_lfcc(clip, cfg.lfcc), cfg.target_frames));
}

inline std::filesystem::path cache_path(const std::filesystem::path& dir,
                                        const std::string& utt_id) {
  return dir / (utt_id + ".lgp");
}

// Uses cached LGP features when `cache_dir` is non-empty and holds a record
// of the right width; otherwise extracts from audio (and fills the cache).
inline Dataset build_dataset(const Manifest& manifest, const GmmBank& bank,
                             const GroupAssignment& assignment,
                             const PipelineConfig& cfg,
                             const std::filesystem::path& cache_dir = {}) {
  Dataset data;
  for (const auto& e : manifest.entries) {
    FeatureMatrix lgp;
    bool cached = false;
    if (!cache_dir.empty()) {
      const auto p = cache_path(cache_dir, e.label.utt_id);
      if (std::filesystem::exists(p)) {
        auto rec = read_feature_cache(p);
        if (rec.feat.dims() == bank.total_dim() &&
            rec.feat.frames() == cfg.target_frames) {
          lgp = std::move(rec.feat);
          cached = true;
        }
      }
    }
    if (!cached) {
      auto clip = read_wav(e.audio_path);
      clip.utt_id = e.label.utt_id;
      lgp = clip_lgp(clip, bank, cfg);
      if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        write_feature_cache(cache_path(cache_dir, e.label.utt_id),
                            e.label.utt_id, lgp);
      }
    }
    data.utt_ids.push_back(e.label.utt_id);
    data.slices.push_back(group_slices(assignment, lgp));
    data.labels.push_back(key_index(e.label.key));
  }
  return data;
}

inline TrainResult train(const Manifest& train_manifest,
                         const Manifest* dev_manifest, const GmmBank& bank,
                         const GroupAssignment& assignment,
                         const PipelineConfig& cfg,
                         const std::filesystem::path& cache_dir = {},
                         const EpochCallback& on_epoch = {}) {
  if (train_manifest.entries.empty()) throw Error("train: empty training manifest");
  const auto train_data = build_dataset(train_manifest, bank, assignment, cfg, cache_dir);
  Dataset dev_data;
  if (dev_manifest) {
    dev_data = build_dataset(*dev_manifest, bank, assignment, cfg, cache_dir);
  }
  return train_model(train_data, dev_manifest ? &dev_data : nullptr,
                     cfg.model_cfg(), cfg.train, on_epoch);
}

inline std::vector<ScoreRecord> score_dataset(Model& model, const Dataset& data,
                                              const TrainConfig& cfg) {
  const auto ev = evaluate(model, data, cfg);
  std::vector<ScoreRecord> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back({data.utt_ids[i], ev.scores[i]});
  }
  return out;
}

}  // namespace gmmresnet
