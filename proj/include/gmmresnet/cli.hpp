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

// Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gmmresnet/config.hpp"
#include "gmmresnet/corpus_io.hpp"
#include "gmmresnet/eval.hpp"
#include "gmmresnet/model.hpp"
#include "gmmresnet/multiscale.hpp"
#include "gmmresnet/pipeline.hpp"
#include "gmmresnet/training.hpp"

namespace gmmresnet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

// The bank file is authoritative for which GMM orders feed the model.
inline void align_with_bank(PipelineConfig& cfg, const GmmBank& bank) {
  cfg.gmm_orders = bank.orders();
  cfg.multi_gmm = true;
  cfg.validate();
}

inline Manifest manifest_from(const std::string& protocol,
                              const std::string& audio_dir, Split split) {
  const auto labels = parse_protocol(std::filesystem::path(protocol));
  return build_manifest(labels, audio_dir, split);
}

inline void print_breakdown(std::ostream& out, const PipelineConfig& cfg) {
  const auto mc = cfg.model_cfg();
  out << "lfcc: " << cfg.lfcc.dim() << " dims, " << cfg.lfcc.frame_len_ms
      << " ms window, " << cfg.lfcc.frame_shift_ms << " ms shift, "
      << cfg.lfcc.fft_size << "-point FFT, " << cfg.lfcc.n_filters
      << " linear filters\n";
  const auto orders = cfg.effective_orders();
  out << "gmm orders:";
  for (int o : orders) out << ' ' << o;
  out << " (em iterations " << cfg.em.n_iterations << ")\n";
  out << "lgp feature: " << std::accumulate(orders.begin(), orders.end(), 0)
      << " x " << cfg.target_frames << "\n";
  out << "model: " << mc.n_groups << " group(s) of " << mc.group_input_dim
      << " dims, " << mc.n_blocks << " "
      << (mc.improved_block ? "improved" : "standard") << " blocks, "
      << mc.block.channels << " channels, kernel " << mc.block.kernel
      << ", mfa " << (mc.mfa ? "on" : "off") << ", loss "
      << (cfg.train.ensemble_aware_loss ? "ensemble-aware" : "ensemble CE")
      << "\n";
  const auto model = Model::create(mc, 0);
  const auto breakdown = describe(model);
  out << "parameters (summed over groups):\n";
  for (const auto& [name, count] : breakdown.modules) {
    out << "  " << std::left << std::setw(12) << name << ' ' << count << '\n';
  }
  out << "  " << std::left << std::setw(12) << "total" << ' ' << breakdown.total
      << '\n';
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out,
                    std::ostream& err) {
  CLI::App app{"GMM-based grouped ResNet countermeasure for synthetic speech "
               "detection"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file")
        ->check(CLI::ExistingFile);
  };

  // train-gmm
  std::string protocol, audio_dir, out_path, bank_path, cache_dir;
  std::optional<int> order, iters;
  auto* train_gmm = app.add_subcommand("train-gmm", "train the multi-order GMM bank");
  train_gmm->add_option("--protocol", protocol, "training protocol")->required();
  train_gmm->add_option("--audio-dir", audio_dir, "directory of <utt_id>.wav")->required();
  train_gmm->add_option("--out", out_path, "output bank file")->required();
  train_gmm->add_option("--order", order, "largest GMM order");
  train_gmm->add_option("--iters", iters, "EM iterations per split level");
  add_config(train_gmm);

  auto* extract = app.add_subcommand("extract-features", "write per-utterance LGP caches");
  extract->add_option("--protocol", protocol)->required();
  extract->add_option("--audio-dir", audio_dir)->required();
  extract->add_option("--bank", bank_path)->required()->check(CLI::ExistingFile);
  extract->add_option("--cache-dir", cache_dir)->required();
  add_config(extract);

  std::string dev_protocol, dev_audio_dir, log_path;
  std::optional<int> epochs;
  auto* train_model_cmd = app.add_subcommand("train-model", "train the grouped ResNet");
  train_model_cmd->add_option("--protocol", protocol)->required();
  train_model_cmd->add_option("--audio-dir", audio_dir)->required();
  train_model_cmd->add_option("--bank", bank_path)->required()->check(CLI::ExistingFile);
  train_model_cmd->add_option("--out", out_path, "checkpoint file")->required();
  train_model_cmd->add_option("--dev-protocol", dev_protocol);
  train_model_cmd->add_option("--dev-audio-dir", dev_audio_dir);
  train_model_cmd->add_option("--cache-dir", cache_dir);
  train_model_cmd->add_option("--log", log_path, "epoch CSV log (appended)");
  train_model_cmd->add_option("--epochs", epochs);
  add_config(train_model_cmd);

  std::string checkpoint_path;
  auto* score_cmd = app.add_subcommand("score", "score utterances with a checkpoint");
  score_cmd->add_option("--protocol", protocol)->required();
  score_cmd->add_option("--audio-dir", audio_dir)->required();
  score_cmd->add_option("--bank", bank_path)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", out_path, "score file")->required();
  score_cmd->add_option("--cache-dir", cache_dir);
  add_config(score_cmd);

  std::string scores_path;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compute the EER of a score file");
  evaluate_cmd->add_option("--scores", scores_path)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--protocol", protocol)->required()->check(CLI::ExistingFile);

  auto* describe_cmd = app.add_subcommand("describe", "print configuration and parameter counts");
  add_config(describe_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_gmm) {
      auto cfg = detail::config_or_default(config_path);
      if (iters) cfg.em.n_iterations = *iters;
      if (order) {
        std::vector<int> kept;
        for (int o : cfg.gmm_orders) {
          if (o <= *order) kept.push_back(o);
        }
        if (kept.empty() || kept.back() != *order) kept.push_back(*order);
        cfg.gmm_orders = kept;
      }
      cfg.validate();
      const auto manifest = detail::manifest_from(protocol, audio_dir, Split::kTrain);
      if (manifest.entries.empty()) throw Error("train-gmm: empty protocol");
      const auto frames = pool_frames(load_clips(manifest), cfg.lfcc);
      err << "training GMMs up to order " << cfg.max_order() << " on "
          << frames.rows() << " frames\n";
      const auto bank = train_gmm_bank(frames, cfg);
      save_bank(out_path, bank);
      out << "wrote bank with orders";
      for (int o : bank.orders()) out << ' ' << o;
      out << " to " << out_path << '\n';
    } else if (*extract) {
      auto cfg = detail::config_or_default(config_path);
      const auto bank = load_bank(bank_path);
      detail::align_with_bank(cfg, bank);
      const auto manifest = detail::manifest_from(protocol, audio_dir, Split::kTrain);
      std::filesystem::create_directories(cache_dir);
      for (const auto& e : manifest.entries) {
        auto clip = read_wav(e.audio_path);
        clip.utt_id = e.label.utt_id;
        write_feature_cache(cache_path(cache_dir, e.label.utt_id),
                            e.label.utt_id, clip_lgp(clip, bank, cfg));
      }
      out << "wrote " << manifest.entries.size() << " LGP records ("
          << bank.total_dim() << " x " << cfg.target_frames << ") to "
          << cache_dir << '\n';
    } else if (*train_model_cmd) {
      auto cfg = detail::config_or_default(config_path);
      if (epochs) cfg.train.epochs = *epochs;
      const auto bank = load_bank(bank_path);
      detail::align_with_bank(cfg, bank);
      const auto assignment = make_grouping(bank, cfg);
      const auto manifest = detail::manifest_from(protocol, audio_dir, Split::kTrain);
      std::optional<Manifest> dev;
      if (!dev_protocol.empty()) {
        dev = detail::manifest_from(
            dev_protocol, dev_audio_dir.empty() ? audio_dir : dev_audio_dir,
            Split::kDev);
      }
      const auto result = train(
          manifest, dev ? &*dev : nullptr, bank, assignment, cfg, cache_dir,
          [&](const EpochLog& e, Model&) {
            err << "epoch " << e.epoch << " train_loss " << e.train_loss
                << " dev_loss " << e.dev_loss << " lr " << e.lr << '\n';
            if (!log_path.empty()) append_epoch_log(log_path, e);
            return true;
          });
      save_checkpoint(out_path, result.best, assignment);
      out << "saved best checkpoint (epoch " << result.best_epoch << ") to "
          << out_path << '\n';
    } else if (*score_cmd) {
      auto cfg = detail::config_or_default(config_path);
      const auto bank = load_bank(bank_path);
      detail::align_with_bank(cfg, bank);
      auto ck = load_checkpoint(checkpoint_path);
      if (ck.assignment.orders != bank.orders()) {
        throw Error("score: checkpoint grouping does not match the GMM bank");
      }
      const auto manifest = detail::manifest_from(protocol, audio_dir, Split::kEval);
      const auto data = build_dataset(manifest, bank, ck.assignment, cfg, cache_dir);
      const auto records = score_dataset(ck.model, data, cfg.train);
      write_scores(std::filesystem::path(out_path), records);
      out << "wrote " << records.size() << " scores to " << out_path << '\n';
    } else if (*evaluate_cmd) {
      const auto records = read_scores(std::filesystem::path(scores_path));
      const auto labels = parse_protocol(std::filesystem::path(protocol));
      const auto eer = compute_eer(records, labels);
      out << std::fixed << std::setprecision(4) << "EER: " << eer.eer * 100.0
          << "%\n";
      out << std::defaultfloat << std::setprecision(10)
          << "threshold: " << eer.threshold << '\n';
    } else if (*describe_cmd) {
      detail::print_breakdown(out, detail::config_or_default(config_path));
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace gmmresnet
