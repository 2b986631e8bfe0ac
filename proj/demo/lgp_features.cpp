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

// Trains a small GMM bank on a handful of WAV files and prints the shape of
// the grouped LGP features each file would feed to the network.
//
//   lgp_features a.wav b.wav c.wav ...

#include <iostream>

#include "gmmresnet/gmmresnet.hpp"

int main(int argc, char** argv) {
  using namespace gmmresnet;
  if (argc < 2) {
    std::cerr << "usage: " << argv[0] << " file.wav [file.wav ...]\n";
    return 2;
  }
  try {
    PipelineConfig cfg;
    cfg.gmm_orders = {8, 16, 32};
    cfg.n_groups = 4;
    cfg.em.n_iterations = 10;
    cfg.validate();

    std::vector<AudioClip> clips;
    for (int i = 1; i < argc; ++i) clips.push_back(read_wav(argv[i]));
    const Matrix frames = pool_frames(clips, cfg.lfcc);
    std::cout << "pooled " << frames.rows() << " LFCC frames of " << frames.cols()
              << " dims\n";

    const GmmBank bank = train_gmm_bank(frames, cfg);
    const GroupAssignment groups = make_grouping(bank, cfg);
    for (const auto& clip : clips) {
      const FeatureMatrix lgp = clip_lgp(clip, bank, cfg);
      const auto slices = group_slices(groups, lgp);
      std::cout << clip.utt_id << ": LGP " << lgp.dims() << " x " << lgp.frames()
                << " -> " << slices.size() << " groups of " << slices[0].dims()
                << " x " << slices[0].frames() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
