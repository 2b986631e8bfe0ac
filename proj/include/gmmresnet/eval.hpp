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

// Score files and equal error rate.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmmresnet/corpus_io.hpp"
#include "gmmresnet/errors.hpp"

namespace gmmresnet {

struct ScoreRecord {
  std::string utt_id;
  double score = 0.0;  // higher = more likely bona fide
  bool operator==(const ScoreRecord&) const = default;
};

inline void write_scores(std::ostream& out, std::span<const ScoreRecord> records) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : records) out << r.utt_id << ' ' << r.score << '\n';
}

inline void write_scores(const std::filesystem::path& path,
                         std::span<const ScoreRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  write_scores(out, records);
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<ScoreRecord> read_scores(std::istream& in) {
  std::vector<ScoreRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(std::move(t));
    if (tok.empty()) continue;
    if (tok.size() != 2) {
      throw ParseError("expected 'utt_id score': '" + line + "'", line_no);
    }
    ScoreRecord r{tok[0], 0.0};
    const char* first = tok[1].data();
    const char* last = first + tok[1].size();
    auto [ptr, ec] = std::from_chars(first, last, r.score);
    if (ec != std::errc() || ptr != last || !std::isfinite(r.score)) {
      throw ParseError("invalid score '" + tok[1] + "'", line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open score file " + path.string());
  return read_scores(in);
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Accept when score >= threshold. Operating points are every distinct score
// plus +inf; the EER is where the false-rejection and false-acceptance rates
// cross, interpolating linearly between the two bracketing points.
inline EerResult compute_eer(std::span<const double> bonafide,
                             std::span<const double> spoof) {
  if (bonafide.empty() || spoof.empty()) {
    throw Error("compute_eer: need at least one bona fide and one spoof score");
  }
  struct Item {
    double score;
    bool bona;
  };
  std::vector<Item> items;
  items.reserve(bonafide.size() + spoof.size());
  for (double s : bonafide) items.push_back({s, true});
  for (double s : spoof) items.push_back({s, false});
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });

  const double nb = static_cast<double>(bonafide.size());
  const double ns = static_cast<double>(spoof.size());
  double prev_frr = 0.0, prev_far = 1.0, prev_thr = items.front().score;
  std::size_t bona_below = 0, spoof_below = 0;
  std::size_t i = 0;
  while (true) {
    const bool at_end = i == items.size();
    const double thr = at_end ? std::numeric_limits<double>::infinity()
                              : items[i].score;
    const double frr = static_cast<double>(bona_below) / nb;
    const double far = static_cast<double>(spoof.size() - spoof_below) / ns;
    const double d = frr - far;
    if (d >= 0.0) {
      if (d == 0.0) return {frr, thr};
      const double prev_d = prev_frr - prev_far;
      const double alpha = -prev_d / (d - prev_d);
      EerResult r;
      r.eer = prev_frr + alpha * (frr - prev_frr);
      r.threshold = at_end ? prev_thr : prev_thr + alpha * (thr - prev_thr);
      return r;
    }
    prev_frr = frr;
    prev_far = far;
    prev_thr = thr;
    // Ties form a single operating point.
    const double value = items[i].score;
    while (i < items.size() && items[i].score == value) {
      (items[i].bona ? bona_below : spoof_below)++;
      ++i;
    }
  }
}

// Joins score records with protocol labels by utt_id.
inline EerResult compute_eer(std::span<const ScoreRecord> scores,
                             std::span<const UtteranceLabel> labels) {
  std::unordered_map<std::string, Key> keys;
  for (const auto& l : labels) keys.emplace(l.utt_id, l.key);
  std::vector<double> bona, spoof;
  for (const auto& r : scores) {
    auto it = keys.find(r.utt_id);
    if (it == keys.end()) {
      throw LookupError("no protocol label for scored utterance " + r.utt_id);
    }
    (it->second == Key::kBonafide ? bona : spoof).push_back(r.score);
  }
  return compute_eer(bona, spoof);
}

}  // namespace gmmresnet
