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

// WAV decoding, ASVspoof-style protocol files and utterance manifests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "gmmresnet/errors.hpp"

namespace gmmresnet {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
  std::string utt_id;
};

enum class Key { kBonafide, kSpoof };

inline const char* key_name(Key key) {
  return key == Key::kBonafide ? "bonafide" : "spoof";
}

// Class index used by the classifier heads; score() relies on bona fide = 0.
inline int key_index(Key key) { return key == Key::kBonafide ? 0 : 1; }

struct UtteranceLabel {
  std::string speaker_id = "-";
  std::string utt_id;
  Key key = Key::kBonafide;
  std::optional<std::string> attack_id;

  bool operator==(const UtteranceLabel&) const = default;
};

enum class Split { kTrain, kDev, kEval };

struct ManifestEntry {
  std::filesystem::path audio_path;
  UtteranceLabel label;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::kTrain;
};

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_le32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff),
                     char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline void put_le16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}

}  // namespace detail

// Reads a mono PCM WAV (16-bit integer or 32-bit IEEE float). Integer samples
// are divided by 2^15. The utterance id defaults to the file stem.
inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(where + "not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::size_t size = detail::le32(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Some writers leave a bogus data size; clamp the final data chunk.
      if (std::memcmp(chunk, "data", 4) == 0) {
        size = bytes.size() - body;
      } else {
        throw FormatError(where + "chunk exceeds file size");
      }
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(where + "fmt chunk too short");
      format = detail::le16(bytes.data() + body);
      channels = detail::le16(bytes.data() + body + 2);
      rate = detail::le32(bytes.data() + body + 4);
      bits = detail::le16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) {  // WAVE_FORMAT_EXTENSIBLE
        format = detail::le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw FormatError(where + "missing fmt chunk");
  if (data == nullptr) throw FormatError(where + "missing data chunk");
  if (rate == 0) throw FormatError(where + "zero sample rate");
  if (channels != 1) {
    throw UnsupportedError(where + std::to_string(channels) +
                           " channels; only mono is supported, downmix the "
                           "file to a single channel first");
  }

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.utt_id = path.stem().string();
  if (format == 1 && bits == 16) {
    const std::size_t n = data_size / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = static_cast<std::int16_t>(detail::le16(data + 2 * i));
      clip.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_size / 4;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = detail::le32(data + 4 * i);
      float f;
      std::memcpy(&f, &u, sizeof f);
      clip.samples[i] = static_cast<double>(f);
    }
  } else {
    throw UnsupportedError(where + "unsupported sample format (format tag " +
                           std::to_string(format) + ", " +
                           std::to_string(bits) +
                           " bits); expected 16-bit PCM or 32-bit float");
  }
  if (clip.samples.empty()) throw FormatError(where + "no samples");
  return clip;
}

enum class WavEncoding { kPcm16, kFloat32 };

// Writes a mono WAV. PCM16 samples are clamped to [-1, 1) and rounded.
inline void write_wav(const std::filesystem::path& path,
                      std::span<const double> samples, int sample_rate,
                      WavEncoding encoding = WavEncoding::kPcm16) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t block = bits / 8;
  const auto data_size = static_cast<std::uint32_t>(samples.size() * block);
  out.write("RIFF", 4);
  detail::put_le32(out, 36 + data_size);
  out.write("WAVEfmt ", 8);
  detail::put_le32(out, 16);
  detail::put_le16(out, encoding == WavEncoding::kPcm16 ? 1 : 3);
  detail::put_le16(out, 1);
  detail::put_le32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_le32(out, static_cast<std::uint32_t>(sample_rate) * block);
  detail::put_le16(out, block);
  detail::put_le16(out, bits);
  out.write("data", 4);
  detail::put_le32(out, data_size);
  for (double s : samples) {
    if (encoding == WavEncoding::kPcm16) {
      double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      detail::put_le16(out, static_cast<std::uint16_t>(v));
    } else {
      auto f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      detail::put_le32(out, u);
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

// Protocol lines: speaker_id utt_id unused attack_id key
inline std::vector<UtteranceLabel> parse_protocol(std::istream& in) {
  std::vector<UtteranceLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(std::move(t));
    if (tok.empty()) continue;
    if (tok.size() != 5) {
      throw ParseError("expected 5 fields, got " + std::to_string(tok.size()) +
                           ": '" + line + "'",
                       line_no);
    }
    UtteranceLabel label;
    label.speaker_id = tok[0];
    label.utt_id = tok[1];
    if (tok[3] != "-") label.attack_id = tok[3];
    if (tok[4] == "bonafide") {
      label.key = Key::kBonafide;
    } else if (tok[4] == "spoof") {
      label.key = Key::kSpoof;
    } else {
      throw ParseError("unknown key '" + tok[4] + "' in '" + line + "'",
                       line_no);
    }
    labels.push_back(std::move(label));
  }
  return labels;
}

inline std::vector<UtteranceLabel> parse_protocol(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open protocol " + path.string());
  return parse_protocol(in);
}

inline void serialize_protocol(std::ostream& out,
                               std::span<const UtteranceLabel> labels) {
  for (const auto& l : labels) {
    out << l.speaker_id << ' ' << l.utt_id << " - "
        << l.attack_id.value_or("-") << ' ' << key_name(l.key) << '\n';
  }
}

// Resolves <audio_dir>/<utt_id>.wav for every label, in protocol order.
inline Manifest build_manifest(std::span<const UtteranceLabel> protocol,
                               const std::filesystem::path& audio_dir,
                               Split split) {
  Manifest manifest;
  manifest.split = split;
  std::unordered_set<std::string> seen;
  std::vector<std::string> missing;
  for (const auto& label : protocol) {
    if (!seen.insert(label.utt_id).second) {
      throw LookupError("duplicate utt_id in protocol: " + label.utt_id);
    }
    auto path = audio_dir / (label.utt_id + ".wav");
    if (!std::filesystem::is_regular_file(path)) {
      missing.push_back(label.utt_id);
      continue;
    }
    manifest.entries.push_back({path, label});
  }
  if (!missing.empty()) {
    std::string msg = "missing audio for " + std::to_string(missing.size()) +
                      " utterance(s) under " + audio_dir.string() + ":";
    for (const auto& id : missing) msg += " " + id;
    throw LookupError(msg);
  }
  return manifest;
}

}  // namespace gmmresnet
