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

// Linear-frequency cepstral coefficients: framing, Hamming window, 1024-point
// power spectrum, linear triangular filterbank, log, DCT-II, log-energy and
// +-2 frame regression deltas.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "gmmresnet/binary_io.hpp"
#include "gmmresnet/corpus_io.hpp"
#include "gmmresnet/errors.hpp"

namespace gmmresnet {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class FeatureKind : std::uint8_t { kLfcc = 0, kLgp = 1, kLgpGroup = 2 };

// Time-major: one row per frame, one column per feature dimension.
struct FeatureMatrix {
  Matrix values;
  FeatureKind kind = FeatureKind::kLfcc;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index dims() const { return values.cols(); }
  bool operator==(const FeatureMatrix& o) const {
    return kind == o.kind && values.rows() == o.values.rows() &&
           values.cols() == o.values.cols() && values == o.values;
  }
};

enum class WindowType { kHamming, kRectangular };

struct LfccConfig {
  int sample_rate = 16000;
  double frame_len_ms = 20.0;
  double frame_shift_ms = 10.0;
  int fft_size = 1024;
  int n_filters = 20;
  int n_ceps = 19;
  bool include_energy = true;
  bool deltas = true;
  double log_floor = 1e-10;
  WindowType window = WindowType::kHamming;

  int frame_length() const {
    return static_cast<int>(std::lround(sample_rate * frame_len_ms / 1000.0));
  }
  int frame_shift() const {
    return static_cast<int>(std::lround(sample_rate * frame_shift_ms / 1000.0));
  }
  int n_bins() const { return fft_size / 2 + 1; }
  int static_dim() const { return n_ceps + (include_energy ? 1 : 0); }
  int dim() const { return static_dim() * (deltas ? 3 : 1); }

  void validate() const {
    if (sample_rate <= 0 || frame_length() <= 0 || frame_shift() <= 0) {
      throw ConfigError("lfcc: sample rate and frame timings must be positive");
    }
    if (fft_size < frame_length()) {
      throw ConfigError("lfcc: fft_size must be >= frame length in samples");
    }
    if (n_ceps < 1 || n_ceps >= n_filters) {
      throw ConfigError("lfcc: need 1 <= n_ceps < n_filters");
    }
  }
};

inline std::vector<double> make_window(int length, WindowType type) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (type == WindowType::kHamming && length > 1) {
    for (int n = 0; n < length; ++n) {
      w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
    }
  }
  return w;
}

inline std::size_t num_frames(std::size_t n_samples, int frame_len,
                              int shift) {
  if (n_samples <= static_cast<std::size_t>(frame_len)) return 1;
  return (n_samples - frame_len) / shift + 1;
}

// Clips shorter than one frame are zero-padded to a single frame.
inline std::vector<std::vector<double>> frame_and_window(
    const AudioClip& clip, const LfccConfig& cfg) {
  cfg.validate();
  const int len = cfg.frame_length();
  const int shift = cfg.frame_shift();
  const auto window = make_window(len, cfg.window);
  const std::size_t n = num_frames(clip.samples.size(), len, shift);
  std::vector<std::vector<double>> frames(n, std::vector<double>(len, 0.0));
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t start = f * shift;
    for (int i = 0; i < len; ++i) {
      const std::size_t s = start + i;
      if (s < clip.samples.size()) frames[f][i] = clip.samples[s] * window[i];
    }
  }
  return frames;
}

// |FFT|^2 of the zero-padded frame, bins 0..fft_size/2.
inline std::vector<double> power_spectrum(std::span<const double> frame,
                                          int fft_size) {
  if (static_cast<int>(frame.size()) > fft_size) {
    throw ShapeError("power_spectrum: frame longer than fft_size");
  }
  std::vector<double> padded(static_cast<std::size_t>(fft_size), 0.0);
  std::copy(frame.begin(), frame.end(), padded.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  std::vector<double> power(static_cast<std::size_t>(fft_size / 2 + 1));
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
  return power;
}

// n_filters x n_bins triangular filters with centres spaced linearly over
// [0, sample_rate / 2].
inline Matrix linear_filterbank(const LfccConfig& cfg) {
  const int m_count = cfg.n_filters;
  const double nyquist = cfg.sample_rate / 2.0;
  std::vector<double> edges(static_cast<std::size_t>(m_count + 2));
  for (int m = 0; m < m_count + 2; ++m) {
    edges[m] = nyquist * m / (m_count + 1);
  }
  Matrix fb = Matrix::Zero(m_count, cfg.n_bins());
  for (int m = 0; m < m_count; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < cfg.n_bins(); ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      if (f > lo && f < hi) {
        fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

// Orthonormal DCT-II, first n_out coefficients.
inline std::vector<double> dct2(std::span<const double> x, int n_out) {
  const auto m = static_cast<int>(x.size());
  std::vector<double> c(static_cast<std::size_t>(n_out), 0.0);
  for (int j = 0; j < n_out; ++j) {
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      acc += x[i] * std::cos(std::numbers::pi * j * (i + 0.5) / m);
    }
    c[j] = acc * (j == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m));
  }
  return c;
}

// Regression deltas over +-2 frames with edge replication.
inline Matrix regression_deltas(const Matrix& x) {
  constexpr int kWin = 2;
  constexpr double kDenom = 2.0 * (1 * 1 + 2 * 2);
  const Eigen::Index t_count = x.rows();
  Matrix d = Matrix::Zero(t_count, x.cols());
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (int n = 1; n <= kWin; ++n) {
      const Eigen::Index ahead = std::min<Eigen::Index>(t + n, t_count - 1);
      const Eigen::Index behind = std::max<Eigen::Index>(t - n, 0);
      d.row(t) += n * (x.row(ahead) - x.row(behind));
    }
  }
  return d / kDenom;
}

// Static block is [c1..c_n_ceps, log-energy]; deltas and delta-deltas follow.
inline FeatureMatrix lfcc_extract(const AudioClip& clip,
                                  const LfccConfig& cfg = {}) {
  cfg.validate();
  const auto frames = frame_and_window(clip, cfg);
  const Matrix fb = linear_filterbank(cfg);
  const auto t_count = static_cast<Eigen::Index>(frames.size());
  Matrix stat(t_count, cfg.static_dim());
  std::vector<double> log_fb(static_cast<std::size_t>(cfg.n_filters));
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const auto& frame = frames[t];
    const auto power = power_spectrum(frame, cfg.fft_size);
    const Eigen::Map<const Vector> p(power.data(), cfg.n_bins());
    const Vector energies = fb * p;
    for (int m = 0; m < cfg.n_filters; ++m) {
      log_fb[m] = std::log(std::max(energies[m], cfg.log_floor));
    }
    const auto ceps = dct2(log_fb, cfg.n_ceps + 1);
    for (int j = 0; j < cfg.n_ceps; ++j) stat(t, j) = ceps[j + 1];
    if (cfg.include_energy) {
      double e = 0.0;
      for (double s : frame) e += s * s;
      stat(t, cfg.n_ceps) = std::log(std::max(e, cfg.log_floor));
    }
  }
  FeatureMatrix out;
  out.kind = FeatureKind::kLfcc;
  if (!cfg.deltas) {
    out.values = std::move(stat);
    return out;
  }
  const Matrix d1 = regression_deltas(stat);
  const Matrix d2 = regression_deltas(d1);
  out.values.resize(t_count, cfg.dim());
  out.values << stat, d1, d2;
  return out;
}

// Head truncation or cyclic tiling to exactly target_frames rows.
inline FeatureMatrix fix_length(const FeatureMatrix& feat,
                                Eigen::Index target_frames) {
  if (feat.frames() < 1) throw ShapeError("fix_length: empty feature matrix");
  if (target_frames < 1) throw ShapeError("fix_length: target must be >= 1");
  FeatureMatrix out;
  out.kind = feat.kind;
  out.values.resize(target_frames, feat.dims());
  for (Eigen::Index t = 0; t < target_frames; ++t) {
    out.values.row(t) = feat.values.row(t % feat.frames());
  }
  return out;
}

// Per-utterance cache record: magic, version, utt_id, kind, D, T, then T*D
// doubles in time-major row order.
inline constexpr std::string_view kFeatureMagic = "GRN2FEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void write_feature_cache(const std::filesystem::path& path,
                                const std::string& utt_id,
                                const FeatureMatrix& feat) {
  io::BinaryWriter w(path.string());
  w.put_magic(kFeatureMagic, kFeatureVersion);
  w.put_string(utt_id);
  w.put(static_cast<std::uint8_t>(feat.kind));
  w.put(static_cast<std::uint64_t>(feat.dims()));
  w.put(static_cast<std::uint64_t>(feat.frames()));
  w.put_array(feat.values.data(), static_cast<std::size_t>(feat.values.size()));
  w.close();
}

struct CachedFeature {
  std::string utt_id;
  FeatureMatrix feat;
};

inline CachedFeature read_feature_cache(const std::filesystem::path& path) {
  io::BinaryReader r(path.string());
  r.expect_magic(kFeatureMagic, kFeatureVersion);
  CachedFeature c;
  c.utt_id = r.get_string();
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw FormatError(path.string() + ": unknown feature kind");
  c.feat.kind = static_cast<FeatureKind>(kind);
  const auto dims = r.get_count(1u << 20);
  const auto frames = r.get_count(1u << 24);
  c.feat.values.resize(static_cast<Eigen::Index>(frames),
                       static_cast<Eigen::Index>(dims));
  r.get_array(c.feat.values.data(), static_cast<std::size_t>(dims * frames));
  r.expect_end();
  return c;
}

}  // namespace gmmresnet
