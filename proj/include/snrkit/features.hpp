// Copyright 2026 The snrkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "snrkit/audio.hpp"

namespace snrkit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class WindowFn { kHamming, kRectangular };

struct FrameConfig {
  double window_ms = 25.0;
  double shift_ms = 10.0;
  WindowFn window = WindowFn::kHamming;

  std::size_t window_samples(int rate) const;
  std::size_t shift_samples(int rate) const;
};

struct MelConfig {
  int n_mels = 40;
  double fmin_hz = 20.0;
  double fmax_hz = 0.0;     // 0 selects Nyquist
  std::size_t fft_size = 0; // 0 selects next power of two >= window length
  double log_floor = 1e-10;
};

/// Windowed analysis frames, one per row.
struct Frames {
  RowMatrix data;
  int sample_rate_hz = 16000;

  Eigen::Index count() const { return data.rows(); }
};

/// Per-utterance log-mel features, one frame per row.
struct FeatureMatrix {
  RowMatrix rows;
  std::string utt_id;
  bool spliced = false;

  Eigen::Index frame_count() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

struct FeatureConfig {
  FrameConfig frame;
  MelConfig mel;
  int left_context = 5;
  int right_context = 5;
  bool cmvn = false;  // per-utterance mean/variance normalization
};

Frames frame_signal(const Waveform& w, const FrameConfig& cfg);

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular unit-peak filters over the rfft bins, n_mels x (fft_size/2+1).
Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, int sample_rate_hz, std::size_t fft_size);

/// Centre frequency of each filter in Hz.
Eigen::VectorXd mel_centre_frequencies(const MelConfig& cfg, int sample_rate_hz);

FeatureMatrix mel_features(const Frames& frames, const MelConfig& cfg);

FeatureMatrix splice_context(const FeatureMatrix& f, int left = 5, int right = 5);

void apply_cmvn(FeatureMatrix& f);

/// frame -> log-mel -> (optional cmvn) -> splice.
FeatureMatrix extract_features(const Waveform& w, const FeatureConfig& cfg,
                               const std::string& utt_id = {});

// "FEAT1" | dim u32 | m u32 | m*dim little-endian f64, row-major.
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix read_feature_file(const std::filesystem::path& path, bool spliced = false);
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& f);

}  // namespace snrkit
