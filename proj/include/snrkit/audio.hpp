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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "snrkit/rng.hpp"

namespace snrkit {

/// Mono PCM signal. Amplitudes are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

/// Result of mix_at_snr. `mixed = clean + scaled_noise` sample by sample.
struct NoisyMixture {
  Waveform mixed;
  Waveform clean;
  Waveform scaled_noise;
  double target_snr_db = 0.0;
  double noise_scale = 1.0;
};

enum class SynthKind {
  kHarmonicVoice,
  kNoiseWhite,
  kNoisePink,
  kNoiseBabble,
  kNoiseMachinery,
};

const char* to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& name);
bool is_noise(SynthKind kind);

// Shape parameters for the noise generators. Each kind reads only the fields
// relevant to it.
struct NoiseParams {
  double color_exponent = 1.0;  // pink: PSD ~ 1/f^exponent
  int n_voices = 8;             // babble
  double tone_hz = 90.0;        // machinery fundamental
  double mod_hz = 7.0;          // machinery amplitude-modulation rate
  double floor_db = -18.0;      // machinery broadband floor re. tonal power
};

// Harmonic voice parameters. A voice is a sequence of segments, each drawn
// from one of `n_classes` spectral-envelope templates; the template index is
// the frame label.
struct VoiceParams {
  int n_classes = 32;
  int speaker = 0;  // envelope-template family; shifts formants and f0
  double min_segment_s = 0.12;
  double max_segment_s = 0.25;
};

struct SynthSpec {
  SynthKind kind = SynthKind::kHarmonicVoice;
  double duration_s = 1.0;
  double fundamental_hz = 140.0;
  std::uint64_t seed = 0;
  VoiceParams voice;
  NoiseParams noise;
};

struct VoiceSegment {
  std::size_t begin = 0;  // first sample
  std::size_t end = 0;    // one past last sample
  int label = 0;
};

struct SynthVoice {
  Waveform wave;
  std::vector<VoiceSegment> segments;
};

Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Mean squared amplitude over the whole signal.
double signal_power(const Waveform& w);

/// 10 log10(Power(clean) / Power(noise)).
double measure_snr_db(const Waveform& clean, const Waveform& noise);

/// Scales a crop of `noise` starting at `noise_offset` so that the mixture
/// has exactly `target_snr_db` global SNR.
NoisyMixture mix_at_snr(const Waveform& clean, const Waveform& noise,
                        double target_snr_db, std::size_t noise_offset = 0);

/// Uniform crop offset such that the crop of length `clean_len` fits.
std::size_t random_crop_offset(std::size_t clean_len, std::size_t noise_len,
                               Rng& rng);

SynthVoice synth_voice(const SynthSpec& spec, int sample_rate_hz);
Waveform synth_utterance(const SynthSpec& spec, int sample_rate_hz);
Waveform synth_noise(const SynthSpec& spec, int sample_rate_hz);

/// Label of the segment covering each frame's centre sample.
std::vector<int> frame_labels(const SynthVoice& voice, std::size_t window_len,
                              std::size_t shift);

}  // namespace snrkit
