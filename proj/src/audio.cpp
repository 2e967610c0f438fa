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

#include "snrkit/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "snrkit/binary_io.hpp"
#include "snrkit/error.hpp"

namespace snrkit {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Shortest signal any synthesizer may produce: one 25 ms analysis window.
constexpr double kMinDurationS = 0.025;

std::size_t sample_count(double duration_s, int rate) {
  if (!(duration_s > 0.0) || rate <= 0) {
    fail(ErrorCode::kDomain, "duration and sample rate must be positive");
  }
  auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  auto min_n = static_cast<std::size_t>(std::llround(kMinDurationS * rate));
  if (n < min_n) fail(ErrorCode::kTooShort, "synthesis shorter than one analysis window");
  return n;
}

void normalize_rms(std::vector<double>& x, double rms) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p /= static_cast<double>(x.size());
  if (p <= 0.0) return;
  const double g = rms / std::sqrt(p);
  for (double& v : x) v *= g;
}

struct Formants {
  std::array<double, 3> centre_hz;
  std::array<double, 3> bandwidth_hz;
  std::array<double, 3> gain;
};

// Template c is placed on a lattice of first/second formant positions so that
// templates differ in coarse spectral shape; the speaker family applies a
// vocal-tract-length style scale.
Formants template_formants(int c, int speaker) {
  static constexpr std::array<double, 4> kF1 = {300.0, 520.0, 740.0, 960.0};
  static constexpr std::array<double, 8> kF2 = {1000.0, 1250.0, 1500.0, 1750.0,
                                                2000.0, 2250.0, 2500.0, 2750.0};
  const int a = c % 4;
  const int b = (c / 4) % 8;
  const int extra = c / 32;
  const double scale = 1.0 + 0.03 * static_cast<double>((speaker % 5) - 2);
  Formants f{};
  f.centre_hz = {kF1[a] * scale, kF2[b] * scale,
                 (3000.0 + 180.0 * ((c + extra) % 3)) * scale};
  f.bandwidth_hz = {90.0, 120.0, 180.0};
  f.gain = {1.0, 0.7 - 0.05 * (b % 3), 0.35};
  return f;
}

double envelope_gain(const Formants& f, double freq_hz) {
  double g = 0.02;
  for (int k = 0; k < 3; ++k) {
    const double z = (freq_hz - f.centre_hz[k]) / f.bandwidth_hz[k];
    g += f.gain[k] * std::exp(-0.5 * z * z);
  }
  return g;
}

void require_voice(const SynthSpec& spec) {
  if (spec.kind != SynthKind::kHarmonicVoice) {
    fail(ErrorCode::kKind, std::string("expected harmonic_voice, got ") + to_string(spec.kind));
  }
  if (!(spec.fundamental_hz > 0.0)) fail(ErrorCode::kDomain, "fundamental_hz must be positive");
  if (spec.voice.n_classes < 1) fail(ErrorCode::kDomain, "n_classes must be positive");
}

std::vector<double> white(std::size_t n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = gauss(rng);
  return x;
}

// Shapes white Gaussian noise to PSD ~ 1/f^exponent in the frequency domain.
std::vector<double> colored(std::size_t n, double exponent, int rate, Rng& rng) {
  std::size_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  std::vector<double> x = white(nfft, rng);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  const double df = static_cast<double>(rate) / static_cast<double>(nfft);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const std::size_t bin = std::min(k, nfft - k);
    if (bin == 0) {
      spec[k] = 0.0;
      continue;
    }
    spec[k] *= std::pow(static_cast<double>(bin) * df, -0.5 * exponent);
  }
  std::vector<double> y;
  fft.inv(y, spec);
  y.resize(n);
  return y;
}

std::vector<double> machinery(std::size_t n, const NoiseParams& p, int rate, Rng& rng) {
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  static constexpr std::array<double, 5> kPartials = {1.0, 2.0, 3.0, 5.0, 7.0};
  std::array<double, 5> ph{};
  for (double& v : ph) v = phase(rng);
  const double mod_phase = phase(rng);
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    double s = 0.0;
    for (std::size_t k = 0; k < kPartials.size(); ++k) {
      s += std::sin(kTwoPi * p.tone_hz * kPartials[k] * t + ph[k]) / kPartials[k];
    }
    x[i] = s * (1.0 + 0.5 * std::sin(kTwoPi * p.mod_hz * t + mod_phase));
  }
  normalize_rms(x, 1.0);
  std::vector<double> floor = white(n, rng);
  normalize_rms(floor, std::pow(10.0, p.floor_db / 20.0));
  for (std::size_t i = 0; i < n; ++i) x[i] += floor[i];
  return x;
}

}  // namespace

const char* to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::kHarmonicVoice: return "harmonic_voice";
    case SynthKind::kNoiseWhite: return "noise_white";
    case SynthKind::kNoisePink: return "noise_pink";
    case SynthKind::kNoiseBabble: return "noise_babble";
    case SynthKind::kNoiseMachinery: return "noise_machinery";
  }
  return "unknown";
}

SynthKind synth_kind_from_string(const std::string& name) {
  for (auto k : {SynthKind::kHarmonicVoice, SynthKind::kNoiseWhite, SynthKind::kNoisePink,
                 SynthKind::kNoiseBabble, SynthKind::kNoiseMachinery}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::kKind, "unknown synth kind '" + name + "'");
}

bool is_noise(SynthKind kind) { return kind != SynthKind::kHarmonicVoice; }

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  bin::expect_magic(is, "RIFF");
  bin::read_le<std::uint32_t>(is, "RIFF size");
  bin::expect_magic(is, "WAVE");

  bool have_fmt = false;
  int rate = 0;
  for (;;) {
    char id[4];
    is.read(id, 4);
    if (!is) fail(ErrorCode::kParse, "no data chunk in " + path.string());
    const auto size = bin::read_le<std::uint32_t>(is, "chunk size");
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      if (size < 16) fail(ErrorCode::kParse, "fmt chunk too small");
      const auto format = bin::read_le<std::uint16_t>(is, "audio format");
      const auto channels = bin::read_le<std::uint16_t>(is, "channels");
      rate = static_cast<int>(bin::read_le<std::uint32_t>(is, "sample rate"));
      bin::read_le<std::uint32_t>(is, "byte rate");
      bin::read_le<std::uint16_t>(is, "block align");
      const auto bits = bin::read_le<std::uint16_t>(is, "bits per sample");
      if (format != 1 || bits != 16) {
        fail(ErrorCode::kUnsupportedFormat, "only 16-bit PCM is supported");
      }
      if (channels != 1) fail(ErrorCode::kUnsupportedFormat, "only mono is supported");
      if (rate <= 0) fail(ErrorCode::kParse, "invalid sample rate");
      is.ignore(size - 16 + (size & 1U));
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) fail(ErrorCode::kParse, "data chunk before fmt chunk");
      if (size % 2 != 0) fail(ErrorCode::kParse, "odd data chunk size");
      Waveform w;
      w.sample_rate_hz = rate;
      w.samples.resize(size / 2);
      for (double& s : w.samples) {
        s = static_cast<double>(bin::read_le<std::int16_t>(is, "PCM data")) / 32768.0;
      }
      return w;
    } else {
      is.ignore(size + (size & 1U));
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  bin::write_magic(os, "RIFF");
  bin::write_le<std::uint32_t>(os, 36 + data_bytes);
  bin::write_magic(os, "WAVE");
  bin::write_magic(os, "fmt ");
  bin::write_le<std::uint32_t>(os, 16);
  bin::write_le<std::uint16_t>(os, 1);
  bin::write_le<std::uint16_t>(os, 1);
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate_hz));
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  bin::write_le<std::uint16_t>(os, 2);
  bin::write_le<std::uint16_t>(os, 16);
  bin::write_magic(os, "data");
  bin::write_le<std::uint32_t>(os, data_bytes);
  for (double s : w.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    bin::write_le<std::int16_t>(os, static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0)));
  }
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

double signal_power(const Waveform& w) {
  if (w.samples.empty()) fail(ErrorCode::kDomain, "power of empty waveform");
  double acc = 0.0;
  for (double s : w.samples) acc += s * s;
  return acc / static_cast<double>(w.samples.size());
}

double measure_snr_db(const Waveform& clean, const Waveform& noise) {
  return 10.0 * std::log10(signal_power(clean) / signal_power(noise));
}

NoisyMixture mix_at_snr(const Waveform& clean, const Waveform& noise,
                        double target_snr_db, std::size_t noise_offset) {
  if (clean.sample_rate_hz != noise.sample_rate_hz) {
    fail(ErrorCode::kDomain, "sample rates differ");
  }
  if (clean.samples.empty()) fail(ErrorCode::kDomain, "empty clean signal");
  if (noise.samples.size() < clean.samples.size() ||
      noise_offset > noise.samples.size() - clean.samples.size()) {
    fail(ErrorCode::kLength, "noise shorter than clean signal at the requested offset");
  }
  Waveform crop;
  crop.sample_rate_hz = noise.sample_rate_hz;
  const auto first = noise.samples.begin() + static_cast<std::ptrdiff_t>(noise_offset);
  crop.samples.assign(first, first + static_cast<std::ptrdiff_t>(clean.samples.size()));

  const double p_clean = signal_power(clean);
  const double p_noise = signal_power(crop);
  if (p_clean <= 0.0) fail(ErrorCode::kDomain, "clean signal has zero power");
  if (p_noise <= 0.0) fail(ErrorCode::kDomain, "noise crop has zero power");

  NoisyMixture out;
  out.target_snr_db = target_snr_db;
  out.noise_scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, target_snr_db / 10.0)));
  out.clean = clean;
  out.scaled_noise = std::move(crop);
  for (double& s : out.scaled_noise.samples) s *= out.noise_scale;
  out.mixed = clean;
  for (std::size_t i = 0; i < out.mixed.samples.size(); ++i) {
    out.mixed.samples[i] += out.scaled_noise.samples[i];
  }
  return out;
}

std::size_t random_crop_offset(std::size_t clean_len, std::size_t noise_len, Rng& rng) {
  if (noise_len < clean_len) fail(ErrorCode::kLength, "noise shorter than clean signal");
  std::uniform_int_distribution<std::size_t> dist(0, noise_len - clean_len);
  return dist(rng);
}

SynthVoice synth_voice(const SynthSpec& spec, int sample_rate_hz) {
  require_voice(spec);
  const std::size_t n = sample_count(spec.duration_s, sample_rate_hz);
  const double fs = sample_rate_hz;
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> seg_len(spec.voice.min_segment_s, spec.voice.max_segment_s);
  std::uniform_int_distribution<int> cls(0, spec.voice.n_classes - 1);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);

  SynthVoice out;
  for (std::size_t pos = 0; pos < n;) {
    auto len = static_cast<std::size_t>(std::max(1.0, std::round(seg_len(rng) * fs)));
    int label = cls(rng);
    // Consecutive segments always change template.
    if (!out.segments.empty() && spec.voice.n_classes > 1) {
      while (label == out.segments.back().label) label = cls(rng);
    }
    out.segments.push_back({pos, std::min(n, pos + len), label});
    pos += len;
  }

  const double vibrato_hz = 0.5 + 0.5 * uniform01(rng);
  const double vibrato_phase = phase(rng);
  const double am_hz = 3.0 + 2.0 * uniform01(rng);
  const double am_phase = phase(rng);
  const double f0_base = spec.fundamental_hz * (1.0 + 0.04 * ((spec.voice.speaker % 7) - 3));
  const double max_partial_hz = std::min(7000.0, 0.45 * fs);
  const auto crossfade = static_cast<std::size_t>(0.015 * fs);
  constexpr std::size_t kBlock = 32;

  std::vector<double> amp_prev, amp_cur, amp;
  std::vector<double> x(n, 0.0);
  double theta = 0.0;
  std::size_t seg = 0;
  for (std::size_t b0 = 0; b0 < n; b0 += kBlock) {
    const std::size_t b1 = std::min(n, b0 + kBlock);
    const std::size_t mid = (b0 + b1) / 2;
    while (out.segments[seg].end <= mid) ++seg;
    const double t_mid = static_cast<double>(mid) / fs;
    const double f0 = f0_base * (1.0 + 0.06 * std::sin(kTwoPi * vibrato_hz * t_mid + vibrato_phase));
    const auto n_harm = static_cast<std::size_t>(max_partial_hz / f0);

    // Harmonic amplitudes for this block, cross-faded across segment onsets.
    const Formants cur = template_formants(out.segments[seg].label, spec.voice.speaker);
    amp.assign(n_harm, 0.0);
    const std::size_t since = mid - out.segments[seg].begin;
    double alpha = 1.0;
    if (seg > 0 && since < crossfade) alpha = static_cast<double>(since) / static_cast<double>(crossfade);
    for (std::size_t h = 0; h < n_harm; ++h) {
      const double f = static_cast<double>(h + 1) * f0;
      double g = envelope_gain(cur, f);
      if (alpha < 1.0) {
        const Formants prev = template_formants(out.segments[seg - 1].label, spec.voice.speaker);
        g = alpha * g + (1.0 - alpha) * envelope_gain(prev, f);
      }
      amp[h] = g;
    }
    const double dtheta = kTwoPi * f0 / fs;
    for (std::size_t i = b0; i < b1; ++i) {
      theta += dtheta;
      if (theta > kTwoPi) theta -= kTwoPi;
      // sin((h+1) theta) by the Chebyshev recurrence.
      const double two_cos = 2.0 * std::cos(theta);
      double s_prev = 0.0;
      double s_cur = std::sin(theta);
      double s = 0.0;
      for (std::size_t h = 0; h < n_harm; ++h) {
        s += amp[h] * s_cur;
        const double s_next = two_cos * s_cur - s_prev;
        s_prev = s_cur;
        s_cur = s_next;
      }
      const double t = static_cast<double>(i) / fs;
      x[i] = s * (0.65 + 0.35 * std::sin(kTwoPi * am_hz * t + am_phase));
    }
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : x) v *= 0.5 / peak;
  }
  out.wave.samples = std::move(x);
  out.wave.sample_rate_hz = sample_rate_hz;
  return out;
}

Waveform synth_utterance(const SynthSpec& spec, int sample_rate_hz) {
  return synth_voice(spec, sample_rate_hz).wave;
}

Waveform synth_noise(const SynthSpec& spec, int sample_rate_hz) {
  if (!is_noise(spec.kind)) fail(ErrorCode::kKind, "synth_noise called with a voice kind");
  const std::size_t n = sample_count(spec.duration_s, sample_rate_hz);
  Rng rng(spec.seed);
  Waveform w;
  w.sample_rate_hz = sample_rate_hz;
  switch (spec.kind) {
    case SynthKind::kNoiseWhite:
      w.samples = white(n, rng);
      break;
    case SynthKind::kNoisePink:
      w.samples = colored(n, spec.noise.color_exponent, sample_rate_hz, rng);
      break;
    case SynthKind::kNoiseBabble: {
      if (spec.noise.n_voices < 1) fail(ErrorCode::kDomain, "babble needs at least one voice");
      w.samples.assign(n, 0.0);
      std::uniform_real_distribution<double> f0(95.0, 230.0);
      for (int v = 0; v < spec.noise.n_voices; ++v) {
        SynthSpec vs;
        vs.kind = SynthKind::kHarmonicVoice;
        vs.duration_s = spec.duration_s;
        vs.fundamental_hz = f0(rng);
        vs.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(v) + 1);
        vs.voice.speaker = v;
        Waveform talker = synth_utterance(vs, sample_rate_hz);
        normalize_rms(talker.samples, 1.0);
        for (std::size_t i = 0; i < n; ++i) w.samples[i] += talker.samples[i];
      }
      break;
    }
    case SynthKind::kNoiseMachinery:
      w.samples = machinery(n, spec.noise, sample_rate_hz, rng);
      break;
    case SynthKind::kHarmonicVoice:
      break;
  }
  normalize_rms(w.samples, 0.1);
  return w;
}

std::vector<int> frame_labels(const SynthVoice& voice, std::size_t window_len, std::size_t shift) {
  const std::size_t n = voice.wave.size();
  if (window_len == 0 || shift == 0) fail(ErrorCode::kDomain, "window and shift must be positive");
  if (n < window_len) fail(ErrorCode::kTooShort, "signal shorter than one window");
  const std::size_t frames = (n - window_len) / shift + 1;
  std::vector<int> labels(frames);
  std::size_t seg = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t centre = t * shift + window_len / 2;
    while (voice.segments[seg].end <= centre) ++seg;
    labels[t] = voice.segments[seg].label;
  }
  return labels;
}

}  // namespace snrkit
