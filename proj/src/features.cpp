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

#include "snrkit/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "snrkit/binary_io.hpp"
#include "snrkit/error.hpp"

namespace snrkit {
namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double nyquist_or(double fmax, int rate) { return fmax > 0.0 ? fmax : 0.5 * rate; }

void validate(const MelConfig& cfg, int rate) {
  const double fmax = nyquist_or(cfg.fmax_hz, rate);
  if (cfg.n_mels < 2) fail(ErrorCode::kConfig, "n_mels must be >= 2");
  if (!(cfg.fmin_hz >= 0.0 && cfg.fmin_hz < fmax && fmax <= 0.5 * rate)) {
    fail(ErrorCode::kConfig, "require 0 <= fmin < fmax <= Nyquist");
  }
  if (!(cfg.log_floor > 0.0)) fail(ErrorCode::kConfig, "log_floor must be positive");
}

}  // namespace

std::size_t FrameConfig::window_samples(int rate) const {
  return static_cast<std::size_t>(std::llround(window_ms * rate / 1000.0));
}

std::size_t FrameConfig::shift_samples(int rate) const {
  return static_cast<std::size_t>(std::llround(shift_ms * rate / 1000.0));
}

Frames frame_signal(const Waveform& w, const FrameConfig& cfg) {
  if (!(cfg.shift_ms > 0.0 && cfg.shift_ms <= cfg.window_ms)) {
    fail(ErrorCode::kConfig, "require 0 < shift_ms <= window_ms");
  }
  const std::size_t len = cfg.window_samples(w.sample_rate_hz);
  const std::size_t shift = cfg.shift_samples(w.sample_rate_hz);
  if (len == 0 || shift == 0) fail(ErrorCode::kConfig, "window shorter than one sample");
  if (w.size() < len) fail(ErrorCode::kTooShort, "waveform shorter than one analysis window");

  const std::size_t count = (w.size() - len) / shift + 1;
  Eigen::VectorXd window = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(len));
  if (cfg.window == WindowFn::kHamming && len > 1) {
    for (std::size_t i = 0; i < len; ++i) {
      window[static_cast<Eigen::Index>(i)] =
          0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len - 1));
    }
  }
  Frames out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(len));
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t i = 0; i < len; ++i) {
      out.data(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) =
          w.samples[t * shift + i] * window[static_cast<Eigen::Index>(i)];
    }
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::VectorXd mel_centre_frequencies(const MelConfig& cfg, int rate) {
  validate(cfg, rate);
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(nyquist_or(cfg.fmax_hz, rate));
  const double step = (hi - lo) / (cfg.n_mels + 1);
  Eigen::VectorXd c(cfg.n_mels);
  for (int j = 0; j < cfg.n_mels; ++j) c[j] = mel_to_hz(lo + step * (j + 1));
  return c;
}

Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, int rate, std::size_t fft_size) {
  validate(cfg, rate);
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(nyquist_or(cfg.fmax_hz, rate));
  const double step = (hi - lo) / (cfg.n_mels + 1);
  const auto bins = static_cast<Eigen::Index>(fft_size / 2 + 1);
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, bins);
  for (Eigen::Index k = 0; k < bins; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * rate / static_cast<double>(fft_size));
    for (int j = 0; j < cfg.n_mels; ++j) {
      const double left = lo + step * j;
      const double centre = left + step;
      const double right = centre + step;
      double w = 0.0;
      if (mel > left && mel <= centre) {
        w = (mel - left) / step;
      } else if (mel > centre && mel < right) {
        w = (right - mel) / step;
      }
      fb(j, k) = w;
    }
  }
  return fb;
}

FeatureMatrix mel_features(const Frames& frames, const MelConfig& cfg) {
  const auto len = static_cast<std::size_t>(frames.data.cols());
  const std::size_t nfft = cfg.fft_size == 0 ? next_pow2(len) : cfg.fft_size;
  if (nfft < len) fail(ErrorCode::kConfig, "fft_size smaller than frame length");
  if ((nfft & (nfft - 1)) != 0) fail(ErrorCode::kConfig, "fft_size must be a power of two");
  const Eigen::MatrixXd fb = mel_filterbank(cfg, frames.sample_rate_hz, nfft);

  FeatureMatrix out;
  out.rows.resize(frames.count(), cfg.n_mels);
  Eigen::FFT<double> fft;
  std::vector<double> buf(nfft, 0.0);
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd power(static_cast<Eigen::Index>(nfft / 2 + 1));
  for (Eigen::Index t = 0; t < frames.count(); ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < len; ++i) buf[i] = frames.data(t, static_cast<Eigen::Index>(i));
    fft.fwd(spec, buf);
    for (Eigen::Index k = 0; k < power.size(); ++k) power[k] = std::norm(spec[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd energies = fb * power;
    for (int j = 0; j < cfg.n_mels; ++j) {
      out.rows(t, j) = std::log(std::max(energies[j], cfg.log_floor));
    }
  }
  return out;
}

FeatureMatrix splice_context(const FeatureMatrix& f, int left, int right) {
  if (f.spliced) fail(ErrorCode::kState, "features are already spliced");
  if (left < 0 || right < 0) fail(ErrorCode::kConfig, "context must be non-negative");
  const Eigen::Index m = f.frame_count();
  const Eigen::Index d = f.dim();
  const Eigen::Index width = left + right + 1;
  FeatureMatrix out;
  out.utt_id = f.utt_id;
  out.spliced = true;
  out.rows.resize(m, d * width);
  for (Eigen::Index t = 0; t < m; ++t) {
    for (Eigen::Index o = -left; o <= right; ++o) {
      const Eigen::Index src = std::clamp<Eigen::Index>(t + o, 0, m - 1);
      out.rows.block(t, (o + left) * d, 1, d) = f.rows.row(src);
    }
  }
  return out;
}

void apply_cmvn(FeatureMatrix& f) {
  if (f.frame_count() == 0) return;
  const Eigen::RowVectorXd mean = f.rows.colwise().mean();
  f.rows.rowwise() -= mean;
  const Eigen::RowVectorXd sd =
      (f.rows.array().square().colwise().sum() / static_cast<double>(f.frame_count())).sqrt();
  for (Eigen::Index j = 0; j < f.dim(); ++j) {
    if (sd[j] > 1e-12) f.rows.col(j) /= sd[j];
  }
}

FeatureMatrix extract_features(const Waveform& w, const FeatureConfig& cfg, const std::string& utt_id) {
  FeatureMatrix raw = mel_features(frame_signal(w, cfg.frame), cfg.mel);
  raw.utt_id = utt_id;
  if (cfg.cmvn) apply_cmvn(raw);
  return splice_context(raw, cfg.left_context, cfg.right_context);
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  bin::write_magic(os, "FEAT1");
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.dim()));
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.frame_count()));
  for (Eigen::Index t = 0; t < f.frame_count(); ++t) {
    for (Eigen::Index j = 0; j < f.dim(); ++j) bin::write_f64(os, f.rows(t, j));
  }
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

FeatureMatrix read_feature_file(const std::filesystem::path& path, bool spliced) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  bin::expect_magic(is, "FEAT1");
  const auto dim = bin::read_le<std::uint32_t>(is, "dim");
  const auto m = bin::read_le<std::uint32_t>(is, "frame count");
  FeatureMatrix f;
  f.utt_id = path.stem().string();
  f.spliced = spliced;
  f.rows.resize(m, dim);
  for (Eigen::Index t = 0; t < f.frame_count(); ++t) {
    for (Eigen::Index j = 0; j < f.dim(); ++j) f.rows(t, j) = bin::read_f64(is, "feature data");
  }
  return f;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.precision(17);
  for (Eigen::Index t = 0; t < f.frame_count(); ++t) {
    for (Eigen::Index j = 0; j < f.dim(); ++j) {
      if (j > 0) os << ',';
      os << f.rows(t, j);
    }
    os << '\n';
  }
}

}  // namespace snrkit
