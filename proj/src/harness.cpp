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

#include "snrkit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "snrkit/error.hpp"
#include "snrkit/stats.hpp"

namespace snrkit {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCorpusStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kTrainMixStream = 3;
constexpr std::uint64_t kTestMixStream = 4;
constexpr std::uint64_t kMcStream = 5;
constexpr std::uint64_t kClassifierStream = 6;
constexpr std::uint64_t kVarnetStream = 7;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

McConfig effective_mc(const ExperimentConfig& cfg) {
  McConfig mc = cfg.mc;
  mc.seed = derive_seed(cfg.seed, kMcStream, cfg.mc.seed);
  return mc;
}

std::size_t noise_index(const ExperimentConfig& cfg, const std::string& name) {
  const auto it = std::find(cfg.noise_types.begin(), cfg.noise_types.end(), name);
  if (it == cfg.noise_types.end()) fail(ErrorCode::kMissing, "noise type '" + name + "' not in experiment");
  return static_cast<std::size_t>(it - cfg.noise_types.begin());
}

// Clean voices for one split, rendered once per stage.
std::vector<SynthVoice> render_split(const ExperimentConfig& cfg, const std::vector<const CorpusUtterance*>& utts) {
  std::vector<SynthVoice> voices(utts.size());
  parallel_for(utts.size(), cfg.worker_count(),
               [&](std::size_t i) { voices[i] = synth_voice(utts[i]->spec, cfg.sample_rate_hz); });
  return voices;
}

std::vector<Waveform> noise_bank(const ExperimentConfig& cfg, bool train) {
  std::vector<Waveform> bank(cfg.noise_types.size());
  parallel_for(bank.size(), cfg.worker_count(),
               [&](std::size_t i) { bank[i] = noise_track(cfg, cfg.noise_types[i], train); });
  return bank;
}

Dataset classifier_dataset(const ExperimentConfig& cfg, const std::vector<SynthVoice>& voices) {
  const std::size_t len = cfg.features.frame.window_samples(cfg.sample_rate_hz);
  const std::size_t shift = cfg.features.frame.shift_samples(cfg.sample_rate_hz);
  std::vector<FeatureMatrix> feats(voices.size());
  parallel_for(voices.size(), cfg.worker_count(),
               [&](std::size_t i) { feats[i] = extract_features(voices[i].wave, cfg.features); });
  Eigen::Index rows = 0;
  for (const auto& f : feats) rows += f.frame_count();
  Dataset ds;
  ds.inputs.resize(rows, feats.front().dim());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const std::vector<int> labels = frame_labels(voices[i], len, shift);
    if (static_cast<Eigen::Index>(labels.size()) != feats[i].frame_count()) {
      fail(ErrorCode::kDimension, "label track length differs from frame count");
    }
    ds.inputs.middleRows(at, feats[i].frame_count()) = feats[i].rows;
    ds.labels.insert(ds.labels.end(), labels.begin(), labels.end());
    at += feats[i].frame_count();
  }
  return ds;
}

double accuracy(const MlpParams& p, const Dataset& ds) {
  const RowMatrix logits = forward_batch(p, ds.inputs);
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == ds.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

// SNR assigned to training utterance `utt` for `noise` and mix `r`; cycles
// through the grid so each noise type covers every level.
double train_snr(const ExperimentConfig& cfg, std::size_t utt, std::size_t noise, int r) {
  const std::size_t g = cfg.train_snr_grid.size();
  const std::size_t k = utt * static_cast<std::size_t>(cfg.regress_mixes_per_utt) + static_cast<std::size_t>(r);
  return cfg.train_snr_grid[(k + 7 * noise) % g];
}

struct MixJob {
  std::size_t utt = 0;
  std::size_t noise = 0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

Waveform mix_job(const ExperimentConfig& cfg, const MixJob& job, const std::vector<SynthVoice>& voices,
                 const std::vector<Waveform>& bank) {
  const Waveform& clean = voices[job.utt].wave;
  const Waveform& noise = bank[job.noise];
  Rng rng(job.seed);
  const std::size_t offset = random_crop_offset(clean.size(), noise.size(), rng);
  (void)cfg;
  return mix_at_snr(clean, noise, job.snr_db, offset).mixed;
}

void svg_panel(std::ostream& os, const TrendReport& report, const std::vector<std::string>& noises,
               double TrendRow::*field, const std::string& title, double x0, double y0, double w, double h) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const TrendRow& r : report.rows) {
    xmin = std::min(xmin, r.snr_db);
    xmax = std::max(xmax, r.snr_db);
    ymin = std::min(ymin, r.*field);
    ymax = std::max(ymax, r.*field);
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double pad = 40.0;
  auto px = [&](double x) { return x0 + pad + (x - xmin) / (xmax - xmin) * (w - 2 * pad); };
  auto py = [&](double y) { return y0 + h - pad - (y - ymin) / (ymax - ymin) * (h - 2 * pad); };
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  os << "<g>\n<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + 20 << "\" text-anchor=\"middle\" font-size=\"14\">"
     << title << "</text>\n";
  os << "<rect x=\"" << x0 + pad << "\" y=\"" << y0 + pad << "\" width=\"" << w - 2 * pad << "\" height=\""
     << h - 2 * pad << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + h - 8 << "\" text-anchor=\"middle\" font-size=\"11\">SNR (dB) "
     << fmt_double(xmin) << " .. " << fmt_double(xmax) << "</text>\n";
  for (std::size_t n = 0; n < noises.size(); ++n) {
    os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kColors[n % 10] << "\" points=\"";
    for (const TrendRow& r : report.series(noises[n])) os << px(r.snr_db) << ',' << py(r.*field) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << x0 + w - pad + 4 << "\" y=\"" << y0 + pad + 12 * (n + 1) << "\" font-size=\"10\" fill=\""
       << kColors[n % 10] << "\">" << noises[n] << "</text>\n";
  }
  os << "</g>\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Noise profiles and configuration

const std::vector<NoiseProfile>& builtin_noise_profiles() {
  static const std::vector<NoiseProfile> kProfiles = [] {
    std::vector<NoiseProfile> p;
    auto add = [&](std::string name, SynthKind kind, auto tweak) {
      NoiseProfile np{std::move(name), kind, {}};
      tweak(np.params);
      p.push_back(std::move(np));
    };
    add("white", SynthKind::kNoiseWhite, [](NoiseParams&) {});
    add("pink", SynthKind::kNoisePink, [](NoiseParams& n) { n.color_exponent = 1.0; });
    add("babble", SynthKind::kNoiseBabble, [](NoiseParams& n) { n.n_voices = 8; });
    add("machinery", SynthKind::kNoiseMachinery, [](NoiseParams&) {});
    add("brown", SynthKind::kNoisePink, [](NoiseParams& n) { n.color_exponent = 2.0; });
    add("crowd", SynthKind::kNoiseBabble, [](NoiseParams& n) { n.n_voices = 16; });
    add("hum", SynthKind::kNoiseMachinery, [](NoiseParams& n) {
      n.tone_hz = 50.0;
      n.mod_hz = 2.0;
      n.floor_db = -30.0;
    });
    add("cafe", SynthKind::kNoiseBabble, [](NoiseParams& n) { n.n_voices = 24; });
    add("hiss", SynthKind::kNoisePink, [](NoiseParams& n) { n.color_exponent = 0.5; });
    add("engine", SynthKind::kNoiseMachinery, [](NoiseParams& n) {
      n.tone_hz = 31.0;
      n.mod_hz = 15.0;
      n.floor_db = -10.0;
    });
    return p;
  }();
  return kProfiles;
}

const NoiseProfile& find_noise_profile(const std::string& name) {
  for (const NoiseProfile& p : builtin_noise_profiles()) {
    if (p.name == name) return p;
  }
  fail(ErrorCode::kConfig, "unknown noise type '" + name + "'");
}

const char* to_string(Method m) {
  switch (m) {
    case Method::kF1: return "f1";
    case Method::kF2: return "f2";
    case Method::kF3: return "f3";
    case Method::kBaseline: return "baseline";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (auto m : {Method::kF1, Method::kF2, Method::kF3, Method::kBaseline}) {
    if (s == to_string(m)) return m;
  }
  fail(ErrorCode::kConfig, "unknown method '" + s + "' (expected f1, f2, f3 or baseline)");
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  for (const NoiseProfile& p : builtin_noise_profiles()) c.noise_types.push_back(p.name);
  c.varnet_noise_types.assign(c.noise_types.begin(), c.noise_types.begin() + 6);
  for (int s = -10; s <= 30; ++s) c.train_snr_grid.push_back(s);
  c.eval_snr_grid = {-10, -5, 0, 5, 10};
  c.trend_snr_grid = {-10, -5, 0, 5, 10, 20, 30};
  // Per-utterance CMVN keeps utterance loudness out of the scores.
  c.features.cmvn = true;
  c.varnet.train.epochs = 40;
  return c;
}

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter int_field(T ExperimentConfig::*f) {
  return [f](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.*f = static_cast<T>(parse_int(k, v));
  };
}

Setter double_field(double ExperimentConfig::*f) {
  return [f](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*f = parse_double(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> kSetters = {
      {"seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"audio.sample_rate_hz", int_field(&ExperimentConfig::sample_rate_hz)},
      {"corpus.n_classes", int_field(&ExperimentConfig::n_classes)},
      {"corpus.n_speakers_equiv", int_field(&ExperimentConfig::n_speakers_equiv)},
      {"corpus.n_train_utts", int_field(&ExperimentConfig::n_train_utts)},
      {"corpus.n_test_utts", int_field(&ExperimentConfig::n_test_utts)},
      {"corpus.n_calib_utts", int_field(&ExperimentConfig::n_calib_utts)},
      {"corpus.utt_duration_s", double_field(&ExperimentConfig::utt_duration_s)},
      {"corpus.noise_duration_s", double_field(&ExperimentConfig::noise_duration_s)},
      {"noise.types", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.noise_types = split_list(v); }},
      {"noise.varnet_types",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.varnet_noise_types = split_list(v); }},
      {"snr.train_grid",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train_snr_grid = parse_double_list(k, v); }},
      {"snr.eval_grid",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.eval_snr_grid = parse_double_list(k, v); }},
      {"snr.trend_grid",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trend_snr_grid = parse_double_list(k, v); }},
      {"harness.regress_mixes_per_utt", int_field(&ExperimentConfig::regress_mixes_per_utt)},
      {"harness.varnet_utts_per_noise", int_field(&ExperimentConfig::varnet_utts_per_noise)},
      {"harness.threads", int_field(&ExperimentConfig::threads)},
      {"harness.write_varnet_dataset",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.write_varnet_dataset = parse_bool(k, v); }},
      {"mc.n_samples", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.mc.n_samples = static_cast<int>(parse_int(k, v));
       }},
      {"mc.pre_softmax",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.mc.pre_softmax = parse_bool(k, v); }},
      {"mc.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.mc.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"features.window_ms",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.frame.window_ms = parse_double(k, v); }},
      {"features.shift_ms",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.frame.shift_ms = parse_double(k, v); }},
      {"features.window", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "hamming") {
           c.features.frame.window = WindowFn::kHamming;
         } else if (v == "rectangular") {
           c.features.frame.window = WindowFn::kRectangular;
         } else {
           fail(ErrorCode::kConfig, k + ": expected hamming or rectangular");
         }
       }},
      {"features.n_mels", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.features.mel.n_mels = static_cast<int>(parse_int(k, v));
       }},
      {"features.fmin_hz",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.mel.fmin_hz = parse_double(k, v); }},
      {"features.fmax_hz",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.mel.fmax_hz = parse_double(k, v); }},
      {"features.fft_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.features.mel.fft_size = static_cast<std::size_t>(parse_int(k, v));
       }},
      {"features.log_floor",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.mel.log_floor = parse_double(k, v); }},
      {"features.left_context", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.features.left_context = static_cast<int>(parse_int(k, v));
       }},
      {"features.right_context", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.features.right_context = static_cast<int>(parse_int(k, v));
       }},
      {"features.cmvn", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.features.cmvn = parse_bool(k, v); }},
      {"net.hidden_units", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classifier.hidden_units = static_cast<int>(parse_int(k, v));
       }},
      {"net.hidden_layers", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classifier.hidden_layers = static_cast<int>(parse_int(k, v));
       }},
      {"net.drop_prob",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.classifier.drop_prob = parse_double(k, v); }},
      {"train.lr", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.classifier.train.lr = parse_double(k, v); }},
      {"train.epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classifier.train.epochs = static_cast<int>(parse_int(k, v));
       }},
      {"train.batch_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classifier.train.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"train.l2", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.classifier.train.l2 = parse_double(k, v); }},
      {"train.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classifier.train.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"varnet.hidden_units", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.varnet.hidden_units = static_cast<int>(parse_int(k, v));
       }},
      {"varnet.hidden_layers", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.varnet.hidden_layers = static_cast<int>(parse_int(k, v));
       }},
      {"varnet.lr", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.varnet.train.lr = parse_double(k, v); }},
      {"varnet.epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.varnet.train.epochs = static_cast<int>(parse_int(k, v));
       }},
      {"varnet.batch_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.varnet.train.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"varnet.l2", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.varnet.train.l2 = parse_double(k, v); }},
      {"varnet.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.varnet.train.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"regress.degree", int_field(&ExperimentConfig::regressor_degree)},
      {"regress.score_source", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "varnet") {
           c.score_source = ScoreSource::kVarnet;
         } else if (v == "mc") {
           c.score_source = ScoreSource::kMc;
         } else {
           fail(ErrorCode::kConfig, k + ": expected varnet or mc");
         }
       }},
  };
  return kSetters;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  ExperimentConfig c = defaults();
  for (const auto& [key, value] : kv.values()) {
    const auto it = setters().find(key);
    if (it == setters().end()) fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
    it->second(c, key, value);
  }
  c.validate();
  return c;
}

KeyValueConfig ExperimentConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("seed", std::to_string(seed));
  kv.set("audio.sample_rate_hz", std::to_string(sample_rate_hz));
  kv.set("corpus.n_classes", std::to_string(n_classes));
  kv.set("corpus.n_speakers_equiv", std::to_string(n_speakers_equiv));
  kv.set("corpus.n_train_utts", std::to_string(n_train_utts));
  kv.set("corpus.n_test_utts", std::to_string(n_test_utts));
  kv.set("corpus.n_calib_utts", std::to_string(n_calib_utts));
  kv.set("corpus.utt_duration_s", fmt_double(utt_duration_s));
  kv.set("corpus.noise_duration_s", fmt_double(noise_duration_s));
  kv.set("noise.types", join(noise_types));
  kv.set("noise.varnet_types", join(varnet_noise_types));
  kv.set("snr.train_grid", fmt_list(train_snr_grid));
  kv.set("snr.eval_grid", fmt_list(eval_snr_grid));
  kv.set("snr.trend_grid", fmt_list(trend_snr_grid));
  kv.set("harness.regress_mixes_per_utt", std::to_string(regress_mixes_per_utt));
  kv.set("harness.varnet_utts_per_noise", std::to_string(varnet_utts_per_noise));
  kv.set("harness.threads", std::to_string(threads));
  kv.set("harness.write_varnet_dataset", write_varnet_dataset ? "true" : "false");
  kv.set("mc.n_samples", std::to_string(mc.n_samples));
  kv.set("mc.pre_softmax", mc.pre_softmax ? "true" : "false");
  kv.set("mc.seed", std::to_string(mc.seed));
  kv.set("features.window_ms", fmt_double(features.frame.window_ms));
  kv.set("features.shift_ms", fmt_double(features.frame.shift_ms));
  kv.set("features.window", features.frame.window == WindowFn::kHamming ? "hamming" : "rectangular");
  kv.set("features.n_mels", std::to_string(features.mel.n_mels));
  kv.set("features.fmin_hz", fmt_double(features.mel.fmin_hz));
  kv.set("features.fmax_hz", fmt_double(features.mel.fmax_hz));
  kv.set("features.fft_size", std::to_string(features.mel.fft_size));
  kv.set("features.log_floor", fmt_double(features.mel.log_floor));
  kv.set("features.left_context", std::to_string(features.left_context));
  kv.set("features.right_context", std::to_string(features.right_context));
  kv.set("features.cmvn", features.cmvn ? "true" : "false");
  kv.set("net.hidden_units", std::to_string(classifier.hidden_units));
  kv.set("net.hidden_layers", std::to_string(classifier.hidden_layers));
  kv.set("net.drop_prob", fmt_double(classifier.drop_prob));
  kv.set("train.lr", fmt_double(classifier.train.lr));
  kv.set("train.epochs", std::to_string(classifier.train.epochs));
  kv.set("train.batch_size", std::to_string(classifier.train.batch_size));
  kv.set("train.l2", fmt_double(classifier.train.l2));
  kv.set("train.seed", std::to_string(classifier.train.seed));
  kv.set("varnet.hidden_units", std::to_string(varnet.hidden_units));
  kv.set("varnet.hidden_layers", std::to_string(varnet.hidden_layers));
  kv.set("varnet.lr", fmt_double(varnet.train.lr));
  kv.set("varnet.epochs", std::to_string(varnet.train.epochs));
  kv.set("varnet.batch_size", std::to_string(varnet.train.batch_size));
  kv.set("varnet.l2", fmt_double(varnet.train.l2));
  kv.set("varnet.seed", std::to_string(varnet.train.seed));
  kv.set("regress.degree", std::to_string(regressor_degree));
  kv.set("regress.score_source", score_source == ScoreSource::kVarnet ? "varnet" : "mc");
  return kv;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, what);
  };
  require(sample_rate_hz > 0, "sample rate must be positive");
  require(n_classes >= 2, "need at least two classes");
  require(n_speakers_equiv >= 1, "need at least one speaker family");
  require(n_train_utts >= 1 && n_test_utts >= 1, "need train and test utterances");
  require(n_calib_utts >= 0, "n_calib_utts must be non-negative");
  require(utt_duration_s > 0.0 && noise_duration_s >= utt_duration_s, "noise tracks must outlast utterances");
  require(!noise_types.empty(), "need at least one noise type");
  for (const auto& n : noise_types) find_noise_profile(n);
  for (const auto& n : varnet_noise_types) {
    require(std::find(noise_types.begin(), noise_types.end(), n) != noise_types.end(),
            "varnet noise type '" + n + "' not in noise.types");
  }
  require(!varnet_noise_types.empty(), "need at least one varnet noise type");
  require(!train_snr_grid.empty() && !eval_snr_grid.empty() && !trend_snr_grid.empty(), "SNR grids must be non-empty");
  require(regress_mixes_per_utt >= 1, "regress_mixes_per_utt must be >= 1");
  require(varnet_utts_per_noise >= 1, "varnet_utts_per_noise must be >= 1");
  require(mc.n_samples >= 2, "mc.n_samples must be >= 2");
  require(regressor_degree >= 0, "regressor degree must be >= 0");
  require(classifier.hidden_layers >= 1, "classifier needs a hidden layer");
  require(features.left_context >= 0 && features.right_context >= 0, "context must be non-negative");
}

int ExperimentConfig::worker_count() const {
  if (threads > 0) return threads;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Corpus

std::vector<const CorpusUtterance*> Corpus::split(Split which) const {
  std::vector<const CorpusUtterance*> out;
  for (const auto& u : utterances) {
    if (u.split == which) out.push_back(&u);
  }
  return out;
}

Corpus build_corpus(const ExperimentConfig& cfg) {
  cfg.validate();
  Corpus c;
  // Test utterances keep their seeds whatever the calibration split size.
  const int total = cfg.n_train_utts + cfg.n_test_utts + cfg.n_calib_utts;
  for (int i = 0; i < total; ++i) {
    CorpusUtterance u;
    int local = i;
    const char* prefix = "train_";
    if (i >= cfg.n_train_utts + cfg.n_test_utts) {
      u.split = Split::kCalib;
      local = i - cfg.n_train_utts - cfg.n_test_utts;
      prefix = "calib_";
    } else if (i >= cfg.n_train_utts) {
      u.split = Split::kTest;
      local = i - cfg.n_train_utts;
      prefix = "test_";
    }
    std::ostringstream id;
    id << prefix << std::setw(5) << std::setfill('0') << local;
    u.utt_id = id.str();
    u.spec.kind = SynthKind::kHarmonicVoice;
    u.spec.duration_s = cfg.utt_duration_s;
    u.spec.seed = derive_seed(cfg.seed, kCorpusStream, static_cast<std::uint64_t>(i));
    u.spec.voice.n_classes = cfg.n_classes;
    u.spec.voice.speaker = i % cfg.n_speakers_equiv;
    // Speaker families span a typical adult f0 range.
    const double frac = cfg.n_speakers_equiv > 1
                            ? static_cast<double>(u.spec.voice.speaker) / (cfg.n_speakers_equiv - 1)
                            : 0.5;
    u.spec.fundamental_hz = 100.0 + 120.0 * frac;
    c.utterances.push_back(std::move(u));
  }
  return c;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const Corpus& corpus) {
  fs::create_directories(dir / "labels");
  fs::create_directories(dir / "features");
  std::ofstream os(dir / "manifest.csv");
  if (!os) fail(ErrorCode::kIo, "cannot write manifest in " + dir.string());
  os << "utt_id,kind,seed,duration_s,label_track_path\n";
  const std::size_t len = cfg.features.frame.window_samples(cfg.sample_rate_hz);
  const std::size_t shift = cfg.features.frame.shift_samples(cfg.sample_rate_hz);
  for (const CorpusUtterance& u : corpus.utterances) {
    const std::string label_path = "labels/" + u.utt_id + ".txt";
    os << u.utt_id << ',' << to_string(u.spec.kind) << ',' << u.spec.seed << ',' << fmt_double(u.spec.duration_s)
       << ',' << label_path << '\n';
    const SynthVoice v = synth_voice(u.spec, cfg.sample_rate_hz);
    std::ofstream ls(dir / label_path);
    for (int l : frame_labels(v, len, shift)) ls << l << '\n';
    // Clean, unspliced log-mel features for inspection.
    FeatureMatrix f = mel_features(frame_signal(v.wave, cfg.features.frame), cfg.features.mel);
    f.utt_id = u.utt_id;
    write_feature_file(dir / "features" / (u.utt_id + ".feat"), f);
  }
}

Waveform noise_track(const ExperimentConfig& cfg, const std::string& noise_type, bool train) {
  const NoiseProfile& profile = find_noise_profile(noise_type);
  SynthSpec spec;
  spec.kind = profile.kind;
  spec.noise = profile.params;
  spec.duration_s = cfg.noise_duration_s;
  spec.seed = derive_seed(cfg.seed, kNoiseStream,
                          derive_seed(std::hash<std::string>{}(noise_type) & 0xffffffffULL, train ? 1 : 2));
  return synth_noise(spec, cfg.sample_rate_hz);
}

// ---------------------------------------------------------------------------
// Logging

StageLog::StageLog(const fs::path& path, bool verbose) : verbose_(verbose) {
  if (!path.empty()) {
    fs::create_directories(path.parent_path());
    os_.open(path, std::ios::app);
  }
}

void StageLog::note(const std::string& line) {
  if (os_) os_ << line << '\n' << std::flush;
  if (verbose_) std::cerr << line << '\n';
}

void StageLog::stage(const std::string& name, double seconds, const std::string& detail) {
  std::ostringstream os;
  os << "stage=" << name << " seconds=" << std::fixed << std::setprecision(2) << seconds;
  if (!detail.empty()) os << ' ' << detail;
  note(os.str());
}

// ---------------------------------------------------------------------------
// Pipeline stages

ClassifierResult stage_train_classifier(const ExperimentConfig& cfg, const Corpus& corpus, const fs::path& dir,
                                        StageLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_voices = render_split(cfg, corpus.split(Split::kTrain));
  Dataset data = classifier_dataset(cfg, train_voices);

  Eigen::RowVectorXd mean, sd;
  column_stats(data.inputs, 0.1, mean, sd);
  data.inputs = (data.inputs.rowwise() - mean).array().rowwise() / sd.array();

  TrainConfig tc = cfg.classifier.train;
  tc.objective = Objective::kCrossEntropy;
  tc.seed = derive_seed(cfg.seed, kClassifierStream, cfg.classifier.train.seed);
  MlpParams init = mlp_init(mlp_specs(static_cast<int>(data.inputs.cols()), cfg.classifier.hidden_units,
                                      cfg.classifier.hidden_layers, cfg.n_classes, cfg.classifier.drop_prob),
                            tc.seed);
  TrainResult tr = train(std::move(init), data, tc, [&](int epoch, double loss) {
    std::ostringstream os;
    os << "classifier epoch=" << epoch << " loss=" << std::setprecision(6) << loss;
    log.note(os.str());
  });
  fold_input_standardization(tr.params, mean, sd);

  ClassifierResult out;
  out.final_loss = tr.final_loss;
  out.params = std::move(tr.params);
  out.clean_test_accuracy = clean_frame_accuracy(cfg, corpus, out.params);
  if (!dir.empty()) {
    fs::create_directories(dir / "models");
    write_model(dir / "models" / "classifier.mlp", out.params);
  }
  std::ostringstream detail;
  detail << "frames=" << data.size() << " final_loss=" << std::setprecision(6) << out.final_loss
         << " clean_train_accuracy=" << accuracy(out.params, classifier_dataset(cfg, train_voices))
         << " clean_test_accuracy=" << out.clean_test_accuracy;
  log.stage("train_classifier", seconds_since(t0), detail.str());
  return out;
}

double clean_frame_accuracy(const ExperimentConfig& cfg, const Corpus& corpus, const MlpParams& p) {
  const auto voices = render_split(cfg, corpus.split(Split::kTest));
  return accuracy(p, classifier_dataset(cfg, voices));
}

std::vector<ScoreRow> stage_score_training(const ExperimentConfig& cfg, const Corpus& corpus,
                                           const MlpParams& classifier, StageLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto utts = corpus.split(Split::kTrain);
  const auto voices = render_split(cfg, utts);
  const auto bank = noise_bank(cfg, true);
  const McConfig mc = effective_mc(cfg);

  std::vector<MixJob> jobs;
  for (std::size_t n = 0; n < cfg.noise_types.size(); ++n) {
    for (std::size_t u = 0; u < utts.size(); ++u) {
      for (int r = 0; r < cfg.regress_mixes_per_utt; ++r) {
        const std::uint64_t key = (static_cast<std::uint64_t>(n) << 40) ^ (static_cast<std::uint64_t>(u) << 8) ^
                                  static_cast<std::uint64_t>(r);
        jobs.push_back({u, n, train_snr(cfg, u, n, r), derive_seed(cfg.seed, kTrainMixStream, key)});
      }
    }
  }
  std::vector<ScoreRow> rows(jobs.size());
  parallel_for(jobs.size(), cfg.worker_count(), [&](std::size_t i) {
    const MixJob& job = jobs[i];
    const Waveform mixed = mix_job(cfg, job, voices, bank);
    const FeatureMatrix f = extract_features(mixed, cfg.features, utts[job.utt]->utt_id);
    ScoreRow& row = rows[i];
    row.utt_id = utts[job.utt]->utt_id;
    row.noise = cfg.noise_types[job.noise];
    row.snr_db = job.snr_db;
    row.entropy = utterance_entropy(classifier, f).value;
    row.mc_mu = utterance_uncertainty(classifier, f, mc).value;
    row.baseline_db = baseline_energy_percentile_snr(mixed);
  });
  log.stage("score_training", seconds_since(t0), "rows=" + std::to_string(rows.size()));
  return rows;
}

VarianceNetwork stage_distill_varnet(const ExperimentConfig& cfg, const Corpus& corpus, const MlpParams& classifier,
                                     const fs::path& dir, StageLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto utts = corpus.split(cfg.distill_split());
  const auto voices = render_split(cfg, utts);
  const auto bank = noise_bank(cfg, true);
  const McConfig mc = effective_mc(cfg);

  std::vector<MixJob> jobs;
  const std::size_t per_noise = std::min(utts.size(), static_cast<std::size_t>(cfg.varnet_utts_per_noise));
  for (const std::string& name : cfg.varnet_noise_types) {
    const std::size_t n = noise_index(cfg, name);
    for (std::size_t u = 0; u < per_noise; ++u) {
      const std::uint64_t key = (static_cast<std::uint64_t>(n) << 40) ^ (static_cast<std::uint64_t>(u) << 8);
      jobs.push_back({u, n, train_snr(cfg, u, n, 0), derive_seed(cfg.seed, kTrainMixStream, key)});
    }
  }
  std::vector<FeatureMatrix> feats(jobs.size());
  parallel_for(jobs.size(), cfg.worker_count(), [&](std::size_t i) {
    feats[i] = extract_features(mix_job(cfg, jobs[i], voices, bank), cfg.features, utts[jobs[i].utt]->utt_id);
  });

  // MC targets per utterance in parallel, then concatenated in job order.
  std::vector<VarnetDataset> parts(jobs.size());
  parallel_for(jobs.size(), cfg.worker_count(),
               [&](std::size_t i) { parts[i] = build_varnet_dataset(classifier, {feats[i]}, mc); });
  VarnetDataset ds;
  {
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.size();
    ds.features.resize(rows, classifier.input_dim());
    Eigen::VectorXd raw(rows);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      ds.features.middleRows(at, p.size()) = p.features;
      for (Eigen::Index i = 0; i < p.size(); ++i) raw[at + i] = p.affine.invert(p.targets[i]);
      at += p.size();
    }
    const double mean = raw.mean();
    const double sd = std::sqrt((raw.array() - mean).square().mean());
    ds.affine = {mean, sd > 0.0 ? sd : 1.0};
    ds.targets = raw.unaryExpr([&](double t) { return ds.affine.standardize(t); });
  }
  if (!dir.empty() && cfg.write_varnet_dataset) write_varnet_dataset(dir / "varnet_dataset.vnds", ds);

  VarnetTrainConfig vc = cfg.varnet;
  vc.train.seed = derive_seed(cfg.seed, kVarnetStream, cfg.varnet.train.seed);
  VarianceNetwork vn = train_varnet(ds, vc, [&](int epoch, double loss) {
    std::ostringstream os;
    os << "varnet epoch=" << epoch << " loss=" << std::setprecision(6) << loss;
    log.note(os.str());
  });
  if (!dir.empty()) {
    fs::create_directories(dir / "models");
    write_varnet(dir / "models" / "varnet.mlp", vn);
  }
  std::ostringstream detail;
  detail << "rows=" << ds.size() << " target_mean=" << std::setprecision(6) << ds.affine.offset
         << " target_sd=" << ds.affine.scale;
  log.stage("distill_varnet", seconds_since(t0), detail.str());
  return vn;
}

void add_varnet_scores(const ExperimentConfig& cfg, const Corpus& corpus, const VarianceNetwork& vn,
                       std::vector<ScoreRow>& rows) {
  const auto utts = corpus.split(Split::kTrain);
  const auto voices = render_split(cfg, utts);
  const auto bank = noise_bank(cfg, true);
  std::map<std::string, std::size_t> utt_index;
  for (std::size_t u = 0; u < utts.size(); ++u) utt_index[utts[u]->utt_id] = u;

  // Rows were produced in job order; recompute the same mixtures.
  std::vector<MixJob> jobs;
  for (std::size_t n = 0; n < cfg.noise_types.size(); ++n) {
    for (std::size_t u = 0; u < utts.size(); ++u) {
      for (int r = 0; r < cfg.regress_mixes_per_utt; ++r) {
        const std::uint64_t key = (static_cast<std::uint64_t>(n) << 40) ^ (static_cast<std::uint64_t>(u) << 8) ^
                                  static_cast<std::uint64_t>(r);
        jobs.push_back({u, n, train_snr(cfg, u, n, r), derive_seed(cfg.seed, kTrainMixStream, key)});
      }
    }
  }
  if (jobs.size() != rows.size()) fail(ErrorCode::kDimension, "score rows do not match the training mixtures");
  parallel_for(jobs.size(), cfg.worker_count(), [&](std::size_t i) {
    const MixJob& job = jobs[i];
    if (rows[i].utt_id != utts[job.utt]->utt_id || rows[i].noise != cfg.noise_types[job.noise]) {
      fail(ErrorCode::kDimension, "score row order does not match the training mixtures");
    }
    const FeatureMatrix f = extract_features(mix_job(cfg, job, voices, bank), cfg.features);
    rows[i].varnet = utterance_varnet(vn, f).value;
  });
}

std::vector<SnrRegressor> fit_regressors(const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows) {
  std::vector<SnrRegressor> out;
  for (const std::string& noise : cfg.noise_types) {
    std::vector<double> ent, unc, snr;
    for (const ScoreRow& r : rows) {
      if (r.noise != noise) continue;
      ent.push_back(r.entropy);
      unc.push_back(cfg.score_source == ScoreSource::kVarnet ? r.varnet : r.mc_mu);
      snr.push_back(r.snr_db);
    }
    if (snr.empty()) fail(ErrorCode::kMissing, "no training scores for noise type '" + noise + "'");
    SnrRegressor f1 = fit_poly(ent, snr, cfg.regressor_degree);
    f1.kind = RegressorKind::kF1Entropy;
    SnrRegressor f2 = fit_poly(unc, snr, cfg.regressor_degree);
    f2.kind = RegressorKind::kF2Uncertainty;
    SnrRegressor f3 = fit_poly2(unc, ent, snr, cfg.regressor_degree);
    f3.kind = RegressorKind::kF3Joint;
    for (SnrRegressor* r : {&f1, &f2, &f3}) {
      r->noise_type = noise;
      out.push_back(std::move(*r));
    }
  }
  return out;
}

void write_score_rows(const fs::path& path, const std::vector<ScoreRow>& rows) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << std::setprecision(17);
  os << "utt_id,noise,snr_db,entropy,mc_mu,varnet,baseline_db\n";
  for (const ScoreRow& r : rows) {
    os << r.utt_id << ',' << r.noise << ',' << r.snr_db << ',' << r.entropy << ',' << r.mc_mu << ',' << r.varnet
       << ',' << r.baseline_db << '\n';
  }
}

std::vector<ScoreRow> read_score_rows(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<ScoreRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_list(line);
    if (cells.size() != 7) fail(ErrorCode::kParse, path.string() + ": expected 7 columns");
    ScoreRow r;
    r.utt_id = cells[0];
    r.noise = cells[1];
    r.snr_db = parse_double("snr_db", cells[2]);
    r.entropy = parse_double("entropy", cells[3]);
    r.mc_mu = parse_double("mc_mu", cells[4]);
    r.varnet = parse_double("varnet", cells[5]);
    r.baseline_db = parse_double("baseline_db", cells[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

const SnrRegressor& ModelBundle::regressor(const std::string& noise, RegressorKind kind) const {
  for (const SnrRegressor& r : regressors) {
    if (r.noise_type == noise && r.kind == kind) return r;
  }
  fail(ErrorCode::kMissing, std::string("no ") + to_string(kind) + " regressor for noise type '" + noise + "'");
}

void save_bundle(const fs::path& dir, const ModelBundle& bundle) {
  fs::create_directories(dir / "models");
  write_model(dir / "models" / "classifier.mlp", bundle.classifier);
  write_varnet(dir / "models" / "varnet.mlp", bundle.varnet);
  write_regressors(dir / "regressors.txt", bundle.regressors);
}

ModelBundle load_bundle(const fs::path& dir) {
  ModelBundle b;
  const fs::path cls = dir / "models" / "classifier.mlp";
  const fs::path vn = dir / "models" / "varnet.mlp";
  const fs::path regs = dir / "regressors.txt";
  for (const fs::path& p : {cls, vn, regs}) {
    if (!fs::exists(p)) fail(ErrorCode::kMissing, p.string() + " not found (run the earlier pipeline stages first)");
  }
  b.classifier = read_model(cls);
  b.varnet = read_varnet(vn);
  b.regressors = read_regressors(regs);
  return b;
}

ModelBundle run_pipeline(const ExperimentConfig& cfg, const fs::path& dir, bool verbose) {
  cfg.validate();
  fs::create_directories(dir);
  fs::remove(dir / "log.txt");
  StageLog log(dir / "log.txt", verbose);
  {
    std::ofstream os(dir / "config.txt");
    os << cfg.to_kv().to_string();
  }

  auto run_stage = [&](const std::string& name, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      log.note("stage=" + name + " failed: " + e.what());
      throw Error(e.code(), "stage " + name + ": " + e.what());
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  const Corpus corpus = run_stage("corpus", [&] {
    Corpus c = build_corpus(cfg);
    write_manifest(dir, cfg, c);
    return c;
  });
  log.stage("corpus", seconds_since(t0), "utterances=" + std::to_string(corpus.utterances.size()));

  ModelBundle bundle;
  const ClassifierResult cls =
      run_stage("train_classifier", [&] { return stage_train_classifier(cfg, corpus, dir, log); });
  bundle.classifier = cls.params;
  std::vector<ScoreRow> rows =
      run_stage("score_training", [&] { return stage_score_training(cfg, corpus, bundle.classifier, log); });
  bundle.varnet =
      run_stage("distill_varnet", [&] { return stage_distill_varnet(cfg, corpus, bundle.classifier, dir, log); });
  run_stage("fit", [&] {
    const auto t1 = std::chrono::steady_clock::now();
    add_varnet_scores(cfg, corpus, bundle.varnet, rows);
    write_score_rows(dir / "scores.csv", rows);
    bundle.regressors = fit_regressors(cfg, rows);
    write_regressors(dir / "regressors.txt", bundle.regressors);
    log.stage("fit", seconds_since(t1), "regressors=" + std::to_string(bundle.regressors.size()));
    return 0;
  });
  return bundle;
}

// ---------------------------------------------------------------------------
// Evaluation

double baseline_energy_percentile_snr(const Waveform& w) {
  FrameConfig fc;
  fc.window = WindowFn::kRectangular;
  const std::size_t len = fc.window_samples(w.sample_rate_hz);
  const std::size_t shift = fc.shift_samples(w.sample_rate_hz);
  if (w.size() < len || (w.size() - len) / shift + 1 < 50) {
    fail(ErrorCode::kTooShort, "energy-percentile baseline needs at least 50 frames");
  }
  const Frames frames = frame_signal(w, fc);
  std::vector<double> power(static_cast<std::size_t>(frames.count()));
  for (Eigen::Index t = 0; t < frames.count(); ++t) {
    power[static_cast<std::size_t>(t)] = frames.data.row(t).squaredNorm() / static_cast<double>(len);
  }
  std::sort(power.begin(), power.end());
  const std::size_t n = power.size();
  const auto n_low = std::max<std::size_t>(1, n / 10);
  const auto n_high = std::max<std::size_t>(1, n / 5);
  const double low = std::accumulate(power.begin(), power.begin() + static_cast<std::ptrdiff_t>(n_low), 0.0) /
                     static_cast<double>(n_low);
  const double high = std::accumulate(power.end() - static_cast<std::ptrdiff_t>(n_high), power.end(), 0.0) /
                      static_cast<double>(n_high);
  constexpr double kEps = 1e-12;
  const double snr = 10.0 * std::log10(std::max(high - low, kEps) / std::max(low, 1e-300));
  return std::clamp(snr, -20.0, 40.0);
}

std::vector<ScoreRow> score_test_set(const ExperimentConfig& cfg, const Corpus& corpus, const ModelBundle& bundle,
                                     const std::vector<double>& snr_grid, bool with_mc) {
  const auto utts = corpus.split(Split::kTest);
  const auto voices = render_split(cfg, utts);
  const auto bank = noise_bank(cfg, false);
  const McConfig mc = effective_mc(cfg);
  std::vector<MixJob> jobs;
  for (std::size_t n = 0; n < cfg.noise_types.size(); ++n) {
    for (std::size_t s = 0; s < snr_grid.size(); ++s) {
      for (std::size_t u = 0; u < utts.size(); ++u) {
        // Keyed on the SNR value, not its grid position, so the same mixture
        // is produced whichever grid requests it.
        const auto snr_key = static_cast<std::uint64_t>(std::llround(snr_grid[s] * 1000.0) + (1LL << 32));
        const std::uint64_t key = (static_cast<std::uint64_t>(n) << 48) ^ (static_cast<std::uint64_t>(u) << 24);
        jobs.push_back({u, n, snr_grid[s], derive_seed(cfg.seed, kTestMixStream, key ^ mix_seed(snr_key))});
      }
    }
  }
  std::vector<ScoreRow> rows(jobs.size());
  parallel_for(jobs.size(), cfg.worker_count(), [&](std::size_t i) {
    const MixJob& job = jobs[i];
    const Waveform mixed = mix_job(cfg, job, voices, bank);
    const FeatureMatrix f = extract_features(mixed, cfg.features, utts[job.utt]->utt_id);
    ScoreRow& row = rows[i];
    row.utt_id = utts[job.utt]->utt_id;
    row.noise = cfg.noise_types[job.noise];
    row.snr_db = job.snr_db;
    row.entropy = utterance_entropy(bundle.classifier, f).value;
    if (with_mc || cfg.score_source == ScoreSource::kMc) row.mc_mu = utterance_uncertainty(bundle.classifier, f, mc).value;
    row.varnet = utterance_varnet(bundle.varnet, f).value;
    row.baseline_db = baseline_energy_percentile_snr(mixed);
  });
  return rows;
}

double predict_with(const ModelBundle& bundle, const ExperimentConfig& cfg, const ScoreRow& row, Method m) {
  const double unc = cfg.score_source == ScoreSource::kVarnet ? row.varnet : row.mc_mu;
  switch (m) {
    case Method::kF1: {
      const double in[] = {row.entropy};
      return predict_snr(bundle.regressor(row.noise, RegressorKind::kF1Entropy), in);
    }
    case Method::kF2: {
      const double in[] = {unc};
      return predict_snr(bundle.regressor(row.noise, RegressorKind::kF2Uncertainty), in);
    }
    case Method::kF3: {
      const double in[] = {unc, row.entropy};
      return predict_snr(bundle.regressor(row.noise, RegressorKind::kF3Joint), in);
    }
    case Method::kBaseline:
      return row.baseline_db;
  }
  return 0.0;
}

MaeTable evaluate_rows(const ModelBundle& bundle, const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows) {
  MaeTable table;
  for (const std::string& noise : cfg.noise_types) {
    for (Method m : {Method::kBaseline, Method::kF1, Method::kF2, Method::kF3}) {
      for (double snr : cfg.eval_snr_grid) {
        MaeRow out{noise, m, snr, 0.0, 0};
        for (const ScoreRow& r : rows) {
          if (r.noise != noise || r.snr_db != snr) continue;
          out.mae_db += std::abs(predict_with(bundle, cfg, r, m) - r.snr_db);
          ++out.n;
        }
        if (out.n == 0) fail(ErrorCode::kMissing, "no test scores for " + noise + " at " + fmt_double(snr) + " dB");
        out.mae_db /= out.n;
        table.rows.push_back(out);
      }
    }
  }
  return table;
}

MaeTable evaluate(const ModelBundle& bundle, const ExperimentConfig& cfg, bool oracle_fit) {
  const Corpus corpus = build_corpus(cfg);
  const std::vector<ScoreRow> rows = score_test_set(cfg, corpus, bundle, cfg.eval_snr_grid, false);
  if (!oracle_fit) return evaluate_rows(bundle, cfg, rows);
  ModelBundle oracle = bundle;
  oracle.regressors = fit_regressors(cfg, rows);
  return evaluate_rows(oracle, cfg, rows);
}

double MaeTable::mean_mae(Method m) const {
  double acc = 0.0;
  int n = 0;
  for (const MaeRow& r : rows) {
    if (r.method != m) continue;
    acc += r.mae_db;
    ++n;
  }
  if (n == 0) fail(ErrorCode::kMissing, std::string("no MAE rows for method ") + to_string(m));
  return acc / n;
}

void write_mae_csv(const fs::path& path, const MaeTable& table) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << "noise_type,method,snr_db,mae_db,n\n" << std::setprecision(12);
  for (const MaeRow& r : table.rows) {
    os << r.noise_type << ',' << to_string(r.method) << ',' << r.snr_db << ',' << r.mae_db << ',' << r.n << '\n';
  }
}

std::string format_mae_table(const MaeTable& table) {
  std::vector<double> snrs;
  std::vector<std::string> noises;
  for (const MaeRow& r : table.rows) {
    if (std::find(snrs.begin(), snrs.end(), r.snr_db) == snrs.end()) snrs.push_back(r.snr_db);
    if (std::find(noises.begin(), noises.end(), r.noise_type) == noises.end()) noises.push_back(r.noise_type);
  }
  std::ostringstream os;
  os << std::left << std::setw(12) << "noise" << std::setw(10) << "method";
  for (double s : snrs) os << std::right << std::setw(8) << s;
  os << '\n';
  for (const std::string& noise : noises) {
    for (Method m : {Method::kBaseline, Method::kF1, Method::kF2, Method::kF3}) {
      os << std::left << std::setw(12) << noise << std::setw(10) << to_string(m) << std::right << std::fixed
         << std::setprecision(2);
      for (double s : snrs) {
        for (const MaeRow& r : table.rows) {
          if (r.noise_type == noise && r.method == m && r.snr_db == s) os << std::setw(8) << r.mae_db;
        }
      }
      os << std::defaultfloat << '\n';
    }
  }
  return os.str();
}

std::vector<TrendRow> TrendReport::series(const std::string& noise) const {
  std::vector<TrendRow> out;
  for (const TrendRow& r : rows) {
    if (r.noise == noise) out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const TrendRow& a, const TrendRow& b) { return a.snr_db < b.snr_db; });
  return out;
}

TrendReport compute_trends(const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows) {
  TrendReport report;
  std::vector<double> vn, mc;
  for (const std::string& noise : cfg.noise_types) {
    const bool trained = std::find(cfg.varnet_noise_types.begin(), cfg.varnet_noise_types.end(), noise) !=
                         cfg.varnet_noise_types.end();
    for (double snr : cfg.trend_snr_grid) {
      TrendRow t{noise, snr, 0.0, 0.0, 0.0};
      int n = 0;
      for (const ScoreRow& r : rows) {
        if (r.noise != noise || r.snr_db != snr) continue;
        t.mean_entropy += r.entropy;
        t.mean_mu += r.mc_mu;
        t.mean_varnet += r.varnet;
        ++n;
        if (trained) {
          vn.push_back(r.varnet);
          mc.push_back(r.mc_mu);
        }
      }
      if (n == 0) fail(ErrorCode::kMissing, "no scores for trend point " + noise + " " + fmt_double(snr) + " dB");
      t.mean_entropy /= n;
      t.mean_mu /= n;
      t.mean_varnet /= n;
      report.rows.push_back(t);
    }
  }
  if (vn.size() >= 2) report.varnet_mc_pearson = stats::pearson(vn, mc);
  return report;
}

void write_trends_csv(const fs::path& path, const TrendReport& report) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << "noise,snr_db,mean_entropy,mean_mu,mean_varnet\n" << std::setprecision(12);
  for (const TrendRow& r : report.rows) {
    os << r.noise << ',' << r.snr_db << ',' << r.mean_entropy << ',' << r.mean_mu << ',' << r.mean_varnet << '\n';
  }
}

void write_trends_svg(const fs::path& path, const TrendReport& report) {
  std::vector<std::string> noises;
  for (const TrendRow& r : report.rows) {
    if (std::find(noises.begin(), noises.end(), r.noise) == noises.end()) noises.push_back(r.noise);
  }
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  const double w = 420.0, h = 320.0;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg_panel(os, report, noises, &TrendRow::mean_entropy, "mean utterance entropy (nats)", 0, 0, w, h);
  svg_panel(os, report, noises, &TrendRow::mean_mu, "mean MC-dropout uncertainty", w, 0, w, h);
  svg_panel(os, report, noises, &TrendRow::mean_varnet, "mean variance-network output", 2 * w, 0, w, h);
  os << "</svg>\n";
}

TrendReport emit_trend_report(const ModelBundle& bundle, const ExperimentConfig& cfg, const fs::path& dir) {
  const Corpus corpus = build_corpus(cfg);
  const auto rows = score_test_set(cfg, corpus, bundle, cfg.trend_snr_grid, true);
  TrendReport report = compute_trends(cfg, rows);
  if (!dir.empty()) {
    write_score_rows(dir / "test_scores.csv", rows);
    write_trends_csv(dir / "trends.csv", report);
    write_trends_svg(dir / "trends.svg", report);
  }
  return report;
}

double estimate_snr(const ModelBundle& bundle, const ExperimentConfig& cfg, const Waveform& w,
                    const std::string& noise_type, Method method) {
  ScoreRow row;
  row.noise = noise_type;
  if (method == Method::kBaseline) return baseline_energy_percentile_snr(w);
  const FeatureMatrix f = extract_features(w, cfg.features, "input");
  row.entropy = utterance_entropy(bundle.classifier, f).value;
  if (cfg.score_source == ScoreSource::kMc) {
    row.mc_mu = utterance_uncertainty(bundle.classifier, f, effective_mc(cfg)).value;
  } else {
    row.varnet = utterance_varnet(bundle.varnet, f).value;
  }
  return predict_with(bundle, cfg, row, method);
}

}  // namespace snrkit
