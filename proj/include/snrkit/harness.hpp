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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snrkit/audio.hpp"
#include "snrkit/config.hpp"
#include "snrkit/features.hpp"
#include "snrkit/nnet.hpp"
#include "snrkit/regress.hpp"
#include "snrkit/uncertainty.hpp"

namespace snrkit {

/// A named noise condition: generator kind plus shape parameters.
struct NoiseProfile {
  std::string name;
  SynthKind kind = SynthKind::kNoiseWhite;
  NoiseParams params;
};

/// The built-in noise conditions, in a fixed order.
const std::vector<NoiseProfile>& builtin_noise_profiles();
const NoiseProfile& find_noise_profile(const std::string& name);

struct ClassifierConfig {
  int hidden_units = 128;
  int hidden_layers = 4;
  double drop_prob = 0.2;
  TrainConfig train{0.02, 12, 32, 11, Objective::kCrossEntropy, 0.0};
};

/// Which utterance uncertainty feeds f2/f3.
enum class ScoreSource { kVarnet, kMc };

enum class Method { kF1, kF2, kF3, kBaseline };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

enum class Split { kTrain, kCalib, kTest };

struct ExperimentConfig {
  std::uint64_t seed = 2026;
  int sample_rate_hz = 16000;
  int n_classes = 32;
  int n_speakers_equiv = 8;
  int n_train_utts = 800;
  int n_test_utts = 50;
  int n_calib_utts = 0;  // 0: distill on the classifier's training utterances
  double utt_duration_s = 1.0;
  double noise_duration_s = 12.0;
  std::vector<std::string> noise_types;
  std::vector<std::string> varnet_noise_types;
  std::vector<double> train_snr_grid;
  std::vector<double> eval_snr_grid;
  std::vector<double> trend_snr_grid;
  int regress_mixes_per_utt = 1;
  int varnet_utts_per_noise = 120;
  McConfig mc{20, false, 0};  // posterior variance
  FeatureConfig features;
  ClassifierConfig classifier;
  VarnetTrainConfig varnet;
  int regressor_degree = 3;
  ScoreSource score_source = ScoreSource::kVarnet;
  int threads = 0;  // 0 = hardware concurrency
  bool write_varnet_dataset = true;

  /// Desk-scale defaults.
  static ExperimentConfig defaults();
  /// Defaults overridden by `kv`; unknown keys are rejected.
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
  void validate() const;
  int worker_count() const;
  /// Utterances the variance network is distilled on: held out from the
  /// classifier when a calibration split exists.
  Split distill_split() const { return n_calib_utts > 0 ? Split::kCalib : Split::kTrain; }
};

/// kTrain utterances train the classifier; kCalib utterances (when present)
/// are held out from it and used for training-set scoring and distillation;
/// kTest utterances are only used for evaluation.

struct CorpusUtterance {
  std::string utt_id;
  Split split = Split::kTrain;
  SynthSpec spec;
};

struct Corpus {
  std::vector<CorpusUtterance> utterances;

  std::vector<const CorpusUtterance*> split(Split which) const;
};

Corpus build_corpus(const ExperimentConfig& cfg);

/// Writes manifest.csv (utt_id,kind,seed,duration_s,label_track_path) and
/// one label track per utterance under labels/.
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const Corpus& corpus);

/// Noise track for one profile; train and test tracks use disjoint seeds.
Waveform noise_track(const ExperimentConfig& cfg, const std::string& noise_type, bool train);

/// One scored noisy utterance.
struct ScoreRow {
  std::string utt_id;
  std::string noise;
  double snr_db = 0.0;
  double entropy = 0.0;
  double mc_mu = 0.0;
  double varnet = 0.0;
  double baseline_db = 0.0;
};

struct ModelBundle {
  MlpParams classifier;
  VarianceNetwork varnet;
  std::vector<SnrRegressor> regressors;

  const SnrRegressor& regressor(const std::string& noise, RegressorKind kind) const;
};

struct MaeRow {
  std::string noise_type;
  Method method = Method::kF2;
  double snr_db = 0.0;
  double mae_db = 0.0;
  int n = 0;
};

struct MaeTable {
  std::vector<MaeRow> rows;

  /// Mean MAE over all rows of one method.
  double mean_mae(Method m) const;
};

struct TrendRow {
  std::string noise;
  double snr_db = 0.0;
  double mean_entropy = 0.0;
  double mean_mu = 0.0;
  double mean_varnet = 0.0;
};

struct TrendReport {
  std::vector<TrendRow> rows;
  /// Utterance-level Pearson correlation of varnet vs MC scores on test
  /// utterances of the varnet training noise types.
  double varnet_mc_pearson = 0.0;

  std::vector<TrendRow> series(const std::string& noise) const;
};

/// Appends "stage=... seconds=..." lines to <dir>/log.txt and echoes to stderr
/// when verbose.
class StageLog {
 public:
  StageLog(const std::filesystem::path& path, bool verbose);
  void note(const std::string& line);
  void stage(const std::string& name, double seconds, const std::string& detail = {});

 private:
  std::ofstream os_;
  bool verbose_;
};

// Pipeline stages. Each persists its artifacts under `dir`.
struct ClassifierResult {
  MlpParams params;
  double clean_test_accuracy = 0.0;
  double final_loss = 0.0;
};

ClassifierResult stage_train_classifier(const ExperimentConfig& cfg, const Corpus& corpus,
                                        const std::filesystem::path& dir, StageLog& log);
std::vector<ScoreRow> stage_score_training(const ExperimentConfig& cfg, const Corpus& corpus,
                                           const MlpParams& classifier, StageLog& log);
VarianceNetwork stage_distill_varnet(const ExperimentConfig& cfg, const Corpus& corpus,
                                     const MlpParams& classifier, const std::filesystem::path& dir,
                                     StageLog& log);
void add_varnet_scores(const ExperimentConfig& cfg, const Corpus& corpus, const VarianceNetwork& vn,
                       std::vector<ScoreRow>& rows);
std::vector<SnrRegressor> fit_regressors(const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows);

void write_score_rows(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_score_rows(const std::filesystem::path& path);

/// All stages end to end; writes every artifact under `dir`.
ModelBundle run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool verbose = false);

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Scores the test utterances over `snr_grid` for every noise type.
std::vector<ScoreRow> score_test_set(const ExperimentConfig& cfg, const Corpus& corpus, const ModelBundle& bundle,
                                     const std::vector<double>& snr_grid, bool with_mc);

double predict_with(const ModelBundle& bundle, const ExperimentConfig& cfg, const ScoreRow& row, Method m);

/// MAE per noise type, method and eval SNR. With `oracle_fit`, f1/f2/f3 are
/// refit on the test scores themselves (in-sample sanity mode).
MaeTable evaluate(const ModelBundle& bundle, const ExperimentConfig& cfg, bool oracle_fit = false);
MaeTable evaluate_rows(const ModelBundle& bundle, const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows);
void write_mae_csv(const std::filesystem::path& path, const MaeTable& table);
std::string format_mae_table(const MaeTable& table);

/// Energy-percentile SNR estimate: noise from the quietest 10% of frames,
/// signal+noise from the loudest 20%. Clamped to [-20, 40] dB.
double baseline_energy_percentile_snr(const Waveform& w);

TrendReport compute_trends(const ExperimentConfig& cfg, const std::vector<ScoreRow>& rows);
void write_trends_csv(const std::filesystem::path& path, const TrendReport& report);
void write_trends_svg(const std::filesystem::path& path, const TrendReport& report);
TrendReport emit_trend_report(const ModelBundle& bundle, const ExperimentConfig& cfg,
                              const std::filesystem::path& dir);

/// Single-utterance estimate using the bundle's regressor for `noise_type`.
double estimate_snr(const ModelBundle& bundle, const ExperimentConfig& cfg, const Waveform& w,
                    const std::string& noise_type, Method method);

/// Frame accuracy of `p` on the clean test utterances.
double clean_frame_accuracy(const ExperimentConfig& cfg, const Corpus& corpus, const MlpParams& p);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must only write
/// to slot i of its outputs.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace snrkit
