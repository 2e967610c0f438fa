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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snrkit/affine.hpp"
#include "snrkit/features.hpp"
#include "snrkit/nnet.hpp"
#include "snrkit/rng.hpp"

namespace snrkit {

enum class ScoreKind { kEntropy, kMcDropout, kVarnet };

const char* to_string(ScoreKind kind);

/// Utterance-level score. `value` is the mean of `per_frame`.
struct UncertaintyScore {
  std::string utt_id;
  ScoreKind kind = ScoreKind::kEntropy;
  double value = 0.0;
  Eigen::VectorXd per_frame;
};

struct McConfig {
  int n_samples = 100;
  bool pre_softmax = true;  // variance of logits rather than of posteriors
  std::uint64_t seed = 0;
};

/// Shannon entropy in nats, with 0 ln 0 = 0.
double frame_entropy(const Eigen::VectorXd& posterior);

UncertaintyScore utterance_entropy(const MlpParams& p, const FeatureMatrix& f);

/// Sum over output dimensions of the unbiased sample variance of K
/// dropout-masked forward passes.
double mc_frame_uncertainty(const MlpParams& p, const Eigen::VectorXd& frame,
                            const McConfig& cfg, Rng& rng);

/// Mask stream for one frame, keyed on the frame's content and cfg.seed, so
/// identical frames always receive identical masks regardless of position.
Rng frame_rng(const McConfig& cfg, const Eigen::VectorXd& frame);

UncertaintyScore utterance_uncertainty(const MlpParams& p, const FeatureMatrix& f,
                                       const McConfig& cfg);

/// keep (1 - keep) sum_j w_j^2 f_j^2: variance of w . (D o f) for
/// independent D_j ~ Bernoulli(keep).
double analytic_preactivation_variance(std::span<const double> w_row, std::span<const double> f,
                                       double keep_prob);

/// Exact per-output variance of act(W (D o f) + b) by enumerating all 2^m
/// masks. m = f.size() <= 20.
Eigen::VectorXd brute_force_output_variance(const Eigen::MatrixXd& weights,
                                            const Eigen::VectorXd& bias, Activation activation,
                                            const Eigen::VectorXd& f, double keep_prob);

/// Spliced frames with standardized MC-uncertainty targets.
struct VarnetDataset {
  RowMatrix features;
  Eigen::VectorXd targets;  // standardized
  Affine affine;            // targets_mu = affine.invert(targets)

  Eigen::Index size() const { return features.rows(); }
};

VarnetDataset build_varnet_dataset(const MlpParams& dropout_net,
                                   const std::vector<FeatureMatrix>& utterances,
                                   const McConfig& cfg);

// "VNDS1" | dim u32 | count u32 | offset f64 | scale f64 | count x (dim
// features, standardized target) little-endian f64.
void write_varnet_dataset(const std::filesystem::path& path, const VarnetDataset& ds);
VarnetDataset read_varnet_dataset(const std::filesystem::path& path);

/// Regression network distilled from MC-dropout targets; predicts MU in a
/// single deterministic pass.
struct VarianceNetwork {
  MlpParams net;
  Affine affine;
};

struct VarnetTrainConfig {
  int hidden_units = 128;
  int hidden_layers = 3;
  TrainConfig train{0.01, 30, 32, 7, Objective::kMse, 0.0};
};

/// Trains on `ds` after per-dimension input standardization, which is then
/// folded into the first layer so the network consumes raw frames.
VarianceNetwork train_varnet(const VarnetDataset& ds, const VarnetTrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

double varnet_predict(const VarianceNetwork& vn, const Eigen::VectorXd& frame);

UncertaintyScore utterance_varnet(const VarianceNetwork& vn, const FeatureMatrix& f);

void write_varnet(const std::filesystem::path& model_path, const VarianceNetwork& vn);
VarianceNetwork read_varnet(const std::filesystem::path& model_path);

/// utt_id,kind,value
void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<UncertaintyScore>& scores);

/// Input standardization folded into the first layer of `p`: afterwards
/// p(x) equals the original network applied to (x - mean) / sd.
void fold_input_standardization(MlpParams& p, const Eigen::RowVectorXd& mean,
                                const Eigen::RowVectorXd& sd);

/// Column means and standard deviations with sd floored at `min_sd`.
void column_stats(const RowMatrix& x, double min_sd, Eigen::RowVectorXd& mean,
                  Eigen::RowVectorXd& sd);

}  // namespace snrkit
