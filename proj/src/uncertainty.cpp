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

#include "snrkit/uncertainty.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "snrkit/binary_io.hpp"
#include "snrkit/error.hpp"

namespace snrkit {
namespace {

// Layers [0, n) with no dropout produce the same output under every mask, so
// they are evaluated once per frame instead of once per sample.
std::size_t deterministic_prefix(const MlpParams& p) {
  std::size_t n = 0;
  while (n < p.layers.size() && p.layers[n].spec.drop_prob == 0.0) ++n;
  return n;
}

RowMatrix run_prefix(const MlpParams& p, std::size_t prefix, const RowMatrix& x) {
  // The deterministic pass multiplies by keep_prob = 1 in these layers, which
  // matches the masked pass exactly.
  return forward_layers(p, 0, prefix, x);
}

double summed_sample_variance(const RowMatrix& samples) {
  const double k = static_cast<double>(samples.rows());
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  return (samples.rowwise() - mean).array().square().sum() / (k - 1.0);
}

void check_mc(const MlpParams& p, const McConfig& cfg, Eigen::Index dim) {
  if (cfg.n_samples < 2) fail(ErrorCode::kConfig, "MC dropout needs at least 2 samples");
  if (dim != p.input_dim()) fail(ErrorCode::kDimension, "frame dimension does not match network input");
}

// MU for `rows` of a prefix-output matrix, each with its own mask stream.
Eigen::VectorXd mc_rows(const MlpParams& p, std::size_t prefix, const RowMatrix& h,
                        const McConfig& cfg, std::vector<Rng>& rngs) {
  const Eigen::Index k = cfg.n_samples;
  const Eigen::Index m = h.rows();
  Eigen::VectorXd out(m);
  if (prefix == p.layers.size()) {
    out.setZero();
    return out;
  }
  // Batch frames in chunks to bound memory.
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / k);
  for (Eigen::Index start = 0; start < m; start += chunk) {
    const Eigen::Index rows = std::min(chunk, m - start);
    RowMatrix rep(rows * k, h.cols());
    std::vector<RowMatrix> masks(p.layers.size());
    for (std::size_t l = prefix; l < p.layers.size(); ++l) {
      if (p.layers[l].spec.drop_prob > 0.0) masks[l].resize(rows * k, p.layers[l].spec.in_dim);
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      rep.middleRows(i * k, k).rowwise() = h.row(start + i);
      const std::vector<RowMatrix> frame_masks =
          sample_dropout_masks(p, k, rngs[static_cast<std::size_t>(start + i)]);
      for (std::size_t l = prefix; l < p.layers.size(); ++l) {
        if (masks[l].size() != 0) masks[l].middleRows(i * k, k) = frame_masks[l];
      }
    }
    RowMatrix y = forward_layers(p, prefix, p.layers.size(), std::move(rep), &masks);
    if (!cfg.pre_softmax) softmax_rows(y);
    for (Eigen::Index i = 0; i < rows; ++i) out[start + i] = summed_sample_variance(y.middleRows(i * k, k));
  }
  return out;
}

UncertaintyScore make_score(const std::string& id, ScoreKind kind, Eigen::VectorXd per_frame) {
  if (per_frame.size() == 0) fail(ErrorCode::kDomain, "utterance has no frames");
  UncertaintyScore s;
  s.utt_id = id;
  s.kind = kind;
  s.value = per_frame.mean();
  s.per_frame = std::move(per_frame);
  return s;
}

}  // namespace

const char* to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kEntropy: return "entropy";
    case ScoreKind::kMcDropout: return "mc_dropout";
    case ScoreKind::kVarnet: return "varnet";
  }
  return "unknown";
}

double frame_entropy(const Eigen::VectorXd& posterior) {
  if (posterior.size() == 0) fail(ErrorCode::kDomain, "empty distribution");
  if ((posterior.array() < 0.0).any() || !posterior.allFinite()) {
    fail(ErrorCode::kDomain, "distribution has negative or non-finite entries");
  }
  if (std::abs(posterior.sum() - 1.0) > 1e-6) fail(ErrorCode::kDomain, "distribution does not sum to 1");
  // Compensated summation keeps the uniform case within a few ulps of ln d.
  double h = 0.0, c = 0.0;
  for (Eigen::Index i = 0; i < posterior.size(); ++i) {
    const double q = posterior[i];
    if (q <= 0.0) continue;
    const double term = -q * std::log(q) - c;
    const double t = h + term;
    c = (t - h) - term;
    h = t;
  }
  return std::max(0.0, h);
}

UncertaintyScore utterance_entropy(const MlpParams& p, const FeatureMatrix& f) {
  if (f.dim() != p.input_dim()) fail(ErrorCode::kDimension, "features do not match network input");
  RowMatrix post = forward_batch(p, f.rows);
  softmax_rows(post);
  Eigen::VectorXd per_frame(post.rows());
  for (Eigen::Index j = 0; j < post.rows(); ++j) per_frame[j] = frame_entropy(post.row(j).transpose());
  return make_score(f.utt_id, ScoreKind::kEntropy, std::move(per_frame));
}

Rng frame_rng(const McConfig& cfg, const Eigen::VectorXd& frame) {
  return Rng(derive_seed(cfg.seed, hash_values({frame.data(), static_cast<std::size_t>(frame.size())})));
}

double mc_frame_uncertainty(const MlpParams& p, const Eigen::VectorXd& frame, const McConfig& cfg, Rng& rng) {
  check_mc(p, cfg, frame.size());
  const std::size_t prefix = deterministic_prefix(p);
  const RowMatrix h = run_prefix(p, prefix, frame.transpose());
  std::vector<Rng> rngs{rng};
  const double mu = mc_rows(p, prefix, h, cfg, rngs)[0];
  rng = rngs[0];
  return mu;
}

UncertaintyScore utterance_uncertainty(const MlpParams& p, const FeatureMatrix& f, const McConfig& cfg) {
  check_mc(p, cfg, f.dim());
  const std::size_t prefix = deterministic_prefix(p);
  const RowMatrix h = run_prefix(p, prefix, f.rows);
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(f.frame_count()));
  for (Eigen::Index j = 0; j < f.frame_count(); ++j) rngs.push_back(frame_rng(cfg, f.rows.row(j).transpose()));
  return make_score(f.utt_id, ScoreKind::kMcDropout, mc_rows(p, prefix, h, cfg, rngs));
}

double analytic_preactivation_variance(std::span<const double> w_row, std::span<const double> f,
                                       double keep_prob) {
  if (w_row.size() != f.size()) fail(ErrorCode::kDimension, "weight row and input differ in length");
  double acc = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) acc += w_row[j] * w_row[j] * f[j] * f[j];
  return keep_prob * (1.0 - keep_prob) * acc;
}

Eigen::VectorXd brute_force_output_variance(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                                            Activation activation, const Eigen::VectorXd& f,
                                            double keep_prob) {
  const Eigen::Index m = f.size();
  if (m > 20) fail(ErrorCode::kSize, "enumeration limited to 20 inputs");
  if (weights.cols() != m || weights.rows() != bias.size()) fail(ErrorCode::kDimension, "layer shape mismatch");
  const std::uint64_t count = std::uint64_t{1} << m;
  const Eigen::Index out = weights.rows();

  auto outputs = [&](std::uint64_t mask, Eigen::VectorXd& y) {
    y = bias;
    for (Eigen::Index j = 0; j < m; ++j) {
      if ((mask >> j) & 1U) y += weights.col(j) * f[j];
    }
    if (activation == Activation::kRelu) y = y.cwiseMax(0.0);
  };
  auto probability = [&](std::uint64_t mask) {
    const int ones = std::popcount(mask);
    return std::pow(keep_prob, ones) * std::pow(1.0 - keep_prob, static_cast<double>(m - ones));
  };

  // Two passes (mean, then centred second moment) to avoid cancellation.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(out), y;
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    outputs(mask, y);
    mean += probability(mask) * y;
  }
  Eigen::VectorXd var = Eigen::VectorXd::Zero(out);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    outputs(mask, y);
    var += probability(mask) * (y - mean).array().square().matrix();
  }
  return var;
}

VarnetDataset build_varnet_dataset(const MlpParams& dropout_net, const std::vector<FeatureMatrix>& utterances,
                                   const McConfig& cfg) {
  if (utterances.empty()) fail(ErrorCode::kDomain, "empty corpus");
  Eigen::Index rows = 0;
  for (const FeatureMatrix& f : utterances) rows += f.frame_count();
  if (rows == 0) fail(ErrorCode::kDomain, "corpus has no frames");

  VarnetDataset ds;
  ds.features.resize(rows, dropout_net.input_dim());
  Eigen::VectorXd raw(rows);
  Eigen::Index at = 0;
  for (const FeatureMatrix& f : utterances) {
    const UncertaintyScore s = utterance_uncertainty(dropout_net, f, cfg);
    ds.features.middleRows(at, f.frame_count()) = f.rows;
    raw.segment(at, f.frame_count()) = s.per_frame;
    at += f.frame_count();
  }
  const double mean = raw.mean();
  const double sd = std::sqrt((raw.array() - mean).square().mean());
  ds.affine = {mean, sd > 0.0 ? sd : 1.0};
  ds.targets = raw.unaryExpr([&](double t) { return ds.affine.standardize(t); });
  return ds;
}

void write_varnet_dataset(const std::filesystem::path& path, const VarnetDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  bin::write_magic(os, "VNDS1");
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.features.cols()));
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
  bin::write_f64(os, ds.affine.offset);
  bin::write_f64(os, ds.affine.scale);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) bin::write_f64(os, ds.features(i, j));
    bin::write_f64(os, ds.targets[i]);
  }
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

VarnetDataset read_varnet_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  bin::expect_magic(is, "VNDS1");
  const auto dim = bin::read_le<std::uint32_t>(is, "dim");
  const auto count = bin::read_le<std::uint32_t>(is, "count");
  VarnetDataset ds;
  ds.affine.offset = bin::read_f64(is, "affine offset");
  ds.affine.scale = bin::read_f64(is, "affine scale");
  ds.features.resize(count, dim);
  ds.targets.resize(count);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) ds.features(i, j) = bin::read_f64(is, "features");
    ds.targets[i] = bin::read_f64(is, "target");
  }
  return ds;
}

void column_stats(const RowMatrix& x, double min_sd, Eigen::RowVectorXd& mean, Eigen::RowVectorXd& sd) {
  mean = x.colwise().mean();
  sd = ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  sd = sd.cwiseMax(min_sd);
}

void fold_input_standardization(MlpParams& p, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& sd) {
  Layer& first = p.layers.front();
  if (mean.size() != first.spec.in_dim || sd.size() != first.spec.in_dim) {
    fail(ErrorCode::kDimension, "standardization size mismatch");
  }
  // Layer 0 input scaling by keep_prob commutes with the fold only when the
  // first layer has no dropout.
  if (first.spec.drop_prob != 0.0) fail(ErrorCode::kConfig, "cannot fold into a dropout input layer");
  first.weights = first.weights.array().rowwise() / sd.array();
  first.bias -= first.weights * mean.transpose();
}

VarianceNetwork train_varnet(const VarnetDataset& ds, const VarnetTrainConfig& cfg, const EpochCallback& on_epoch) {
  if (ds.size() == 0) fail(ErrorCode::kDomain, "empty varnet dataset");
  Eigen::RowVectorXd mean, sd;
  column_stats(ds.features, 1e-3, mean, sd);
  Dataset data;
  data.inputs = (ds.features.rowwise() - mean).array().rowwise() / sd.array();
  data.targets = ds.targets;

  TrainConfig tc = cfg.train;
  tc.objective = Objective::kMse;
  MlpParams net = mlp_init(mlp_specs(static_cast<int>(ds.features.cols()), cfg.hidden_units,
                                     cfg.hidden_layers, 1, 0.0),
                           tc.seed);
  VarianceNetwork vn;
  vn.net = train(std::move(net), data, tc, on_epoch).params;
  fold_input_standardization(vn.net, mean, sd);
  vn.affine = ds.affine;
  return vn;
}

double varnet_predict(const VarianceNetwork& vn, const Eigen::VectorXd& frame) {
  if (vn.net.output_dim() != 1) fail(ErrorCode::kDimension, "variance network must have scalar output");
  if (frame.size() != vn.net.input_dim()) fail(ErrorCode::kDimension, "frame does not match varnet input");
  return vn.affine.invert(forward(vn.net, frame)[0]);
}

UncertaintyScore utterance_varnet(const VarianceNetwork& vn, const FeatureMatrix& f) {
  if (vn.net.output_dim() != 1) fail(ErrorCode::kDimension, "variance network must have scalar output");
  if (f.dim() != vn.net.input_dim()) fail(ErrorCode::kDimension, "features do not match varnet input");
  const RowMatrix z = forward_batch(vn.net, f.rows);
  Eigen::VectorXd per_frame = z.col(0).unaryExpr([&](double v) { return vn.affine.invert(v); });
  return make_score(f.utt_id, ScoreKind::kVarnet, std::move(per_frame));
}

void write_varnet(const std::filesystem::path& model_path, const VarianceNetwork& vn) {
  // The output affine is folded into the last layer so the file is a plain
  // MLP1 model emitting MU directly.
  MlpParams folded = vn.net;
  Layer& last = folded.layers.back();
  last.weights *= vn.affine.scale;
  last.bias = last.bias * vn.affine.scale + Eigen::VectorXd::Constant(last.bias.size(), vn.affine.offset);
  write_model(model_path, folded);
}

VarianceNetwork read_varnet(const std::filesystem::path& model_path) {
  VarianceNetwork vn;
  vn.net = read_model(model_path);
  vn.affine = {};
  return vn;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<UncertaintyScore>& scores) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.precision(17);
  os << "utt_id,kind,value\n";
  for (const UncertaintyScore& s : scores) os << s.utt_id << ',' << to_string(s.kind) << ',' << s.value << '\n';
}

}  // namespace snrkit
