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
#include <functional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "snrkit/features.hpp"
#include "snrkit/rng.hpp"

namespace snrkit {

enum class Activation { kRelu, kIdentity };

/// One affine layer. `drop_prob` applies to this layer's *input*.
struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::kRelu;
  double drop_prob = 0.0;

  double keep_prob() const { return 1.0 - drop_prob; }
};

struct Layer {
  Eigen::MatrixXd weights;  // out_dim x in_dim
  Eigen::VectorXd bias;     // out_dim
  LayerSpec spec;
};

struct MlpParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.front().spec.in_dim; }
  int output_dim() const { return layers.back().spec.out_dim; }
  bool has_dropout() const;
};

/// Per-layer 0/1 input masks; entries are Bernoulli(keep_prob).
struct DropoutMask {
  std::vector<Eigen::VectorXd> layers;
};

enum class Objective { kCrossEntropy, kMse };

struct TrainConfig {
  double lr = 0.05;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 1;
  Objective objective = Objective::kCrossEntropy;
  double l2 = 0.0;
};

/// Class index for cross-entropy, real vector for MSE.
using Target = std::variant<int, Eigen::VectorXd>;

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
};

/// Training examples stored row-wise. `labels` is used by cross-entropy,
/// `targets` (n x out_dim) by MSE.
struct Dataset {
  RowMatrix inputs;
  std::vector<int> labels;
  RowMatrix targets;

  Eigen::Index size() const { return inputs.rows(); }
};

struct TrainResult {
  MlpParams params;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

/// Per-epoch progress callback: (epoch, mean training loss).
using EpochCallback = std::function<void(int, double)>;

/// hidden_layers x hidden_units ReLU layers followed by a linear output layer.
/// Dropout is placed on the inputs of every layer after the first, i.e. on
/// the output of every hidden layer.
std::vector<LayerSpec> mlp_specs(int in_dim, int hidden_units, int hidden_layers,
                                 int out_dim, double drop_prob);

MlpParams mlp_init(const std::vector<LayerSpec>& specs, std::uint64_t seed);

/// Masked forward when `mask` is given (no 1/keep rescaling); otherwise
/// deterministic inference with each layer input scaled by keep_prob.
Eigen::VectorXd forward(const MlpParams& p, const Eigen::VectorXd& x,
                        const DropoutMask* mask = nullptr);

/// Batched forward over rows of `x`. `masks`, when given, holds one
/// (rows x in_dim) 0/1 matrix per layer; an empty matrix means "no mask"
/// for that layer, which is only valid when its drop_prob is zero.
RowMatrix forward_batch(const MlpParams& p, const RowMatrix& x,
                        const std::vector<RowMatrix>* masks = nullptr);

/// Runs layers [first, last) on `h`, which must already be the input of
/// layer `first`.
RowMatrix forward_layers(const MlpParams& p, std::size_t first, std::size_t last,
                         RowMatrix h, const std::vector<RowMatrix>* masks = nullptr);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
void softmax_rows(RowMatrix& logits);

DropoutMask sample_dropout_mask(const MlpParams& p, Rng& rng);

/// Same draws, in the same order, as `rows` successive sample_dropout_mask
/// calls. Layers without dropout get an empty matrix.
std::vector<RowMatrix> sample_dropout_masks(const MlpParams& p, Eigen::Index rows, Rng& rng);

double example_loss(const MlpParams& p, const Eigen::VectorXd& x, const Target& target,
                    Objective objective, const DropoutMask* mask = nullptr);

Gradients backprop(const MlpParams& p, const Eigen::VectorXd& x, const Target& target,
                   Objective objective, const DropoutMask* mask = nullptr);

TrainResult train(MlpParams p, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// "MLP1" | layers u32 | per layer: in u32, out u32, activation u32, drop f64
// | per layer: weights (row-major) then bias, little-endian f64.
void write_model(const std::filesystem::path& path, const MlpParams& p);
MlpParams read_model(const std::filesystem::path& path);

}  // namespace snrkit
