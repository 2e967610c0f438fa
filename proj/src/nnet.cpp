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

#include "snrkit/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "snrkit/binary_io.hpp"
#include "snrkit/error.hpp"

namespace snrkit {
namespace {

struct ForwardCache {
  std::vector<RowMatrix> inputs;  // masked/scaled input of each layer
  std::vector<RowMatrix> pre;     // pre-activation of each layer
  RowMatrix output;
};

void check_masks(const MlpParams& p, std::size_t first, std::size_t last, Eigen::Index rows,
                 const std::vector<RowMatrix>* masks) {
  if (masks == nullptr) return;
  if (masks->size() != p.layers.size()) fail(ErrorCode::kDimension, "mask layer count mismatch");
  for (std::size_t l = first; l < last; ++l) {
    const RowMatrix& m = (*masks)[l];
    if (m.size() == 0) {
      if (p.layers[l].spec.drop_prob > 0.0) {
        fail(ErrorCode::kDimension, "missing mask for dropout layer " + std::to_string(l));
      }
      continue;
    }
    if (m.rows() != rows || m.cols() != p.layers[l].spec.in_dim) {
      fail(ErrorCode::kDimension, "mask shape mismatch at layer " + std::to_string(l));
    }
  }
}

void apply_activation(Activation a, RowMatrix& z) {
  if (a == Activation::kRelu) z = z.cwiseMax(0.0);
}

// Layer input after masking (MC / training) or keep-prob scaling (inference).
RowMatrix layer_input(const Layer& layer, std::size_t l, RowMatrix h,
                      const std::vector<RowMatrix>* masks) {
  if (masks != nullptr) {
    const RowMatrix& m = (*masks)[l];
    if (m.size() != 0) h.array() *= m.array();
  } else if (layer.spec.drop_prob > 0.0) {
    h *= layer.spec.keep_prob();
  }
  return h;
}

RowMatrix affine(const Layer& layer, const RowMatrix& h) {
  RowMatrix z = h * layer.weights.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

ForwardCache forward_cached(const MlpParams& p, const RowMatrix& x,
                            const std::vector<RowMatrix>* masks) {
  if (x.cols() != p.input_dim()) fail(ErrorCode::kDimension, "input dimension mismatch");
  check_masks(p, 0, p.layers.size(), x.rows(), masks);
  ForwardCache c;
  RowMatrix h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const Layer& layer = p.layers[l];
    c.inputs.push_back(layer_input(layer, l, std::move(h), masks));
    c.pre.push_back(affine(layer, c.inputs.back()));
    h = c.pre.back();
    apply_activation(layer.spec.activation, h);
  }
  c.output = std::move(h);
  return c;
}

std::vector<RowMatrix> masks_from(const MlpParams& p, const DropoutMask& mask) {
  if (mask.layers.size() != p.layers.size()) fail(ErrorCode::kDimension, "mask layer count mismatch");
  std::vector<RowMatrix> out(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (mask.layers[l].size() != p.layers[l].spec.in_dim) {
      fail(ErrorCode::kDimension, "mask size mismatch at layer " + std::to_string(l));
    }
    out[l] = mask.layers[l].transpose();
  }
  return out;
}

// Mean loss over the batch; fills `grad` (mean gradient) when non-null.
double batch_loss(const MlpParams& p, const RowMatrix& x, const std::vector<int>* labels,
                  const RowMatrix* targets, const std::vector<RowMatrix>* masks,
                  Gradients* grad) {
  const ForwardCache c = forward_cached(p, x, masks);
  const Eigen::Index n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  RowMatrix delta;  // dLoss/dOutput
  double loss = 0.0;
  if (labels != nullptr) {
    if (static_cast<Eigen::Index>(labels->size()) != n) fail(ErrorCode::kDimension, "label count mismatch");
    delta = c.output;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = (*labels)[static_cast<std::size_t>(i)];
      if (y < 0 || y >= p.output_dim()) fail(ErrorCode::kDimension, "class index out of range");
      const double mx = c.output.row(i).maxCoeff();
      const double lse = mx + std::log((c.output.row(i).array() - mx).exp().sum());
      loss += lse - c.output(i, y);
      delta.row(i) = (c.output.row(i).array() - lse).exp();
      delta(i, y) -= 1.0;
    }
  } else {
    if (targets->rows() != n || targets->cols() != p.output_dim()) {
      fail(ErrorCode::kDimension, "target shape mismatch");
    }
    delta = c.output - *targets;
    loss = 0.5 * delta.squaredNorm();
  }
  loss *= inv_n;
  if (grad == nullptr) return loss;

  delta *= inv_n;
  grad->weights.assign(p.layers.size(), {});
  grad->bias.assign(p.layers.size(), {});
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Layer& layer = p.layers[l];
    if (layer.spec.activation == Activation::kRelu) {
      delta.array() *= (c.pre[l].array() > 0.0).cast<double>();
    }
    grad->weights[l] = delta.transpose() * c.inputs[l];
    grad->bias[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    RowMatrix up = delta * layer.weights;
    if (masks != nullptr) {
      const RowMatrix& m = (*masks)[l];
      if (m.size() != 0) up.array() *= m.array();
    } else if (layer.spec.drop_prob > 0.0) {
      up *= layer.spec.keep_prob();
    }
    delta = std::move(up);
  }
  return loss;
}

void split_target(const Target& target, Objective objective, std::vector<int>& labels,
                  RowMatrix& targets) {
  if (objective == Objective::kCrossEntropy) {
    if (!std::holds_alternative<int>(target)) fail(ErrorCode::kDimension, "cross-entropy needs a class index");
    labels = {std::get<int>(target)};
  } else {
    if (!std::holds_alternative<Eigen::VectorXd>(target)) fail(ErrorCode::kDimension, "mse needs a target vector");
    targets = std::get<Eigen::VectorXd>(target).transpose();
  }
}

}  // namespace

bool MlpParams::has_dropout() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const Layer& l) { return l.spec.drop_prob > 0.0; });
}

std::vector<LayerSpec> mlp_specs(int in_dim, int hidden_units, int hidden_layers, int out_dim,
                                 double drop_prob) {
  std::vector<LayerSpec> specs;
  int prev = in_dim;
  for (int i = 0; i < hidden_layers; ++i) {
    specs.push_back({prev, hidden_units, Activation::kRelu, i == 0 ? 0.0 : drop_prob});
    prev = hidden_units;
  }
  specs.push_back({prev, out_dim, Activation::kIdentity, hidden_layers > 0 ? drop_prob : 0.0});
  return specs;
}

MlpParams mlp_init(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  if (specs.empty()) fail(ErrorCode::kConfig, "network needs at least one layer");
  Rng rng(seed);
  MlpParams p;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& s = specs[l];
    if (s.in_dim <= 0 || s.out_dim <= 0) fail(ErrorCode::kConfig, "layer dimensions must be positive");
    if (l > 0 && specs[l - 1].out_dim != s.in_dim) {
      fail(ErrorCode::kConfig, "layer " + std::to_string(l) + " input does not match previous output");
    }
    if (!(s.drop_prob >= 0.0 && s.drop_prob < 1.0)) fail(ErrorCode::kConfig, "drop_prob must be in [0,1)");
    Layer layer;
    layer.spec = s;
    layer.weights.resize(s.out_dim, s.in_dim);
    layer.bias = Eigen::VectorXd::Zero(s.out_dim);
    const double a = std::sqrt(6.0 / (s.in_dim + s.out_dim));
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
        layer.weights(i, j) = a * (2.0 * uniform01(rng) - 1.0);
      }
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

RowMatrix forward_layers(const MlpParams& p, std::size_t first, std::size_t last, RowMatrix h,
                         const std::vector<RowMatrix>* masks) {
  if (first > last || last > p.layers.size()) fail(ErrorCode::kDimension, "bad layer range");
  if (first < last && h.cols() != p.layers[first].spec.in_dim) {
    fail(ErrorCode::kDimension, "input dimension mismatch");
  }
  check_masks(p, first, last, h.rows(), masks);
  for (std::size_t l = first; l < last; ++l) {
    const Layer& layer = p.layers[l];
    h = affine(layer, layer_input(layer, l, std::move(h), masks));
    apply_activation(layer.spec.activation, h);
  }
  return h;
}

RowMatrix forward_batch(const MlpParams& p, const RowMatrix& x, const std::vector<RowMatrix>* masks) {
  return forward_layers(p, 0, p.layers.size(), x, masks);
}

Eigen::VectorXd forward(const MlpParams& p, const Eigen::VectorXd& x, const DropoutMask* mask) {
  RowMatrix row = x.transpose();
  if (mask == nullptr) return forward_batch(p, row).row(0).transpose();
  const std::vector<RowMatrix> m = masks_from(p, *mask);
  return forward_batch(p, row, &m).row(0).transpose();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

void softmax_rows(RowMatrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

DropoutMask sample_dropout_mask(const MlpParams& p, Rng& rng) {
  DropoutMask mask;
  for (const Layer& layer : p.layers) {
    Eigen::VectorXd d = Eigen::VectorXd::Ones(layer.spec.in_dim);
    if (layer.spec.drop_prob > 0.0) {
      const double keep = layer.spec.keep_prob();
      for (Eigen::Index j = 0; j < d.size(); ++j) d[j] = uniform01(rng) < keep ? 1.0 : 0.0;
    }
    mask.layers.push_back(std::move(d));
  }
  return mask;
}

std::vector<RowMatrix> sample_dropout_masks(const MlpParams& p, Eigen::Index rows, Rng& rng) {
  std::vector<RowMatrix> masks(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (p.layers[l].spec.drop_prob > 0.0) masks[l].resize(rows, p.layers[l].spec.in_dim);
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      if (masks[l].size() == 0) continue;
      const double keep = p.layers[l].spec.keep_prob();
      for (Eigen::Index j = 0; j < masks[l].cols(); ++j) masks[l](i, j) = uniform01(rng) < keep ? 1.0 : 0.0;
    }
  }
  return masks;
}

double example_loss(const MlpParams& p, const Eigen::VectorXd& x, const Target& target,
                    Objective objective, const DropoutMask* mask) {
  std::vector<int> labels;
  RowMatrix targets;
  split_target(target, objective, labels, targets);
  const RowMatrix row = x.transpose();
  std::vector<RowMatrix> m;
  if (mask != nullptr) m = masks_from(p, *mask);
  return batch_loss(p, row, labels.empty() ? nullptr : &labels, labels.empty() ? &targets : nullptr,
                    mask != nullptr ? &m : nullptr, nullptr);
}

Gradients backprop(const MlpParams& p, const Eigen::VectorXd& x, const Target& target,
                   Objective objective, const DropoutMask* mask) {
  std::vector<int> labels;
  RowMatrix targets;
  split_target(target, objective, labels, targets);
  const RowMatrix row = x.transpose();
  std::vector<RowMatrix> m;
  if (mask != nullptr) m = masks_from(p, *mask);
  Gradients g;
  batch_loss(p, row, labels.empty() ? nullptr : &labels, labels.empty() ? &targets : nullptr,
             mask != nullptr ? &m : nullptr, &g);
  return g;
}

TrainResult train(MlpParams p, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const Eigen::Index n = data.size();
  if (n == 0) fail(ErrorCode::kDomain, "empty training set");
  if (cfg.batch_size < 1) fail(ErrorCode::kConfig, "batch_size must be >= 1");
  const bool ce = cfg.objective == Objective::kCrossEntropy;
  if (ce && static_cast<Eigen::Index>(data.labels.size()) != n) fail(ErrorCode::kDimension, "label count mismatch");
  if (!ce && data.targets.rows() != n) fail(ErrorCode::kDimension, "target count mismatch");

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  TrainResult result;
  std::size_t step = 0;
  const Eigen::Index bs = cfg.batch_size;
  RowMatrix xb, tb;
  std::vector<int> lb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += bs) {
      const Eigen::Index rows = std::min(bs, n - start);
      xb.resize(rows, data.inputs.cols());
      lb.clear();
      if (!ce) tb.resize(rows, data.targets.cols());
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = data.inputs.row(src);
        if (ce) {
          lb.push_back(data.labels[static_cast<std::size_t>(src)]);
        } else {
          tb.row(i) = data.targets.row(src);
        }
      }
      std::vector<RowMatrix> masks;
      if (p.has_dropout()) masks = sample_dropout_masks(p, rows, rng);
      Gradients g;
      const double loss = batch_loss(p, xb, ce ? &lb : nullptr, ce ? nullptr : &tb,
                                     p.has_dropout() ? &masks : nullptr, &g);
      ++step;
      if (!std::isfinite(loss)) {
        fail(ErrorCode::kDivergence, "non-finite training loss at step " + std::to_string(step) +
                                         " (epoch " + std::to_string(epoch) + ")");
      }
      epoch_loss += loss * static_cast<double>(rows);
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        Layer& layer = p.layers[l];
        if (cfg.l2 > 0.0) g.weights[l] += cfg.l2 * layer.weights;
        layer.weights -= cfg.lr * g.weights[l];
        layer.bias -= cfg.lr * g.bias[l];
      }
    }
    epoch_loss /= static_cast<double>(n);
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  result.final_loss = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
  result.params = std::move(p);
  return result;
}

void write_model(const std::filesystem::path& path, const MlpParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  bin::write_magic(os, "MLP1");
  bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const Layer& l : p.layers) {
    bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.spec.in_dim));
    bin::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.spec.out_dim));
    bin::write_le<std::uint32_t>(os, l.spec.activation == Activation::kRelu ? 0U : 1U);
    bin::write_f64(os, l.spec.drop_prob);
  }
  for (const Layer& l : p.layers) {
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) bin::write_f64(os, l.weights(i, j));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) bin::write_f64(os, l.bias[i]);
  }
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

MlpParams read_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  bin::expect_magic(is, "MLP1");
  const auto count = bin::read_le<std::uint32_t>(is, "layer count");
  if (count == 0 || count > 1024) fail(ErrorCode::kParse, "implausible layer count");
  std::vector<LayerSpec> specs(count);
  for (LayerSpec& s : specs) {
    s.in_dim = static_cast<int>(bin::read_le<std::uint32_t>(is, "in_dim"));
    s.out_dim = static_cast<int>(bin::read_le<std::uint32_t>(is, "out_dim"));
    const auto act = bin::read_le<std::uint32_t>(is, "activation");
    if (act > 1) fail(ErrorCode::kParse, "unknown activation code");
    s.activation = act == 0 ? Activation::kRelu : Activation::kIdentity;
    s.drop_prob = bin::read_f64(is, "drop_prob");
  }
  MlpParams p = mlp_init(specs, 0);
  for (Layer& l : p.layers) {
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) l.weights(i, j) = bin::read_f64(is, "weights");
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = bin::read_f64(is, "bias");
  }
  return p;
}

}  // namespace snrkit
