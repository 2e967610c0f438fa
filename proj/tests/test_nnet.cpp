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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "snrkit/error.hpp"
#include "snrkit/nnet.hpp"
#include "test_util.hpp"

using namespace snrkit;

namespace {

MlpParams single_layer(Eigen::MatrixXd w, Activation act, double drop) {
  MlpParams p;
  Layer l;
  l.spec = {static_cast<int>(w.cols()), static_cast<int>(w.rows()), act, drop};
  l.bias = Eigen::VectorXd::Zero(w.rows());
  l.weights = std::move(w);
  p.layers.push_back(std::move(l));
  return p;
}

// Random net with non-zero biases so ReLU kinks are away from the probes.
MlpParams random_net(const std::vector<int>& dims, std::uint64_t seed, double drop = 0.0) {
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    specs.push_back({dims[i], dims[i + 1], last ? Activation::kIdentity : Activation::kRelu, i == 0 ? 0.0 : drop});
  }
  MlpParams p = mlp_init(specs, seed);
  Rng rng(seed + 1);
  for (Layer& l : p.layers) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = uniform01(rng) - 0.3;
  }
  return p;
}

// Max relative error of backprop against central differences.
double gradient_check(MlpParams p, const Eigen::VectorXd& x, const Target& t, Objective obj,
                      const DropoutMask* mask) {
  const Gradients g = backprop(p, x, t, obj, mask);
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = example_loss(p, x, t, obj, mask);
    param = keep - h;
    const double down = example_loss(p, x, t, obj, mask);
    param = keep;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8));
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < p.layers[l].weights.size(); ++i) {
      probe(p.layers[l].weights.data()[i], g.weights[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i) probe(p.layers[l].bias[i], g.bias[l][i]);
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp_init shapes, determinism and zero biases") {
  const std::vector<LayerSpec> specs = {{2, 3, Activation::kRelu, 0.0}, {3, 1, Activation::kIdentity, 0.0}};
  const MlpParams p = mlp_init(specs, 5);
  REQUIRE(p.layers.size() == 2);
  CHECK(p.layers[0].weights.rows() == 3);
  CHECK(p.layers[0].weights.cols() == 2);
  CHECK(p.layers[1].weights.rows() == 1);
  CHECK(p.layers[1].weights.cols() == 3);
  for (const Layer& l : p.layers) CHECK(l.bias.isZero());
  const MlpParams q = mlp_init(specs, 5);
  for (std::size_t l = 0; l < 2; ++l) CHECK(p.layers[l].weights == q.layers[l].weights);
  CHECK(mlp_init(specs, 6).layers[0].weights != p.layers[0].weights);
  // Glorot bound.
  const double bound = std::sqrt(6.0 / 5.0);
  CHECK(p.layers[0].weights.cwiseAbs().maxCoeff() <= bound);
  CHECK_THROWS_CODE(mlp_init({{2, 3, Activation::kRelu, 0.0}, {4, 1, Activation::kIdentity, 0.0}}, 1),
                    ErrorCode::kConfig);
  CHECK_THROWS_CODE(mlp_init({{2, 3, Activation::kRelu, 1.0}}, 1), ErrorCode::kConfig);
}

TEST_CASE("mlp_specs places dropout after the first layer") {
  const auto specs = mlp_specs(440, 128, 4, 32, 0.2);
  REQUIRE(specs.size() == 5);
  CHECK(specs[0].drop_prob == 0.0);
  for (std::size_t i = 1; i < 5; ++i) CHECK(specs[i].drop_prob == 0.2);
  CHECK(specs.back().activation == Activation::kIdentity);
  CHECK(specs.back().out_dim == 32);
}

TEST_CASE("forward pass hand evaluations") {
  const MlpParams id = single_layer(Eigen::MatrixXd::Identity(3, 3), Activation::kIdentity, 0.0);
  const Eigen::Vector3d x(0.5, -2.0, 7.0);
  CHECK(forward(id, x) == x);

  Eigen::MatrixXd w(1, 2);
  w << 1, 2;
  const MlpParams p = single_layer(w, Activation::kRelu, 0.5);
  DropoutMask mask;
  mask.layers = {Eigen::Vector2d(1, 0)};
  CHECK(forward(p, Eigen::Vector2d(1, 1), &mask)[0] == 1.0);
  // Deterministic inference scales the input by keep_prob.
  CHECK(forward(p, Eigen::Vector2d(1, 1))[0] == doctest::Approx(1.5));

  const MlpParams q = random_net({4, 6, 3}, 2, 0.0);
  DropoutMask ones;
  for (const Layer& l : q.layers) ones.layers.push_back(Eigen::VectorXd::Ones(l.spec.in_dim));
  const Eigen::Vector4d x4(0.1, 0.2, -0.3, 0.4);
  CHECK((forward(q, x4, &ones) - forward(q, x4)).norm() == 0.0);
}

TEST_CASE("batched forward agrees with per-row forward") {
  const MlpParams p = random_net({5, 8, 8, 3}, 9, 0.3);
  RowMatrix x = RowMatrix::Random(6, 5);
  const RowMatrix y = forward_batch(p, x);
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK((y.row(i).transpose() - forward(p, x.row(i).transpose())).norm() < 1e-12);
  }
  Rng a(4), b(4);
  const auto masks = sample_dropout_masks(p, 6, a);
  const RowMatrix ym = forward_batch(p, x, &masks);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const DropoutMask m = sample_dropout_mask(p, b);
    CHECK((ym.row(i).transpose() - forward(p, x.row(i).transpose(), &m)).norm() < 1e-12);
  }
  CHECK_THROWS_CODE(forward_batch(p, RowMatrix::Random(2, 4)), ErrorCode::kDimension);
}

TEST_CASE("softmax stability and invariance") {
  const Eigen::VectorXd a = softmax(Eigen::Vector2d(0, 0));
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));
  const Eigen::VectorXd b = softmax(Eigen::Vector2d(1000, 0));
  CHECK(b.allFinite());
  CHECK(b[0] == doctest::Approx(1.0));
  CHECK(b[1] < 1e-300);
  const Eigen::VectorXd z = Eigen::VectorXd::Random(10) * 5.0;
  const Eigen::VectorXd s = softmax(z);
  CHECK(std::abs(s.sum() - 1.0) <= 1e-12);
  CHECK((softmax((z.array() + 123.4).matrix()) - s).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dropout masks") {
  const MlpParams none = random_net({3, 4, 2}, 1, 0.0);
  Rng rng(1);
  const DropoutMask m0 = sample_dropout_mask(none, rng);
  for (const auto& l : m0.layers) CHECK((l.array() == 1.0).all());

  // keep rate: 0.8 +- 0.002 over 10^6 draws.
  const MlpParams p = single_layer(Eigen::MatrixXd::Ones(1, 1000), Activation::kIdentity, 0.2);
  Rng r2(2);
  double kept = 0.0;
  for (int i = 0; i < 1000; ++i) kept += sample_dropout_mask(p, r2).layers[0].sum();
  CHECK(std::abs(kept / 1e6 - 0.8) <= 0.002);

  Rng a(7), b(7);
  CHECK(sample_dropout_mask(p, a).layers[0] == sample_dropout_mask(p, b).layers[0]);
}

TEST_CASE("backprop matches central differences") {
  Rng rng(11);
  const MlpParams p = random_net({6, 7, 5, 4}, 3, 0.25);
  const Eigen::VectorXd x = Eigen::VectorXd::Random(6);
  SUBCASE("cross entropy, deterministic") { CHECK(gradient_check(p, x, 2, Objective::kCrossEntropy, nullptr) < 1e-5); }
  SUBCASE("mse, deterministic") {
    CHECK(gradient_check(p, x, Eigen::VectorXd(Eigen::VectorXd::Random(4)), Objective::kMse, nullptr) < 1e-5);
  }
  SUBCASE("cross entropy, masked") {
    const DropoutMask m = sample_dropout_mask(p, rng);
    CHECK(gradient_check(p, x, 1, Objective::kCrossEntropy, &m) < 1e-5);
  }
}

TEST_CASE("closed-form output gradients") {
  const MlpParams p = random_net({3, 4}, 8);
  const Eigen::Vector3d x(0.2, -0.1, 0.7);
  // MSE at the network's own output has zero gradient.
  const Gradients g0 = backprop(p, x, Eigen::VectorXd(forward(p, x)), Objective::kMse);
  CHECK(g0.weights[0].isZero());
  CHECK(g0.bias[0].isZero());
  // Cross-entropy output delta = softmax - onehot.
  const Gradients g = backprop(p, x, 2, Objective::kCrossEntropy);
  Eigen::VectorXd expect = softmax(forward(p, x));
  expect[2] -= 1.0;
  CHECK((g.bias[0] - expect).norm() < 1e-12);
}

TEST_CASE("training: xor, zero learning rate, divergence") {
  Dataset xor_ds;
  xor_ds.inputs.resize(4, 2);
  xor_ds.inputs << 0, 0, 0, 1, 1, 0, 1, 1;
  xor_ds.labels = {0, 1, 1, 0};
  const std::vector<LayerSpec> specs = {{2, 8, Activation::kRelu, 0.0}, {8, 2, Activation::kIdentity, 0.0}};
  TrainConfig tc{0.1, 5000, 4, 3, Objective::kCrossEntropy, 0.0};
  const TrainResult r = train(mlp_init(specs, 21), xor_ds, tc);
  int correct = 0;
  for (int i = 0; i < 4; ++i) {
    Eigen::Index arg = 0;
    forward(r.params, xor_ds.inputs.row(i).transpose()).maxCoeff(&arg);
    correct += arg == xor_ds.labels[i];
  }
  CHECK(correct == 4);
  CHECK(r.epoch_loss.size() == 5000);

  const MlpParams init = mlp_init(specs, 22);
  tc.lr = 0.0;
  tc.epochs = 3;
  const TrainResult frozen = train(init, xor_ds, tc);
  for (std::size_t l = 0; l < 2; ++l) CHECK(frozen.params.layers[l].weights == init.layers[l].weights);

  tc.lr = 1e200;
  tc.epochs = 5;
  CHECK_THROWS_CODE(train(init, xor_ds, tc), ErrorCode::kDivergence);
  Dataset empty;
  CHECK_THROWS_CODE(train(init, empty, tc), ErrorCode::kDomain);
}

TEST_CASE("training is reproducible") {
  Dataset ds;
  ds.inputs = RowMatrix::Random(40, 3);
  ds.targets = RowMatrix::Random(40, 2);
  const MlpParams p = random_net({3, 5, 5, 2}, 4, 0.2);
  const TrainConfig tc{0.05, 4, 8, 9, Objective::kMse, 1e-3};
  const TrainResult a = train(p, ds, tc);
  const TrainResult b = train(p, ds, tc);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
}

TEST_CASE("model files round-trip") {
  TempDir dir;
  const MlpParams p = random_net({4, 6, 3}, 12, 0.2);
  write_model(dir / "m.mlp", p);
  const MlpParams q = read_model(dir / "m.mlp");
  REQUIRE(q.layers.size() == p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    CHECK(q.layers[l].weights == p.layers[l].weights);
    CHECK(q.layers[l].bias == p.layers[l].bias);
    CHECK(q.layers[l].spec.drop_prob == p.layers[l].spec.drop_prob);
    CHECK(q.layers[l].spec.activation == p.layers[l].spec.activation);
  }
  std::ofstream(dir / "bad.mlp") << "MLP1\x02";
  CHECK_THROWS_CODE(read_model(dir / "bad.mlp"), ErrorCode::kParse);
}
