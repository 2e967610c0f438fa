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

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snrkit/audio.hpp"
#include "snrkit/harness.hpp"
#include "snrkit/nnet.hpp"
#include "snrkit/regress.hpp"
#include "snrkit/rng.hpp"
#include "snrkit/stats.hpp"
#include "snrkit/uncertainty.hpp"

using namespace snrkit;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kOracleRelTol = 1e-10;
constexpr double kOracleSeconds = 10.0;
constexpr double kMcRelTol = 0.05;
constexpr double kMcRateFactor = 3.0;
constexpr double kGradRelTol = 1e-5;
constexpr double kGradSeconds = 5.0;
constexpr double kEntropyTol = 1e-12;
constexpr double kMixTolDb = 1e-6;
constexpr double kSpearmanMax = -0.9;
constexpr double kPearsonMin = 0.9;
constexpr double kF2MaeMaxDb = 5.0;
constexpr double kRecoveryTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " (" << o.detail << ")"
            << std::endl;
  if (!o.pass) ++g_failures;
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

MlpParams linear_layer(const Eigen::MatrixXd& w, double drop) {
  MlpParams p;
  p.layers.push_back({w, Eigen::VectorXd::Zero(w.rows()),
                      {static_cast<int>(w.cols()), static_cast<int>(w.rows()), Activation::kIdentity, drop}});
  return p;
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(uniform01(rng) * 12.0) % 12;
    const int n = 1 + static_cast<int>(uniform01(rng) * 4.0) % 4;
    const double keep = uniform(rng, 0.05, 0.95);
    Eigen::MatrixXd w(n, m);
    Eigen::VectorXd f(m), b(n);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -2.0, 2.0);
    for (int j = 0; j < m; ++j) f[j] = uniform(rng, -3.0, 3.0);
    for (int i = 0; i < n; ++i) b[i] = uniform(rng, -1.0, 1.0);
    const Eigen::VectorXd exact = brute_force_output_variance(w, b, Activation::kIdentity, f, keep);
    for (int i = 0; i < n; ++i) {
      const Eigen::RowVectorXd row = w.row(i);
      const double analytic =
          analytic_preactivation_variance({row.data(), static_cast<std::size_t>(m)},
                                          {f.data(), static_cast<std::size_t>(m)}, keep);
      worst = std::max(worst, std::abs(analytic - exact[i]) / std::max(std::abs(exact[i]), 1e-300));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kOracleRelTol && secs < kOracleSeconds,
          "max rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome mc_convergence() {
  Eigen::MatrixXd w(1, 2);
  w << 1, 2;
  const Eigen::Vector2d f(1, 1);
  const double keep = 0.8;
  const MlpParams lin = linear_layer(w, 1.0 - keep);

  // Enumeration over the four masks.
  double m1 = 0.0, m2 = 0.0;
  for (int mask = 0; mask < 4; ++mask) {
    const bool d0 = mask & 1, d1 = mask & 2;
    const double p = (d0 ? keep : 1 - keep) * (d1 ? keep : 1 - keep);
    const double y = (d0 ? 1.0 : 0.0) + (d1 ? 2.0 : 0.0);
    m1 += p * y;
    m2 += p * y * y;
  }
  const double enumerated = m2 - m1 * m1;
  const double analytic = analytic_preactivation_variance({w.data(), 2}, {f.data(), 2}, keep);
  const bool oracle_ok = std::abs(enumerated - 0.8) < 1e-12 && std::abs(analytic - 0.8) < 1e-12;

  McConfig cfg{100000, true, 17};
  Rng rng(17);
  const double big = mc_frame_uncertainty(lin, f, cfg, rng);
  const double rel = std::abs(big - analytic) / analytic;

  auto rms_error = [&](int k, int repeats) {
    McConfig c{k, true, 0};
    double sq = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const double e = mc_frame_uncertainty(lin, f, c, rng) - analytic;
      sq += e * e;
    }
    return std::sqrt(sq / repeats);
  };
  const double e2 = rms_error(100, 400);
  const double e4 = rms_error(10000, 400);
  const double ratio = e2 / e4;  // 1/sqrt(K) predicts 10
  const bool rate_ok = ratio >= 10.0 / kMcRateFactor && ratio <= 10.0 * kMcRateFactor;
  return {oracle_ok && rel <= kMcRelTol && rate_ok,
          "analytic " + fmt(analytic) + ", enumerated " + fmt(enumerated) + ", K=1e5 MU " + fmt(big) +
              " (rel err " + fmt(rel) + "), rms err ratio K=1e2/K=1e4 " + fmt(ratio)};
}

double gradient_rel_error(MlpParams p, const Eigen::VectorXd& x, const Target& t, Objective obj,
                          const DropoutMask* mask) {
  const Gradients g = backprop(p, x, t, obj, mask);
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = example_loss(p, x, t, obj, mask);
    param = saved - h;
    const double down = example_loss(p, x, t, obj, mask);
    param = saved;
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

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> dims = {10, 16, 12, 9, 6};
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    specs.push_back({dims[i], dims[i + 1], last ? Activation::kIdentity : Activation::kRelu, i == 0 ? 0.0 : 0.2});
  }
  MlpParams p = mlp_init(specs, 23);
  Rng rng(24);
  for (Layer& l : p.layers) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = uniform(rng, -0.3, 0.7);
  }
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    Eigen::VectorXd x(dims.front());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = uniform(rng, -1.5, 1.5);
    Eigen::VectorXd y(dims.back());
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = uniform(rng, -1.0, 1.0);
    const DropoutMask mask = sample_dropout_mask(p, rng);
    worst = std::max(worst, gradient_rel_error(p, x, trial % dims.back(), Objective::kCrossEntropy, nullptr));
    worst = std::max(worst, gradient_rel_error(p, x, trial % dims.back(), Objective::kCrossEntropy, &mask));
    worst = std::max(worst, gradient_rel_error(p, x, y, Objective::kMse, &mask));
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradSeconds, "max rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome entropy_endpoints() {
  const Eigen::VectorXd uniform_post = Eigen::VectorXd::Constant(1415, 1.0 / 1415.0);
  const double h = frame_entropy(uniform_post);
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(1415);
  one_hot[700] = 1.0;
  const double h0 = frame_entropy(one_hot);
  const double err = std::abs(h - std::log(1415.0));
  // The quoted 7.2550 is rounded loosely (ln 1415 = 7.25488...).
  return {err <= kEntropyTol && h0 == 0.0 && std::abs(h - 7.2550) < 1e-3,
          "uniform " + fmt(h) + " nats (err " + fmt(err) + "), one-hot " + fmt(h0)};
}

Outcome mixing_exactness() {
  Rng rng(5005);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 200 + static_cast<std::size_t>(uniform01(rng) * 3000.0);
    Waveform clean, noise;
    clean.samples.resize(n);
    noise.samples.resize(n + 500);
    const double gain = std::pow(10.0, uniform(rng, -3.0, 0.0));
    std::normal_distribution<double> gauss(0.0, gain);
    for (double& s : clean.samples) s = gauss(rng);
    for (double& s : noise.samples) s = uniform(rng, -1.0, 1.0);
    const double target = uniform(rng, -15.0, 35.0);
    const std::size_t offset = random_crop_offset(n, noise.size(), rng);
    const NoisyMixture m = mix_at_snr(clean, noise, target, offset);
    worst = std::max(worst, std::abs(measure_snr_db(m.clean, m.scaled_noise) - target));
  }
  return {worst <= kMixTolDb, "max |SNR error| " + fmt(worst) + " dB"};
}

Outcome exact_recovery() {
  Rng rng(77);
  double worst = 0.0;
  for (int degree = 0; degree <= 3; ++degree) {
    std::vector<double> c(static_cast<std::size_t>(degree) + 1);
    for (double& v : c) v = uniform(rng, -3.0, 3.0);
    std::vector<double> xs, ys;
    for (int i = 0; i < 30; ++i) {
      const double x = uniform(rng, -40.0, 60.0);
      double y = 0.0;
      for (int k = degree; k >= 0; --k) y = y * x + c[static_cast<std::size_t>(k)];
      xs.push_back(x);
      ys.push_back(y);
    }
    const Eigen::VectorXd raw = raw_coefficients(fit_poly(xs, ys, degree));
    for (int k = 0; k <= degree; ++k) worst = std::max(worst, std::abs(raw[k] - c[static_cast<std::size_t>(k)]));
  }
  // Bivariate cubic, graded-lexicographic monomials.
  std::vector<double> c(10);
  for (double& v : c) v = uniform(rng, -1.0, 1.0);
  std::vector<double> x1, x2, ys;
  for (int i = 0; i < 60; ++i) {
    const double a = uniform(rng, -2.0, 2.0), b = uniform(rng, 0.0, 3.0);
    const double basis[] = {1, a, b, a * a, a * b, b * b, a * a * a, a * a * b, a * b * b, b * b * b};
    double y = 0.0;
    for (int k = 0; k < 10; ++k) y += c[static_cast<std::size_t>(k)] * basis[k];
    x1.push_back(a);
    x2.push_back(b);
    ys.push_back(y);
  }
  const Eigen::VectorXd raw = raw_coefficients(fit_poly2(x1, x2, ys, 3));
  for (int k = 0; k < 10; ++k) worst = std::max(worst, std::abs(raw[k] - c[static_cast<std::size_t>(k)]));
  return {worst <= kRecoveryTol, "max coefficient error " + fmt(worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// One full run: pipeline, MAE table and trend report, all under `dir`.
struct FullRun {
  MaeTable table;
  TrendReport trends;
  double seconds = 0.0;
};

FullRun full_run(const ExperimentConfig& cfg, const fs::path& dir, bool with_trends) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove_all(dir);
  FullRun r;
  const ModelBundle bundle = run_pipeline(cfg, dir);
  r.table = evaluate(bundle, cfg);
  write_mae_csv(dir / "mae_table.csv", r.table);
  std::ofstream(dir / "mae_table.txt") << format_mae_table(r.table);
  if (with_trends) r.trends = emit_trend_report(bundle, cfg, dir);
  r.seconds = seconds_since(t0);
  return r;
}

Outcome trend_reproduction(const ExperimentConfig& cfg, const FullRun& run) {
  double worst_ent = -2.0, worst_mu = -2.0;
  std::string worst_noise;
  for (const std::string& noise : cfg.noise_types) {
    std::vector<double> snr, ent, mu;
    for (const TrendRow& r : run.trends.series(noise)) {
      snr.push_back(r.snr_db);
      ent.push_back(r.mean_entropy);
      mu.push_back(r.mean_mu);
    }
    const double se = stats::spearman(snr, ent), sm = stats::spearman(snr, mu);
    if (std::max(se, sm) > std::max(worst_ent, worst_mu)) worst_noise = noise;
    worst_ent = std::max(worst_ent, se);
    worst_mu = std::max(worst_mu, sm);
  }
  const bool scale_ok = cfg.classifier.hidden_layers == 4 && cfg.classifier.hidden_units == 128 &&
                        cfg.n_classes == 32 && cfg.noise_types.size() >= 6 && cfg.n_train_utts >= 200 &&
                        cfg.n_test_utts >= 50;
  return {scale_ok && worst_ent <= kSpearmanMax && worst_mu <= kSpearmanMax,
          std::to_string(cfg.noise_types.size()) + " noise types; max Spearman entropy " + fmt(worst_ent) +
              ", MU " + fmt(worst_mu) + " (" + worst_noise + "); " + fmt(run.seconds) + " s"};
}

Outcome varnet_distillation(const ExperimentConfig& cfg, const FullRun& run) {
  int unseen = 0, rising = 0;
  std::string detail;
  for (const std::string& noise : cfg.noise_types) {
    if (std::find(cfg.varnet_noise_types.begin(), cfg.varnet_noise_types.end(), noise) !=
        cfg.varnet_noise_types.end()) {
      continue;
    }
    ++unseen;
    double at_lo = 0.0, at_hi = 0.0;
    bool have_lo = false, have_hi = false;
    for (const TrendRow& r : run.trends.series(noise)) {
      if (r.snr_db == -10.0) at_lo = r.mean_varnet, have_lo = true;
      if (r.snr_db == 30.0) at_hi = r.mean_varnet, have_hi = true;
    }
    if (have_lo && have_hi && at_lo > at_hi) ++rising;
    detail += " " + noise + " " + fmt(at_lo) + ">" + fmt(at_hi);
  }
  const double pearson = run.trends.varnet_mc_pearson;
  return {pearson >= kPearsonMin && unseen >= 4 && rising == unseen,
          "held-out Pearson " + fmt(pearson) + "; unseen " + std::to_string(rising) + "/" +
              std::to_string(unseen) + " with varnet(-10 dB) > varnet(30 dB):" + detail};
}

Outcome regressor_quality(const FullRun& run) {
  const double f2 = run.table.mean_mae(Method::kF2);
  const double base = run.table.mean_mae(Method::kBaseline);
  return {f2 <= kF2MaeMaxDb && f2 <= base,
          "f2 MAE " + fmt(f2) + " dB, baseline MAE " + fmt(base) + " dB, f1 " +
              fmt(run.table.mean_mae(Method::kF1)) + " dB, f3 " + fmt(run.table.mean_mae(Method::kF3)) + " dB"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "snrkit_acceptance";

  report(1, "closed-form dropout variance equals mask enumeration", guarded(oracle_equivalence));
  report(2, "MC-dropout estimate converges at 1/sqrt(K)", guarded(mc_convergence));
  report(3, "backprop matches central differences", guarded(gradient_check));
  report(4, "entropy endpoints", guarded(entropy_endpoints));
  report(5, "mixing hits the target SNR", guarded(mixing_exactness));

  const ExperimentConfig cfg = ExperimentConfig::defaults();
  FullRun first;
  bool first_ok = false;
  const Outcome run_outcome = guarded([&] {
    first = full_run(cfg, work / "run_a", true);
    first_ok = true;
    return Outcome{true, ""};
  });
  if (first_ok) {
    report(6, "uncertainty falls as SNR rises", guarded([&] { return trend_reproduction(cfg, first); }));
    report(7, "variance network tracks MC-dropout", guarded([&] { return varnet_distillation(cfg, first); }));
    report(8, "f2 regressor accuracy", guarded([&] { return regressor_quality(first); }));
  } else {
    for (int id : {6, 7, 8}) report(id, "full pipeline", run_outcome);
  }
  report(9, "identical MAE tables from repeated runs", guarded([&] {
           if (!first_ok) return Outcome{false, "first run failed"};
           const FullRun second = full_run(cfg, work / "run_b", false);
           const std::string a = slurp(work / "run_a" / "mae_table.csv");
           const std::string b = slurp(work / "run_b" / "mae_table.csv");
           return Outcome{!a.empty() && a == b, std::to_string(a.size()) + " bytes, " +
                                                    (a == b ? "identical" : "different") + "; " +
                                                    fmt(second.seconds) + " s"};
         }));
  report(10, "noiseless polynomial recovery", guarded(exact_recovery));

  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return g_failures;
}
