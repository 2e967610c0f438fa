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

#include "snrkit/regress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>

#include "snrkit/error.hpp"

namespace snrkit {
namespace {

constexpr double kRidge = 1e-9;
constexpr double kMinRcond = 1e-13;
constexpr double kRankTol = 1e-10;

std::vector<std::pair<int, int>> monomials(int arity, int degree) {
  std::vector<std::pair<int, int>> out;
  for (int t = 0; t <= degree; ++t) {
    if (arity == 1) {
      out.emplace_back(t, 0);
    } else {
      for (int i = t; i >= 0; --i) out.emplace_back(i, t - i);
    }
  }
  return out;
}

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

SnrRegressor fit_columns(std::vector<std::vector<double>> columns, std::span<const double> ys, int degree,
                         RegressorKind kind) {
  if (degree < 0) fail(ErrorCode::kConfig, "degree must be non-negative");
  const std::size_t n = ys.size();
  for (const auto& c : columns) {
    if (c.size() != n) fail(ErrorCode::kDimension, "input and target counts differ");
  }
  SnrRegressor r;
  r.kind = kind;
  r.degree = degree;
  const int arity = static_cast<int>(columns.size());
  const auto p = static_cast<std::size_t>(monomial_count(arity, degree));
  if (n < p) fail(ErrorCode::kFit, "need at least " + std::to_string(p) + " points, got " + std::to_string(n));

  for (const auto& c : columns) {
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (!(sd > 0.0) && degree > 0) fail(ErrorCode::kFit, "inputs are all identical");
    r.input_standardization.push_back({mean, sd > 0.0 ? sd : 1.0});
  }

  const Eigen::MatrixXd a = design_matrix(r, columns);
  const Eigen::Map<const Eigen::VectorXd> y(ys.data(), static_cast<Eigen::Index>(n));
  // The ridge only stabilizes the factorization; rank is judged on the
  // design itself so collinear inputs are still reported.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(kRankTol);
  if (qr.rank() < a.cols()) fail(ErrorCode::kFit, "design matrix is rank deficient");
  const Eigen::MatrixXd gram = a.transpose() * a;
  Eigen::MatrixXd normal = gram;
  normal.diagonal().array() += kRidge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < kMinRcond) {
    fail(ErrorCode::kFit, "normal equations are rank deficient");
  }
  const Eigen::VectorXd rhs = a.transpose() * y;
  r.coeffs = ldlt.solve(rhs);
  // Iterative refinement removes the ridge bias from full-rank fits.
  for (int it = 0; it < 3; ++it) r.coeffs += ldlt.solve(rhs - gram * r.coeffs);
  r.residual_norm = (y - a * r.coeffs).norm();
  return r;
}

// Coefficients of ((x - offset) / scale)^k in powers of x, k = 0..degree.
std::vector<Eigen::VectorXd> standardized_powers(const Affine& af, int degree) {
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd cur = Eigen::VectorXd::Zero(degree + 1);
  cur[0] = 1.0;
  out.push_back(cur);
  for (int k = 1; k <= degree; ++k) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(degree + 1);
    for (int j = 0; j < degree; ++j) {
      next[j + 1] += cur[j] / af.scale;
      next[j] -= cur[j] * af.offset / af.scale;
    }
    cur = next;
    out.push_back(cur);
  }
  return out;
}

}  // namespace

const char* to_string(RegressorKind kind) {
  switch (kind) {
    case RegressorKind::kF1Entropy: return "f1_entropy";
    case RegressorKind::kF2Uncertainty: return "f2_uncertainty";
    case RegressorKind::kF3Joint: return "f3_joint";
  }
  return "unknown";
}

RegressorKind regressor_kind_from_string(const std::string& name) {
  for (auto k : {RegressorKind::kF1Entropy, RegressorKind::kF2Uncertainty, RegressorKind::kF3Joint}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::kParse, "unknown regressor kind '" + name + "'");
}

int monomial_count(int arity, int degree) {
  return arity == 1 ? degree + 1 : (degree + 1) * (degree + 2) / 2;
}

Eigen::MatrixXd design_matrix(const SnrRegressor& r, std::span<const std::vector<double>> columns) {
  if (static_cast<int>(columns.size()) != r.arity()) fail(ErrorCode::kArity, "wrong number of input columns");
  const auto terms = monomials(r.arity(), r.degree);
  const auto n = static_cast<Eigen::Index>(columns.front().size());
  Eigen::MatrixXd a(n, static_cast<Eigen::Index>(terms.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z1 = r.input_standardization[0].standardize(columns[0][static_cast<std::size_t>(i)]);
    const double z2 = r.arity() > 1 ? r.input_standardization[1].standardize(columns[1][static_cast<std::size_t>(i)]) : 0.0;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      a(i, static_cast<Eigen::Index>(t)) = ipow(z1, terms[t].first) * ipow(z2, terms[t].second);
    }
  }
  return a;
}

SnrRegressor fit_poly(std::span<const double> xs, std::span<const double> ys, int degree) {
  return fit_columns({std::vector<double>(xs.begin(), xs.end())}, ys, degree, RegressorKind::kF2Uncertainty);
}

SnrRegressor fit_poly2(std::span<const double> x1s, std::span<const double> x2s, std::span<const double> ys,
                       int degree) {
  return fit_columns({std::vector<double>(x1s.begin(), x1s.end()), std::vector<double>(x2s.begin(), x2s.end())},
                     ys, degree, RegressorKind::kF3Joint);
}

double evaluate_poly(const SnrRegressor& r, std::span<const double> inputs) {
  if (static_cast<int>(inputs.size()) != r.arity()) {
    fail(ErrorCode::kArity, "regressor expects " + std::to_string(r.arity()) + " inputs");
  }
  const auto terms = monomials(r.arity(), r.degree);
  if (static_cast<Eigen::Index>(terms.size()) != r.coeffs.size()) fail(ErrorCode::kDimension, "coefficient count mismatch");
  const double z1 = r.input_standardization[0].standardize(inputs[0]);
  const double z2 = r.arity() > 1 ? r.input_standardization[1].standardize(inputs[1]) : 0.0;
  double y = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    y += r.coeffs[static_cast<Eigen::Index>(t)] * ipow(z1, terms[t].first) * ipow(z2, terms[t].second);
  }
  return y;
}

double predict_snr(const SnrRegressor& r, std::span<const double> inputs) {
  const double y = evaluate_poly(r, inputs);
  if (std::isnan(y)) return r.clamp_lo_db;
  return std::clamp(y, r.clamp_lo_db, r.clamp_hi_db);
}

Eigen::VectorXd raw_coefficients(const SnrRegressor& r) {
  const auto terms = monomials(r.arity(), r.degree);
  const auto p1 = standardized_powers(r.input_standardization[0], r.degree);
  std::vector<Eigen::VectorXd> p2;
  if (r.arity() > 1) p2 = standardized_powers(r.input_standardization[1], r.degree);

  auto index_of = [&](int i, int j) {
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (terms[t].first == i && terms[t].second == j) return static_cast<Eigen::Index>(t);
    }
    fail(ErrorCode::kDimension, "monomial outside basis");
  };

  Eigen::VectorXd raw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const double c = r.coeffs[static_cast<Eigen::Index>(t)];
    const auto [a, b] = terms[t];
    for (int i = 0; i <= a; ++i) {
      if (r.arity() == 1) {
        raw[index_of(i, 0)] += c * p1[static_cast<std::size_t>(a)][i];
        continue;
      }
      for (int j = 0; j <= b; ++j) {
        raw[index_of(i, j)] += c * p1[static_cast<std::size_t>(a)][i] * p2[static_cast<std::size_t>(b)][j];
      }
    }
  }
  return raw;
}

void write_regressors(const std::filesystem::path& path, const std::vector<SnrRegressor>& regs) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << std::setprecision(17);
  for (const SnrRegressor& r : regs) {
    os << "regressor " << r.noise_type << ' ' << to_string(r.kind) << ' ' << r.degree << '\n';
    os << "affine";
    for (const Affine& a : r.input_standardization) os << ' ' << a.offset << ' ' << a.scale;
    os << '\n' << "clamp " << r.clamp_lo_db << ' ' << r.clamp_hi_db << '\n' << "coeffs";
    for (Eigen::Index i = 0; i < r.coeffs.size(); ++i) os << ' ' << r.coeffs[i];
    os << '\n' << "residual " << r.residual_norm << '\n' << "end\n";
  }
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<SnrRegressor> read_regressors(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<SnrRegressor> out;
  std::string line;
  SnrRegressor cur;
  bool open = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key.front() == '#') continue;
    auto bad = [&](const std::string& why) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (key == "regressor") {
      if (open) bad("nested regressor block");
      cur = {};
      std::string kind;
      if (!(ls >> cur.noise_type >> kind >> cur.degree)) bad("expected: regressor <noise> <kind> <degree>");
      cur.kind = regressor_kind_from_string(kind);
      open = true;
    } else if (!open) {
      bad("line outside regressor block");
    } else if (key == "affine") {
      double o = 0.0, s = 0.0;
      while (ls >> o >> s) cur.input_standardization.push_back({o, s});
    } else if (key == "clamp") {
      if (!(ls >> cur.clamp_lo_db >> cur.clamp_hi_db)) bad("bad clamp line");
    } else if (key == "coeffs") {
      std::vector<double> c;
      for (double v; ls >> v;) c.push_back(v);
      cur.coeffs = Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    } else if (key == "residual") {
      ls >> cur.residual_norm;
    } else if (key == "end") {
      const int expected_arity = cur.kind == RegressorKind::kF3Joint ? 2 : 1;
      if (cur.arity() != expected_arity) bad("affine arity does not match kind");
      if (cur.coeffs.size() != monomial_count(cur.arity(), cur.degree)) bad("coefficient count does not match degree");
      out.push_back(cur);
      open = false;
    } else {
      bad("unknown key '" + key + "'");
    }
  }
  if (open) fail(ErrorCode::kParse, path.string() + ": unterminated regressor block");
  return out;
}

}  // namespace snrkit
