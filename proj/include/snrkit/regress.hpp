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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snrkit/affine.hpp"

namespace snrkit {

enum class RegressorKind { kF1Entropy, kF2Uncertainty, kF3Joint };

const char* to_string(RegressorKind kind);
RegressorKind regressor_kind_from_string(const std::string& name);

/// Polynomial SNR regressor on standardized inputs. Univariate coefficients
/// are ordered by power; bivariate ones in graded-lex order
/// (1, z1, z2, z1^2, z1 z2, z2^2, ...).
struct SnrRegressor {
  std::string noise_type;
  RegressorKind kind = RegressorKind::kF2Uncertainty;
  int degree = 3;
  std::vector<Affine> input_standardization;
  Eigen::VectorXd coeffs;
  double residual_norm = 0.0;
  double clamp_lo_db = -20.0;
  double clamp_hi_db = 40.0;

  int arity() const { return static_cast<int>(input_standardization.size()); }
};

/// Number of monomials of total degree <= degree in `arity` variables.
int monomial_count(int arity, int degree);

SnrRegressor fit_poly(std::span<const double> xs, std::span<const double> ys, int degree);
SnrRegressor fit_poly2(std::span<const double> x1s, std::span<const double> x2s,
                       std::span<const double> ys, int degree);

/// Polynomial value without the output clamp.
double evaluate_poly(const SnrRegressor& r, std::span<const double> inputs);

/// Clamped SNR estimate in dB.
double predict_snr(const SnrRegressor& r, std::span<const double> inputs);

/// Coefficients in the monomial basis of the raw (unstandardized) inputs,
/// same ordering as `coeffs`.
Eigen::VectorXd raw_coefficients(const SnrRegressor& r);

/// Design matrix of standardized monomials, one row per sample.
Eigen::MatrixXd design_matrix(const SnrRegressor& r, std::span<const std::vector<double>> columns);

void write_regressors(const std::filesystem::path& path, const std::vector<SnrRegressor>& regs);
std::vector<SnrRegressor> read_regressors(const std::filesystem::path& path);

}  // namespace snrkit
