/* Copyright 2026 The dishwx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Unbiased squared maximum mean discrepancy with a Gaussian kernel.
// Bandwidth sigma is the median pairwise Euclidean distance over the pooled
// samples; k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dishwx/error.hpp"

namespace dishwx::eval {

using FeatureSet = std::vector<std::vector<float>>;

namespace detail {

inline Eigen::MatrixXd stack(const FeatureSet& s, std::size_t dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].size() != dim) throw Error(ErrorCode::DimensionMismatch, "feature vectors differ in length");
    for (std::size_t k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = s[i][k];
  }
  return m;
}

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

/// Median of the pairwise distances among all distinct pooled pairs.
inline double median_bandwidth(const Eigen::MatrixXd& pooled) {
  const auto d2 = detail::squared_distances(pooled, pooled);
  std::vector<double> v;
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) v.push_back(std::sqrt(d2(i, j)));
  if (v.empty()) return 1.0;
  const auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double med = *mid;
  if (v.size() % 2 == 0) med = 0.5 * (med + *std::max_element(v.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

/// Throws InsufficientSamples when either set has fewer than 2 vectors (the
/// unbiased estimator divides by m(m-1)) and DimensionMismatch when lengths
/// differ.
inline double mmd_estimate(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() < 2 || b.size() < 2)
    throw Error(ErrorCode::InsufficientSamples, "MMD needs at least 2 samples per set");
  const std::size_t dim = a.front().size();
  if (b.front().size() != dim) throw Error(ErrorCode::DimensionMismatch, "feature sets differ in dimension");
  const auto xa = detail::stack(a, dim);
  const auto xb = detail::stack(b, dim);
  Eigen::MatrixXd pooled(xa.rows() + xb.rows(), xa.cols());
  pooled << xa, xb;
  const double sigma = median_bandwidth(pooled);
  const double g = 1.0 / (2.0 * sigma * sigma);
  const Eigen::MatrixXd kaa = (-g * detail::squared_distances(xa, xa)).array().exp().matrix();
  const Eigen::MatrixXd kbb = (-g * detail::squared_distances(xb, xb)).array().exp().matrix();
  const Eigen::MatrixXd kab = (-g * detail::squared_distances(xa, xb)).array().exp().matrix();
  const double m = static_cast<double>(xa.rows()), n = static_cast<double>(xb.rows());
  const double saa = (kaa.sum() - kaa.trace()) / (m * (m - 1.0));
  const double sbb = (kbb.sum() - kbb.trace()) / (n * (n - 1.0));
  const double sab = kab.sum() / (m * n);
  return std::max(0.0, saa + sbb - 2.0 * sab);
}

}  // namespace dishwx::eval
