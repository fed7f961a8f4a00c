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

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dishwx/error.hpp"

namespace dishwx::tl {

/// Probabilities are clamped to this floor before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// Binary form: -[y log p + (1 - y) log(1 - p)] for y in {0, 1}.
inline double binary_cross_entropy(int y, double p) {
  if (y != 0 && y != 1) throw Error(ErrorCode::UnknownClassLabel, "binary label must be 0 or 1");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidProbability, "probability outside [0,1]");
  const double q = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

/// Categorical form -sum_c y_c log p_c with an index label. `probs` must be a
/// probability vector (entries in [0,1], sum 1 within 1e-6).
inline double cross_entropy(int label, std::span<const double> probs) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw Error(ErrorCode::UnknownClassLabel, "label index out of range");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidProbability, "probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorCode::InvalidProbability, "probabilities do not sum to 1");
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

/// One-hot form -sum_c y_c log p_c.
inline double cross_entropy(std::span<const double> one_hot, std::span<const double> probs) {
  if (one_hot.size() != probs.size()) throw Error(ErrorCode::DimensionMismatch, "label and probability sizes differ");
  int label = -1;
  for (std::size_t c = 0; c < one_hot.size(); ++c) {
    if (one_hot[c] == 1.0 && label < 0)
      label = static_cast<int>(c);
    else if (one_hot[c] != 0.0)
      throw Error(ErrorCode::UnknownClassLabel, "label vector is not one-hot");
  }
  if (label < 0) throw Error(ErrorCode::UnknownClassLabel, "label vector is not one-hot");
  return cross_entropy(label, probs);
}

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

/// Cross-entropy of softmax(logits) and its gradient w.r.t. the logits,
/// softmax(z) - onehot(label).
inline double softmax_cross_entropy(std::span<const double> logits, int label, std::vector<double>* grad) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw Error(ErrorCode::UnknownClassLabel, "label index out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  const double log_z = m + std::log(s);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - log_z);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return log_z - logits[static_cast<std::size_t>(label)];
}

}  // namespace dishwx::tl
