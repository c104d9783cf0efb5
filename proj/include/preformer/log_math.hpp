// Copyright 2026 The Preformer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace preformer {

/// Log-domain representation of probability zero. Every helper below treats
/// it as absorbing, so no arithmetic is ever performed on it directly.
template <typename Scalar = double>
inline constexpr Scalar kLogZero = -std::numeric_limits<Scalar>::infinity();

template <typename Scalar>
inline bool is_log_zero(Scalar x) {
  return x == kLogZero<Scalar>;
}

/// log(exp(a) + exp(b))
template <typename Scalar>
inline Scalar log_add(Scalar a, Scalar b) {
  if (is_log_zero(a)) return b;
  if (is_log_zero(b)) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

/// log(exp(a) * exp(b))
template <typename Scalar>
inline Scalar log_mul(Scalar a, Scalar b) {
  if (is_log_zero(a) || is_log_zero(b)) return kLogZero<Scalar>;
  return a + b;
}

template <typename Scalar>
Scalar log_sum_exp(std::span<const Scalar> xs) {
  Scalar max = kLogZero<Scalar>;
  for (Scalar x : xs) max = std::max(max, x);
  if (is_log_zero(max)) return kLogZero<Scalar>;
  Scalar sum = 0;
  for (Scalar x : xs) {
    if (!is_log_zero(x)) sum += std::exp(x - max);
  }
  return max + std::log(sum);
}

inline double log_sum_exp(std::initializer_list<double> xs) {
  return log_sum_exp<double>(std::span<const double>(xs.begin(), xs.size()));
}

}  // namespace preformer
