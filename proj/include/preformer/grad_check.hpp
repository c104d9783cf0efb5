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
#include <functional>
#include <string>
#include <vector>

#include "preformer/tensor.hpp"

namespace preformer {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t scalars_checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Entries whose gradients are both below this magnitude are compared absolutely.
  double abs_floor = 1e-3;
};

/// Builds a scalar on a fresh tape from leaves bound to the given parameter values.
template <typename Scalar>
using ScalarFunction =
    std::function<BasicVar<Scalar>(Tape<Scalar>&, const std::vector<BasicVar<Scalar>>&)>;

/// Central-difference check of reverse-mode gradients for every parameter scalar.
template <typename Scalar>
GradCheckReport grad_check(const ScalarFunction<Scalar>& f,
                           const std::vector<MatrixX<Scalar>>& params,
                           const GradCheckOptions& opts = {}) {
  auto evaluate = [&](const std::vector<MatrixX<Scalar>>& values, bool with_grad,
                      std::vector<MatrixX<Scalar>>* grads) {
    Tape<Scalar> tape;
    std::vector<BasicVar<Scalar>> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(tape.leaf(v, with_grad));
    BasicVar<Scalar> out = f(tape, leaves);
    const Scalar result = out.item();
    if (!std::isfinite(static_cast<double>(result))) {
      throw NumericError("grad_check: objective is not finite");
    }
    if (grads != nullptr) {
      tape.backward(out);
      grads->clear();
      for (const auto& leaf : leaves) grads->push_back(leaf.grad());
    }
    return result;
  };

  std::vector<MatrixX<Scalar>> analytic;
  evaluate(params, true, &analytic);

  GradCheckReport report;
  std::vector<MatrixX<Scalar>> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Index i = 0; i < params[p].size(); ++i) {
      const Scalar original = params[p].data()[i];
      probe[p].data()[i] = original + Scalar(opts.step);
      const Scalar plus = evaluate(probe, false, nullptr);
      probe[p].data()[i] = original - Scalar(opts.step);
      const Scalar minus = evaluate(probe, false, nullptr);
      probe[p].data()[i] = original;

      const double numeric = static_cast<double>(plus - minus) / (2.0 * opts.step);
      const double exact = static_cast<double>(analytic[p].data()[i]);
      const double denom = std::max({std::abs(numeric), std::abs(exact), opts.abs_floor});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.scalars_checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic = exact;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace preformer
