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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "preformer/grad_check.hpp"
#include "preformer/params.hpp"

namespace preformer {

/// Scalar objective built on a graph over named parameters.
using GraphFunction = std::function<Var(Graph&)>;

/// Central differences over every scalar of every parameter in `params`,
/// compared with the gradient from one reverse pass.
GradCheckReport grad_check_params(const GraphFunction& f, const ModelParams& params,
                                  const GradCheckOptions& opts = {});

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

/// Checks each layer species, the encoder, the decoders and both losses on
/// small seeded inputs. Inputs are registered as parameters so their
/// gradients are checked too.
std::vector<NamedGradCheck> gradient_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace preformer
