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
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "preformer/tensor.hpp"

namespace preformer {

using Rng = std::mt19937_64;

struct Parameter {
  Matrix value;
  bool frozen = false;
};

/// True when `path` equals `selector` or lies beneath it in the dotted hierarchy.
/// The empty selector matches everything.
bool path_matches(std::string_view path, std::string_view selector);

/// Named parameter set addressed by dotted paths, e.g. "decoder.self.0.attn.wq".
class ModelParams {
 public:
  using Map = std::map<std::string, Parameter>;

  void add(const std::string& path, Matrix value);
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  Parameter& at(const std::string& path);
  const Parameter& at(const std::string& path) const;
  Matrix& value(const std::string& path) { return at(path).value; }
  const Matrix& value(const std::string& path) const { return at(path).value; }

  bool frozen(const std::string& path) const { return at(path).frozen; }
  void set_frozen(const std::string& path, bool frozen) { at(path).frozen = frozen; }
  /// Returns the number of parameters affected.
  std::size_t set_frozen_matching(std::string_view selector, bool frozen);
  void freeze_all() { set_frozen_matching("", true); }

  std::vector<std::string> paths(std::string_view selector = "") const;
  /// Scalar count of every parameter under `selector`.
  std::size_t count(std::string_view selector = "") const;
  std::size_t size() const { return params_.size(); }

  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }

  bool operator==(const ModelParams& other) const;

 private:
  Map params_;
};

using GradientMap = std::map<std::string, Matrix>;

enum class GradMode {
  kNone,       // evaluation only
  kTrainable,  // gradients for parameters that are not frozen
  kAll,        // gradients for every parameter (used by gradient checks)
};

/// Binds a ModelParams onto a fresh tape for one forward/backward pass.
class Graph {
 public:
  Graph(const ModelParams& params, GradMode mode) : params_(params), mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  DoubleTape& tape() { return tape_; }
  Var param(const std::string& path);
  Var constant(Matrix value) { return tape_.constant(std::move(value)); }

  /// Inverted dropout applied by dropout(); off until enabled with a positive rate.
  void enable_dropout(double rate, Rng& rng);
  Var dropout(const Var& x);

  /// Adds weight * dL/dp into `into` for every bound parameter that received gradient.
  void accumulate_grads(GradientMap& into, double weight = 1.0) const;

 private:
  const ModelParams& params_;
  GradMode mode_;
  DoubleTape tape_;
  std::unordered_map<std::string, Var> bound_;
  double dropout_rate_ = 0.0;
  Rng* dropout_rng_ = nullptr;
};

// Initializers.
Matrix xavier_uniform(Index rows, Index cols, Rng& rng);
Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng);

}  // namespace preformer
