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

#include "preformer/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace preformer {

bool path_matches(std::string_view path, std::string_view selector) {
  if (selector.empty()) return true;
  if (path.size() < selector.size() || path.substr(0, selector.size()) != selector) return false;
  return path.size() == selector.size() || path[selector.size()] == '.';
}

void ModelParams::add(const std::string& path, Matrix value) {
  if (!params_.emplace(path, Parameter{std::move(value), false}).second) {
    throw std::invalid_argument("duplicate parameter path: " + path);
  }
}

Parameter& ModelParams::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

const Parameter& ModelParams::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

std::size_t ModelParams::set_frozen_matching(std::string_view selector, bool frozen) {
  std::size_t n = 0;
  for (auto& [path, p] : params_) {
    if (path_matches(path, selector)) {
      p.frozen = frozen;
      ++n;
    }
  }
  return n;
}

std::vector<std::string> ModelParams::paths(std::string_view selector) const {
  std::vector<std::string> out;
  for (const auto& [path, p] : params_) {
    if (path_matches(path, selector)) out.push_back(path);
  }
  return out;
}

std::size_t ModelParams::count(std::string_view selector) const {
  std::size_t n = 0;
  for (const auto& [path, p] : params_) {
    if (path_matches(path, selector)) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (auto a = params_.begin(), b = other.params_.begin(); a != params_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.frozen != b->second.frozen) return false;
    const Matrix& x = a->second.value;
    const Matrix& y = b->second.value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (!std::equal(x.data(), x.data() + x.size(), y.data())) return false;
  }
  return true;
}

Var Graph::param(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  const Parameter& p = params_.at(path);
  const bool requires_grad =
      mode_ == GradMode::kAll || (mode_ == GradMode::kTrainable && !p.frozen);
  Var v = tape_.leaf(p.value, requires_grad);
  bound_.emplace(path, v);
  return v;
}

void Graph::accumulate_grads(GradientMap& into, double weight) const {
  for (const auto& [path, v] : bound_) {
    if (!v.requires_grad()) continue;
    const Matrix& g = v.grad();
    auto it = into.find(path);
    if (it == into.end()) {
      into.emplace(path, weight * g);
    } else {
      it->second += weight * g;
    }
  }
}

void Graph::enable_dropout(double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
  dropout_rng_ = &rng;
}

Var Graph::dropout(const Var& x) {
  if (dropout_rate_ == 0.0 || dropout_rng_ == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - dropout_rate_);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(*dropout_rng_) ? 1.0 / (1.0 - dropout_rate_) : 0.0;
  }
  return mul(x, constant(std::move(mask)));
}

Matrix xavier_uniform(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace preformer
