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

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "preformer/tensor.hpp"

namespace preformer {

using TokenSeq = std::vector<int>;

/// Row-wise log-softmax of CTC logits [T' x (V + 1)].
Matrix ctc_log_posterior(const Matrix& logits);

/// Minimum number of frames able to emit `target`: one per label plus one
/// separating blank per adjacent repeat.
Index ctc_min_frames(std::span<const int> target);

/// -log p(target | log_probs) by the forward recursion over the blank-augmented
/// label sequence. Returns +infinity when no alignment exists.
double ctc_neg_log_likelihood(const Matrix& log_probs, std::span<const int> target, int blank);

/// Differentiable CTC loss on a [T' x (V + 1)] log-posterior. Gradients come
/// from the forward-backward occupancies. std::nullopt for infeasible targets.
std::optional<Var> ctc_loss(const Var& log_probs, std::span<const int> target, int blank);

/// Best path: per-frame argmax, merge repeats, drop blanks.
TokenSeq ctc_greedy_decode(const Matrix& log_probs, int blank);

/// Incremental CTC prefix probabilities for joint beam search.
///
/// For a label prefix g the state keeps, per frame t, the log-probability of
/// all partial paths over frames [0, t] whose collapse is exactly g and that end
/// in a label (`label`) or a blank (`blank`), together with log p(g...), the
/// probability that the full collapsed output begins with g.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<double> label;
    std::vector<double> blank;
    double log_prefix_prob = 0.0;
    int last = -1;
  };

  CtcPrefixScorer(Matrix log_probs, int blank);

  /// State of the empty prefix, log p = 0.
  State initial() const;
  /// (state for g.c, log p(g.c...) - log p(g...)). Blank is rejected.
  std::pair<State, double> extend(const State& state, int token) const;
  /// log p(output == g) - log p(g...): the score of terminating after g.
  double end_score(const State& state) const;
  /// log p(output == g).
  double end_log_prob(const State& state) const;

  Index frames() const { return log_probs_.rows(); }
  int blank() const { return blank_; }

 private:
  Matrix log_probs_;
  int blank_;
};

}  // namespace preformer
