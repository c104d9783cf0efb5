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

#include "preformer/ctc.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "preformer/log_math.hpp"

namespace preformer {

namespace {

constexpr double kZero = kLogZero<double>;

void check_labels(std::span<const int> target, Index classes, int blank) {
  for (int label : target) {
    if (label == blank) throw std::invalid_argument("ctc: blank inside target sequence");
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("ctc: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
  if (blank < 0 || blank >= classes) throw std::invalid_argument("ctc: blank index out of range");
}

// Blank-augmented labels: blank, l1, blank, l2, ..., lL, blank.
std::vector<int> expand(std::span<const int> target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

// alpha(t, s): log-prob of all prefixes over frames [0, t] ending in state s,
// including the emission at t.
Matrix forward_variables(const Matrix& lp, const std::vector<int>& ext, int blank) {
  const Index frames = lp.rows();
  const auto states = static_cast<Index>(ext.size());
  Matrix alpha = Matrix::Constant(frames, states, kZero);
  alpha(0, 0) = lp(0, ext[0]);
  if (states > 1) alpha(0, 1) = lp(0, ext[1]);
  for (Index t = 1; t < frames; ++t) {
    for (Index s = 0; s < states; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(ext, static_cast<std::size_t>(s), blank)) acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = log_mul(acc, lp(t, ext[s]));
    }
  }
  return alpha;
}

// beta(t, s): log-prob of completing the sequence from state s at frame t,
// excluding the emission at t.
Matrix backward_variables(const Matrix& lp, const std::vector<int>& ext, int blank) {
  const Index frames = lp.rows();
  const auto states = static_cast<Index>(ext.size());
  Matrix beta = Matrix::Constant(frames, states, kZero);
  beta(frames - 1, states - 1) = 0.0;
  if (states > 1) beta(frames - 1, states - 2) = 0.0;
  for (Index t = frames - 1; t-- > 0;) {
    for (Index s = 0; s < states; ++s) {
      double acc = log_mul(beta(t + 1, s), lp(t + 1, ext[s]));
      if (s + 1 < states) acc = log_add(acc, log_mul(beta(t + 1, s + 1), lp(t + 1, ext[s + 1])));
      if (s + 2 < states && can_skip(ext, static_cast<std::size_t>(s + 2), blank)) {
        acc = log_add(acc, log_mul(beta(t + 1, s + 2), lp(t + 1, ext[s + 2])));
      }
      beta(t, s) = acc;
    }
  }
  return beta;
}

double total_log_prob(const Matrix& alpha) {
  const Index last = alpha.rows() - 1;
  const Index states = alpha.cols();
  double lp = alpha(last, states - 1);
  if (states > 1) lp = log_add(lp, alpha(last, states - 2));
  return lp;
}

}  // namespace

Matrix ctc_log_posterior(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index t = 0; t < logits.rows(); ++t) {
    const double max = logits.row(t).maxCoeff();
    const double lse = max + std::log((logits.row(t).array() - max).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

Index ctc_min_frames(std::span<const int> target) {
  Index n = static_cast<Index>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

double ctc_neg_log_likelihood(const Matrix& log_probs, std::span<const int> target, int blank) {
  check_labels(target, log_probs.cols(), blank);
  if (log_probs.rows() == 0 || log_probs.rows() < ctc_min_frames(target)) {
    return std::numeric_limits<double>::infinity();
  }
  const double lp = total_log_prob(forward_variables(log_probs, expand(target, blank), blank));
  return is_log_zero(lp) ? std::numeric_limits<double>::infinity() : -lp;
}

std::optional<Var> ctc_loss(const Var& log_probs, std::span<const int> target, int blank) {
  const Matrix& lp = log_probs.value();
  check_labels(target, lp.cols(), blank);
  if (lp.rows() == 0 || lp.rows() < ctc_min_frames(target)) return std::nullopt;
  const std::vector<int> ext = expand(target, blank);
  const Matrix alpha = forward_variables(lp, ext, blank);
  const double total = total_log_prob(alpha);
  if (is_log_zero(total)) return std::nullopt;

  Matrix out(1, 1);
  out(0, 0) = -total;
  return log_probs.tape().record(
      "ctc_loss", std::move(out), {log_probs},
      [log_probs, ext, alpha, total, blank](const Matrix& g) {
        const Matrix& lp = log_probs.value();
        const Matrix beta = backward_variables(lp, ext, blank);
        Matrix grad = Matrix::Zero(lp.rows(), lp.cols());
        for (Index t = 0; t < lp.rows(); ++t) {
          for (Index s = 0; s < static_cast<Index>(ext.size()); ++s) {
            const double occ = log_mul(alpha(t, s), beta(t, s));
            if (!is_log_zero(occ)) grad(t, ext[s]) -= std::exp(occ - total);
          }
        }
        log_probs.tape().accumulate(log_probs, g(0, 0) * grad);
      });
}

TokenSeq ctc_greedy_decode(const Matrix& log_probs, int blank) {
  TokenSeq out;
  int prev = -1;
  for (Index t = 0; t < log_probs.rows(); ++t) {
    Index best = 0;
    log_probs.row(t).maxCoeff(&best);
    const int token = static_cast<int>(best);
    if (token != blank && token != prev) out.push_back(token);
    prev = token;
  }
  return out;
}

CtcPrefixScorer::CtcPrefixScorer(Matrix log_probs, int blank)
    : log_probs_(std::move(log_probs)), blank_(blank) {
  if (log_probs_.rows() == 0) throw DimensionError("ctc prefix scorer: no frames");
  if (blank_ < 0 || blank_ >= log_probs_.cols()) {
    throw std::invalid_argument("ctc prefix scorer: blank index out of range");
  }
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  const auto frames = static_cast<std::size_t>(log_probs_.rows());
  State s;
  s.label.assign(frames, kZero);
  s.blank.assign(frames, kZero);
  double acc = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    acc = log_mul(acc, log_probs_(static_cast<Index>(t), blank_));
    s.blank[t] = acc;
  }
  s.log_prefix_prob = 0.0;
  s.last = -1;
  return s;
}

std::pair<CtcPrefixScorer::State, double> CtcPrefixScorer::extend(const State& g,
                                                                  int token) const {
  if (token == blank_) throw std::invalid_argument("ctc prefix scorer: blank is not a label");
  if (token < 0 || token >= log_probs_.cols()) {
    throw std::invalid_argument("ctc prefix scorer: token " + std::to_string(token) +
                                " out of range");
  }
  const Index frames = log_probs_.rows();
  State h;
  h.label.assign(static_cast<std::size_t>(frames), kZero);
  h.blank.assign(static_cast<std::size_t>(frames), kZero);
  h.last = token;
  if (g.last < 0) h.label[0] = log_probs_(0, token);
  double psi = h.label[0];
  for (Index t = 1; t < frames; ++t) {
    const auto i = static_cast<std::size_t>(t);
    // Paths for g that may be followed by a new emission of `token` at t.
    const double phi = log_add(g.blank[i - 1], token == g.last ? kZero : g.label[i - 1]);
    h.label[i] = log_mul(log_add(h.label[i - 1], phi), log_probs_(t, token));
    h.blank[i] = log_mul(log_add(h.blank[i - 1], h.label[i - 1]), log_probs_(t, blank_));
    psi = log_add(psi, log_mul(phi, log_probs_(t, token)));
  }
  h.log_prefix_prob = psi;
  const double delta =
      is_log_zero(psi) || is_log_zero(g.log_prefix_prob) ? kZero : psi - g.log_prefix_prob;
  return {std::move(h), delta};
}

double CtcPrefixScorer::end_log_prob(const State& g) const {
  const auto last = static_cast<std::size_t>(log_probs_.rows() - 1);
  return log_add(g.label[last], g.blank[last]);
}

double CtcPrefixScorer::end_score(const State& g) const {
  const double p = end_log_prob(g);
  if (is_log_zero(p) || is_log_zero(g.log_prefix_prob)) return kZero;
  return p - g.log_prefix_prob;
}

}  // namespace preformer
