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

// Reference implementations used as independent test oracles. Everything here
// is deliberately brute force: exponential enumeration over paths or
// sequences, with no shared code paths with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "preformer/decoding.hpp"
#include "preformer/tensor.hpp"

namespace oracle {

using preformer::Matrix;
using Seq = std::vector<int>;

inline Seq collapse(const Seq& path, int blank) {
  Seq out;
  int prev = -1;
  for (int s : path) {
    if (s != blank && s != prev) out.push_back(s);
    prev = s;
  }
  return out;
}

/// Calls f(path, probability) for every one of the (cols)^(rows) frame paths.
inline void for_each_path(const Matrix& log_probs,
                          const std::function<void(const Seq&, double)>& f) {
  const auto T = static_cast<int>(log_probs.rows());
  const auto K = static_cast<int>(log_probs.cols());
  Seq path(static_cast<std::size_t>(T), 0);
  while (true) {
    double p = 1.0;
    for (int t = 0; t < T; ++t) p *= std::exp(log_probs(t, path[static_cast<std::size_t>(t)]));
    f(path, p);
    int t = T - 1;
    while (t >= 0 && ++path[static_cast<std::size_t>(t)] == K) path[static_cast<std::size_t>(t--)] = 0;
    if (t < 0) break;
  }
}

/// p(collapsed output == target).
inline double ctc_prob(const Matrix& log_probs, const Seq& target, int blank) {
  double total = 0.0;
  for_each_path(log_probs, [&](const Seq& path, double p) {
    if (collapse(path, blank) == target) total += p;
  });
  return total;
}

/// p(collapsed output begins with prefix).
inline double ctc_prefix_prob(const Matrix& log_probs, const Seq& prefix, int blank) {
  double total = 0.0;
  for_each_path(log_probs, [&](const Seq& path, double p) {
    const Seq out = collapse(path, blank);
    if (out.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), out.begin())) {
      total += p;
    }
  });
  return total;
}

/// Seeded random log-posterior [T x K] with rows normalised.
inline Matrix random_log_posterior(int T, int K, std::uint64_t seed, double spread = 1.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, spread);
  Matrix m(T, K);
  for (int t = 0; t < T; ++t) {
    double max = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) max = std::max(max, m(t, k) = dist(rng));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(m(t, k) - max);
    for (int k = 0; k < K; ++k) m(t, k) -= max + std::log(sum);
  }
  return m;
}

/// Next-token scorer whose distribution is a seeded function of the prefix.
class TableScorer : public preformer::TokenScorer {
 public:
  TableScorer(std::uint64_t seed, int vocab_size, double spread = 2.0)
      : seed_(seed), vocab_size_(vocab_size), spread_(spread) {}

  std::vector<double> next_log_probs(std::span<const int> prefix) const override {
    std::vector<std::uint32_t> key{static_cast<std::uint32_t>(seed_),
                                   static_cast<std::uint32_t>(seed_ >> 32)};
    for (int t : prefix) key.push_back(static_cast<std::uint32_t>(t));
    std::seed_seq seq(key.begin(), key.end());
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> dist(0.0, spread_);
    std::vector<double> logits(static_cast<std::size_t>(vocab_size_));
    for (double& x : logits) x = dist(rng);
    const double max = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - max);
    for (double& x : logits) x -= max + std::log(sum);
    return logits;
  }

 private:
  std::uint64_t seed_;
  int vocab_size_;
  double spread_;
};

struct Scored {
  Seq tokens;  // characters only
  double score = -std::numeric_limits<double>::infinity();
};

/// Full joint score of a terminated sequence computed from scratch: attention
/// and LM log-probabilities summed token by token (EOS included) and the CTC
/// term as log p(output == tokens) by path enumeration.
inline double joint_score_of(const Seq& tokens, const preformer::Vocab& vocab,
                             const preformer::TokenScorer* att, const preformer::TokenScorer* lm,
                             const Matrix& log_probs, const preformer::DecodeConfig& cfg) {
  Seq prefix{vocab.sos()};
  double att_sum = 0.0;
  double lm_sum = 0.0;
  Seq full = tokens;
  full.push_back(vocab.eos());
  for (int c : full) {
    if (cfg.mu < 1.0) att_sum += att->next_log_probs(prefix)[static_cast<std::size_t>(c)];
    if (cfg.lm_weight > 0.0) lm_sum += lm->next_log_probs(prefix)[static_cast<std::size_t>(c)];
    prefix.push_back(c);
  }
  double score = 0.0;
  if (cfg.mu > 0.0) {
    const double p = ctc_prob(log_probs, tokens, vocab.blank());
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    score += cfg.mu * std::log(p);
  }
  if (cfg.mu < 1.0) score += (1.0 - cfg.mu) * att_sum;
  if (cfg.lm_weight > 0.0) score += cfg.lm_weight * lm_sum;
  return score;
}

/// Argmax of the joint score over every character sequence of length <= max_len.
inline Scored exhaustive_argmax(const preformer::Vocab& vocab, int max_len,
                                const preformer::TokenScorer* att, const preformer::TokenScorer* lm,
                                const Matrix& log_probs, const preformer::DecodeConfig& cfg) {
  Scored best;
  std::function<void(Seq&)> visit = [&](Seq& seq) {
    const double s = joint_score_of(seq, vocab, att, lm, log_probs, cfg);
    if (s > best.score || (s == best.score && seq < best.tokens)) best = {seq, s};
    if (static_cast<int>(seq.size()) == max_len) return;
    for (int c = 0; c < vocab.n_chars; ++c) {
      seq.push_back(c);
      visit(seq);
      seq.pop_back();
    }
  };
  Seq empty;
  visit(empty);
  return best;
}

/// Per-step increments over [chars..., EOS] for a prefix (characters only).
using IncrementFn = std::function<std::vector<double>(const Seq& prefix)>;

/// Plain beam search over one additive score. Returns the best terminated sequence.
inline Scored single_scorer_beam(const IncrementFn& increments, int n_chars, int beam, int max_len) {
  struct Hyp {
    Seq tokens;
    double score;
  };
  std::vector<Hyp> live{{{}, 0.0}};
  std::vector<Hyp> done;
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };
  while (!live.empty()) {
    std::vector<std::pair<Hyp, bool>> cand;
    for (const Hyp& h : live) {
      const std::vector<double> inc = increments(h.tokens);
      const bool must_end = static_cast<int>(h.tokens.size()) >= max_len;
      for (int c = must_end ? n_chars : 0; c <= n_chars; ++c) {
        const double s = h.score + inc[static_cast<std::size_t>(c)];
        if (!std::isfinite(s)) continue;
        Hyp next{h.tokens, s};
        if (c < n_chars) next.tokens.push_back(c);
        cand.push_back({next, c == n_chars});
      }
    }
    std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
      if (a.first.score != b.first.score) return a.first.score > b.first.score;
      // Compare with EOS appended so the order matches full token sequences.
      Seq ta = a.first.tokens, tb = b.first.tokens;
      if (a.second) ta.push_back(n_chars + 1);
      if (b.second) tb.push_back(n_chars + 1);
      return ta < tb;
    });
    if (static_cast<int>(cand.size()) > beam) cand.resize(static_cast<std::size_t>(beam));
    live.clear();
    for (auto& [h, finished] : cand) (finished ? done : live).push_back(h);
  }
  if (done.empty()) return {};
  const Hyp& best = *std::min_element(done.begin(), done.end(), better);
  return {best.tokens, best.score};
}

}  // namespace oracle
