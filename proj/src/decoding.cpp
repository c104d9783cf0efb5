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

#include "preformer/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "preformer/data.hpp"
#include "preformer/log_math.hpp"

namespace preformer {

void DecodeConfig::validate() const {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("decode: mu must lie in [0, 1]");
  if (!(lm_weight >= 0.0)) throw std::invalid_argument("decode: lm_weight must be >= 0");
  if (beam_size < 1) throw std::invalid_argument("decode: beam_size must be >= 1");
  if (!(max_len_ratio > 0.0)) throw std::invalid_argument("decode: max_len_ratio must be > 0");
}

namespace {

std::vector<double> last_row_log_softmax(const Matrix& logits) {
  const auto row = logits.row(logits.rows() - 1);
  const double max = row.maxCoeff();
  const double lse = max + std::log((row.array() - max).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Index i = 0; i < row.size(); ++i) out[static_cast<std::size_t>(i)] = row(i) - lse;
  return out;
}

bool ranks_before(double score_a, const TokenSeq& a, double score_b, const TokenSeq& b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

RankedHypothesis to_ranked(const Hypothesis& h, const Vocab& vocab) {
  RankedHypothesis r;
  for (std::size_t i = 1; i < h.tokens.size(); ++i) {
    if (h.tokens[i] != vocab.eos()) r.tokens.push_back(h.tokens[i]);
  }
  r.score = h.score;
  r.att_logp = h.att_logp;
  r.ctc_logp = h.ctc_logp;
  r.lm_logp = h.lm_logp;
  return r;
}

}  // namespace

std::vector<double> AttentionScorer::next_log_probs(std::span<const int> prefix) const {
  Graph graph(params_, GradMode::kNone);
  const Var memory = graph.constant(encoder_out_);
  return last_row_log_softmax(model_.decoder().forward(graph, prefix, memory).value());
}

std::vector<double> LmScorer::next_log_probs(std::span<const int> prefix) const {
  Graph graph(params_, GradMode::kNone);
  return last_row_log_softmax(lm_.forward(graph, prefix).value());
}

double joint_score(double ctc_logp, double att_logp, double lm_logp, const DecodeConfig& cfg) {
  double score = 0.0;
  bool any = false;
  auto term = [&](double weight, double value) {
    if (weight == 0.0) return;
    if (is_log_zero(value)) {
      score = kLogZero<double>;
      any = true;
      return;
    }
    if (!any) {
      score = weight * value;
      any = true;
    } else if (!is_log_zero(score)) {
      score += weight * value;
    }
  };
  term(cfg.mu, ctc_logp);
  term(1.0 - cfg.mu, att_logp);
  term(cfg.lm_weight, lm_logp);
  return score;
}

double joint_score(const Hypothesis& h, const DecodeConfig& cfg) {
  return joint_score(h.ctc_logp, h.att_logp, h.lm_logp, cfg);
}

SearchResult beam_search(const SearchScorers& scorers, const Vocab& vocab, int max_len,
                         const DecodeConfig& cfg) {
  cfg.validate();
  const bool use_att = cfg.mu < 1.0;
  const bool use_ctc = cfg.mu > 0.0;
  const bool use_lm = cfg.lm_weight > 0.0;
  if (use_att && scorers.attention == nullptr) throw std::invalid_argument("beam_search: no attention scorer");
  if (use_ctc && scorers.ctc == nullptr) throw std::invalid_argument("beam_search: no CTC scorer");
  if (use_lm && scorers.lm == nullptr) throw std::invalid_argument("beam_search: no LM scorer");
  if (max_len < 0) throw std::invalid_argument("beam_search: negative length budget");

  const auto beam = static_cast<std::size_t>(cfg.beam_size);
  Hypothesis root;
  root.tokens = {vocab.sos()};
  if (use_ctc) root.ctc_state = scorers.ctc->initial();
  root.score = joint_score(root, cfg);

  std::vector<Hypothesis> live{root};
  std::vector<Hypothesis> finished;
  auto by_rank = [](const Hypothesis& a, const Hypothesis& b) {
    return ranks_before(a.score, a.tokens, b.score, b.tokens);
  };

  while (!live.empty()) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : live) {
      const std::vector<double> att =
          use_att ? scorers.attention->next_log_probs(h.tokens) : std::vector<double>{};
      const std::vector<double> lm =
          use_lm ? scorers.lm->next_log_probs(h.tokens) : std::vector<double>{};
      const bool must_end = static_cast<int>(h.tokens.size()) - 1 >= max_len;
      for (int c = must_end ? vocab.eos() : 0; c <= vocab.eos(); ++c) {
        if (c == vocab.sos()) continue;
        Hypothesis next;
        next.tokens = h.tokens;
        next.tokens.push_back(c);
        next.att_logp = use_att ? h.att_logp + att[static_cast<std::size_t>(c)] : 0.0;
        next.lm_logp = use_lm ? h.lm_logp + lm[static_cast<std::size_t>(c)] : 0.0;
        if (c == vocab.eos()) {
          next.finished = true;
          if (use_ctc) next.ctc_logp = log_mul(h.ctc_logp, scorers.ctc->end_score(h.ctc_state));
        } else if (use_ctc) {
          auto [state, delta] = scorers.ctc->extend(h.ctc_state, c);
          next.ctc_logp = log_mul(h.ctc_logp, delta);
          next.ctc_state = std::move(state);
        }
        next.score = joint_score(next, cfg);
        if (is_log_zero(next.score)) continue;
        candidates.push_back(std::move(next));
      }
    }
    if (candidates.empty()) break;
    std::sort(candidates.begin(), candidates.end(), by_rank);
    if (candidates.size() > beam) candidates.resize(beam);

    live.clear();
    for (Hypothesis& c : candidates) {
      if (c.finished) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    std::sort(finished.begin(), finished.end(), by_rank);
    // Extensions never raise a score, so once `beam` finished hypotheses beat
    // every live one the top of the finished list is final.
    if (finished.size() >= beam && !live.empty() && live.front().score < finished[beam - 1].score) {
      break;
    }
  }

  SearchResult result;
  if (finished.empty()) {
    result.unfinished_fallback = true;
    std::sort(live.begin(), live.end(), by_rank);
    for (const auto& h : live) result.ranked.push_back(to_ranked(h, vocab));
    return result;
  }
  for (const auto& h : finished) result.ranked.push_back(to_ranked(h, vocab));
  return result;
}

SearchResult recognize(const Preformer& model, const ModelParams& params, const Matrix& feats,
                       const DecodeConfig& cfg, const CausalLM* lm, const ModelParams* lm_params) {
  Matrix encoder_out;
  Matrix log_probs;
  {
    Graph graph(params, GradMode::kNone);
    const PreformerOutput out = model.encode(graph, feats);
    encoder_out = out.encoder_out.value();
    log_probs = ctc_log_posterior(out.ctc_logits.value());
  }
  const Vocab& vocab = model.config().vocab;
  const AttentionScorer attention(model, params, encoder_out);
  const CtcPrefixScorer ctc(std::move(log_probs), vocab.blank());
  std::optional<LmScorer> lm_scorer;
  if (cfg.lm_weight > 0.0) {
    if (lm == nullptr || lm_params == nullptr) {
      throw std::invalid_argument("recognize: lm_weight > 0 but no LM given");
    }
    lm_scorer.emplace(*lm, *lm_params);
  }
  const auto budget = static_cast<int>(std::floor(cfg.max_len_ratio * static_cast<double>(ctc.frames())));
  const int max_len = std::clamp(budget, 1, static_cast<int>(model.config().decoder.max_len) - 1);
  SearchScorers scorers{&attention, &ctc, lm_scorer ? &*lm_scorer : nullptr};
  return beam_search(scorers, vocab, max_len, cfg);
}

std::string decode_line(const std::string& utt_id, const RankedHypothesis& best) {
  char score[64];
  std::snprintf(score, sizeof(score), "%.10g", best.score);
  return utt_id + "\t" + join_tokens(best.tokens) + "\t" + score;
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double cer(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace preformer
