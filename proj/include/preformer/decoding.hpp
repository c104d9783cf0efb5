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

#include <span>
#include <string>
#include <vector>

#include "preformer/ctc.hpp"
#include "preformer/model.hpp"
#include "preformer/params.hpp"

namespace preformer {

struct DecodeConfig {
  double mu = 0.5;         // CTC weight
  double lm_weight = 0.3;  // shallow-fusion weight, outside the (mu, 1 - mu) pair
  int beam_size = 10;
  double max_len_ratio = 1.0;  // output length budget relative to encoder frames

  void validate() const;
};

/// Next-token log-probabilities over the decoder vocabulary given a prefix
/// that starts with SOS.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) const = 0;
};

/// Decoder of a trained model conditioned on a fixed encoder output. Recomputes
/// the full prefix on every call.
class AttentionScorer : public TokenScorer {
 public:
  AttentionScorer(const Preformer& model, const ModelParams& params, Matrix encoder_out)
      : model_(model), params_(params), encoder_out_(std::move(encoder_out)) {}
  std::vector<double> next_log_probs(std::span<const int> prefix) const override;

 private:
  const Preformer& model_;
  const ModelParams& params_;
  Matrix encoder_out_;
};

class LmScorer : public TokenScorer {
 public:
  LmScorer(const CausalLM& lm, const ModelParams& params) : lm_(lm), params_(params) {}
  std::vector<double> next_log_probs(std::span<const int> prefix) const override;

 private:
  const CausalLM& lm_;
  const ModelParams& params_;
};

struct Hypothesis {
  TokenSeq tokens;  // starts with SOS; ends with EOS once finished
  double att_logp = 0.0;
  double ctc_logp = 0.0;
  double lm_logp = 0.0;
  CtcPrefixScorer::State ctc_state;
  bool finished = false;
  double score = 0.0;  // ranking key, always joint_score(*this, cfg)
};

/// mu * ctc + (1 - mu) * att + lm_weight * lm. Terms whose weight is zero are
/// dropped, so they cannot contribute even when their score is log-zero.
double joint_score(double ctc_logp, double att_logp, double lm_logp, const DecodeConfig& cfg);
double joint_score(const Hypothesis& h, const DecodeConfig& cfg);

struct SearchScorers {
  const TokenScorer* attention = nullptr;  // needed when mu < 1
  const CtcPrefixScorer* ctc = nullptr;    // needed when mu > 0
  const TokenScorer* lm = nullptr;         // needed when lm_weight > 0
};

struct RankedHypothesis {
  TokenSeq tokens;  // without SOS / EOS
  double score = 0.0;
  double att_logp = 0.0;
  double ctc_logp = 0.0;
  double lm_logp = 0.0;
};

struct SearchResult {
  std::vector<RankedHypothesis> ranked;  // best first
  /// No hypothesis terminated within the length budget; `ranked` holds live ones.
  bool unfinished_fallback = false;
};

/// Joint CTC/attention beam search. Every live hypothesis is expanded by every
/// character and EOS; the best `beam_size` candidates overall survive, EOS
/// candidates move to the finished set with the CTC termination score applied.
/// Hypotheses with `max_len` characters may only terminate. Ties on score are
/// broken by lexicographic token order.
SearchResult beam_search(const SearchScorers& scorers, const Vocab& vocab, int max_len,
                         const DecodeConfig& cfg);

/// Encodes `feats`, then runs beam_search with the model's decoder and CTC
/// branch, plus `lm` for shallow fusion when given.
SearchResult recognize(const Preformer& model, const ModelParams& params, const Matrix& feats,
                       const DecodeConfig& cfg, const CausalLM* lm = nullptr,
                       const ModelParams* lm_params = nullptr);

/// `<utt_id>\t<space-joined tokens>\t<joint_score>`
std::string decode_line(const std::string& utt_id, const RankedHypothesis& best);

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
/// edit_distance(hyp, ref) / |ref|; throws on an empty reference.
double cer(std::span<const int> hyp, std::span<const int> ref);

}  // namespace preformer
