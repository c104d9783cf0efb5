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

#include <gtest/gtest.h>

#include <cmath>

#include "criteria.hpp"
#include "oracles.hpp"
#include "preformer/decoding.hpp"

namespace preformer {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Fixed next-token table keyed by the number of characters emitted so far.
class StepScorer : public TokenScorer {
 public:
  explicit StepScorer(std::vector<std::vector<double>> probs) : probs_(std::move(probs)) {}
  std::vector<double> next_log_probs(std::span<const int> prefix) const override {
    const std::size_t step = std::min(prefix.size() - 1, probs_.size() - 1);
    std::vector<double> out;
    for (double p : probs_[step]) out.push_back(p > 0.0 ? std::log(p) : kNegInf);
    return out;
  }

 private:
  std::vector<std::vector<double>> probs_;
};

DecodeConfig attention_only(int beam) {
  DecodeConfig cfg;
  cfg.mu = 0.0;
  cfg.lm_weight = 0.0;
  cfg.beam_size = beam;
  return cfg;
}

TEST(JointScore, WeightsTheThreeTerms) {
  DecodeConfig cfg;
  cfg.mu = 0.3;
  cfg.lm_weight = 0.5;
  // 0.3 * -2 + 0.7 * -3 + 0.5 * -1.2
  EXPECT_NEAR(joint_score(-2.0, -3.0, -1.2, cfg), -3.3, 1e-12);
}

TEST(JointScore, ZeroWeightTermsAreIgnoredEvenWhenLogZero) {
  DecodeConfig cfg;
  cfg.mu = 0.0;
  cfg.lm_weight = 0.0;
  EXPECT_EQ(joint_score(kNegInf, -1.5, kNegInf, cfg), -1.5);
  cfg.mu = 1.0;
  EXPECT_EQ(joint_score(-0.7, kNegInf, -2.0, cfg), -0.7);
  cfg.mu = 0.5;
  EXPECT_EQ(joint_score(kNegInf, -1.0, 0.0, cfg), kNegInf);
}

TEST(DecodeConfig, Validation) {
  DecodeConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.mu = 1.2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.mu = 0.5;
  cfg.beam_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(BeamSearch, BeamOfOneIsGreedy) {
  const Vocab vocab{4};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const oracle::TableScorer att(seed, vocab.size(), 1.0);
    TokenSeq prefix{vocab.sos()};
    TokenSeq greedy;
    while (static_cast<int>(greedy.size()) < 5) {
      const auto lp = att.next_log_probs(prefix);
      int best = vocab.eos();
      for (int c = 0; c < vocab.n_chars; ++c) {
        if (lp[static_cast<std::size_t>(c)] > lp[static_cast<std::size_t>(best)]) best = c;
      }
      if (best == vocab.eos()) break;
      greedy.push_back(best);
      prefix.push_back(best);
    }
    const auto result = beam_search({&att, nullptr, nullptr}, vocab, 5, attention_only(1));
    ASSERT_FALSE(result.ranked.empty());
    EXPECT_EQ(result.ranked.front().tokens, greedy) << "seed " << seed;
  }
}

TEST(BeamSearch, MatchesExhaustiveArgmax) {
  const auto outcome = criteria::beam_against_exhaustive(25);
  EXPECT_TRUE(outcome.passed) << outcome.detail;
}

TEST(BeamSearch, BoundaryWeightsReduceToSingleScorers) {
  const auto outcome = criteria::boundary_identities(20);
  EXPECT_TRUE(outcome.passed) << outcome.detail;
}

TEST(BeamSearch, ScoreComponentsAreConsistent) {
  const Vocab vocab{3};
  DecodeConfig cfg;
  cfg.beam_size = 4;
  const oracle::TableScorer att(1, vocab.size());
  const oracle::TableScorer lm(2, vocab.size());
  const Matrix lp = oracle::random_log_posterior(5, vocab.ctc_size(), 3);
  const CtcPrefixScorer ctc(lp, vocab.blank());
  const auto result = beam_search({&att, &ctc, &lm}, vocab, 4, cfg);
  ASSERT_FALSE(result.ranked.empty());
  for (std::size_t i = 0; i < result.ranked.size(); ++i) {
    const auto& h = result.ranked[i];
    EXPECT_NEAR(h.score, joint_score(h.ctc_logp, h.att_logp, h.lm_logp, cfg), 1e-12);
    EXPECT_NEAR(std::exp(h.ctc_logp), oracle::ctc_prob(lp, h.tokens, vocab.blank()), 1e-9);
    EXPECT_NEAR(h.score, oracle::joint_score_of(h.tokens, vocab, &att, &lm, lp, cfg), 1e-9);
    if (i > 0) EXPECT_LE(h.score, result.ranked[i - 1].score);
  }
}

TEST(BeamSearch, TiesBreakLexicographically) {
  const Vocab vocab{3};
  //                     0     1     2     SOS  EOS
  const StepScorer att({{0.45, 0.45, 0.05, 0.0, 0.05},  //
                        {0.02, 0.02, 0.02, 0.0, 0.94}});
  const auto result = beam_search({&att, nullptr, nullptr}, vocab, 3, attention_only(4));
  ASSERT_GE(result.ranked.size(), 2u);
  EXPECT_EQ(result.ranked[0].tokens, TokenSeq{0});
  EXPECT_EQ(result.ranked[1].tokens, TokenSeq{1});
  EXPECT_EQ(result.ranked[0].score, result.ranked[1].score);
}

TEST(BeamSearch, LengthBudgetForcesTermination) {
  const Vocab vocab{2};
  const StepScorer att({{0.9, 0.05, 0.0, 0.05}});
  const auto result = beam_search({&att, nullptr, nullptr}, vocab, 3, attention_only(2));
  ASSERT_FALSE(result.unfinished_fallback);
  EXPECT_EQ(result.ranked.front().tokens, (TokenSeq{0, 0, 0}));
}

TEST(BeamSearch, FallsBackToLiveHypothesesWhenNothingTerminates) {
  const Vocab vocab{2};
  const StepScorer att({{0.7, 0.3, 0.0, 0.0}});
  const auto result = beam_search({&att, nullptr, nullptr}, vocab, 2, attention_only(3));
  EXPECT_TRUE(result.unfinished_fallback);
  ASSERT_FALSE(result.ranked.empty());
  EXPECT_EQ(result.ranked.front().tokens, (TokenSeq{0, 0}));
  for (const auto& h : result.ranked) EXPECT_EQ(h.tokens.size(), 2u);
}

TEST(BeamSearch, MissingScorersAreRejected) {
  const Vocab vocab{2};
  DecodeConfig cfg;
  EXPECT_THROW(beam_search({}, vocab, 3, cfg), std::invalid_argument);
}

TEST(Recognize, RunsEndToEndAndRequiresAnLmWhenWeighted) {
  const Preformer model(PreformerConfig::toy());
  const ModelParams params = model.init(3);
  Rng rng(1);
  const Matrix feats = normal_matrix(32, model.config().encoder.d_feat, 1.0, rng);
  DecodeConfig cfg;
  cfg.beam_size = 3;
  EXPECT_THROW(recognize(model, params, feats, cfg), std::invalid_argument);
  cfg.lm_weight = 0.0;
  const auto result = recognize(model, params, feats, cfg);
  ASSERT_FALSE(result.ranked.empty());
  EXPECT_LE(result.ranked.front().tokens.size(), 8u);
  for (int t : result.ranked.front().tokens) EXPECT_TRUE(model.config().vocab.is_char(t));

  const CausalLM lm = CausalLM::matching(model.config().decoder, model.config().vocab);
  ModelParams lm_params;
  lm.init(lm_params, rng);
  cfg.lm_weight = 0.3;
  EXPECT_FALSE(recognize(model, params, feats, cfg, &lm, &lm_params).ranked.empty());
}

TEST(DecodeLine, TabSeparatedFields) {
  RankedHypothesis h;
  h.tokens = {3, 1, 4};
  h.score = -1.5;
  EXPECT_EQ(decode_line("utt7", h), "utt7\t3 1 4\t-1.5");
  h.tokens.clear();
  EXPECT_EQ(decode_line("e", h), "e\t\t-1.5");
}

TEST(Cer, Examples) {
  const TokenSeq ref{1, 2, 3};
  EXPECT_EQ(cer(ref, ref), 0.0);
  EXPECT_DOUBLE_EQ(cer(TokenSeq{1, 2, 4}, ref), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(cer(TokenSeq{}, ref), 1.0);
  EXPECT_DOUBLE_EQ(cer(TokenSeq{1, 2, 3, 3, 3}, ref), 2.0 / 3.0);
  EXPECT_THROW(cer(ref, TokenSeq{}), std::invalid_argument);
}

TEST(EditDistance, IsAMetric) {
  std::mt19937_64 rng(5);
  auto random_seq = [&] {
    TokenSeq s(rng() % 6);
    for (int& t : s) t = static_cast<int>(rng() % 3);
    return s;
  };
  for (int i = 0; i < 300; ++i) {
    const TokenSeq a = random_seq(), b = random_seq(), c = random_seq();
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    EXPECT_EQ(edit_distance(a, a), 0u);
    EXPECT_GE(edit_distance(a, b), a.size() > b.size() ? a.size() - b.size() : b.size() - a.size());
  }
}

}  // namespace
}  // namespace preformer
