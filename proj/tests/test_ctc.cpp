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
#include "preformer/ctc.hpp"
#include "preformer/log_math.hpp"
#include "preformer/params.hpp"

namespace preformer {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<TokenSeq> all_sequences(int n_labels, int length) {
  std::vector<TokenSeq> out{{}};
  for (int l = 0; l < length; ++l) {
    std::vector<TokenSeq> next;
    for (const auto& s : out) {
      for (int c = 0; c < n_labels; ++c) {
        next.push_back(s);
        next.back().push_back(c);
      }
    }
    out = std::move(next);
  }
  return out;
}

Matrix probs_to_log(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double p : row) m(r, c++) = std::log(p);
    ++r;
  }
  return m;
}

TEST(CtcLoss, MatchesPathEnumerationOnSmallGrid) {
  std::uint64_t seed = 100;
  for (int V = 1; V <= 3; ++V) {
    for (int T = 1; T <= 5; ++T) {
      for (int L = 0; L <= 3; ++L) {
        const Matrix lp = oracle::random_log_posterior(T, V + 1, seed++);
        for (const TokenSeq& target : all_sequences(V, L)) {
          const double p = oracle::ctc_prob(lp, target, V);
          const double nll = ctc_neg_log_likelihood(lp, target, V);
          if (p == 0.0) {
            EXPECT_EQ(nll, kInf);
            EXPECT_GT(ctc_min_frames(target), T);
          } else {
            EXPECT_NEAR(std::exp(-nll), p, 1e-9) << "T=" << T << " V=" << V;
            EXPECT_LE(ctc_min_frames(target), T);
          }
        }
      }
    }
  }
}

TEST(CtcLoss, SingleFrame) {
  const Matrix lp = probs_to_log({{0.6, 0.4}});
  EXPECT_NEAR(ctc_neg_log_likelihood(lp, std::vector<int>{0}, 1), -std::log(0.6), 1e-12);
  EXPECT_NEAR(ctc_neg_log_likelihood(lp, std::vector<int>{}, 1), -std::log(0.4), 1e-12);
}

TEST(CtcLoss, TwoFramesOneLabel) {
  const Matrix lp = probs_to_log({{0.6, 0.4}, {0.3, 0.7}});
  // a a, a -, - a
  const double p = 0.6 * 0.3 + 0.6 * 0.7 + 0.4 * 0.3;
  EXPECT_NEAR(ctc_neg_log_likelihood(lp, std::vector<int>{0}, 1), -std::log(p), 1e-12);
}

TEST(CtcLoss, RepeatNeedsSeparatingBlank) {
  const Matrix lp = probs_to_log({{0.6, 0.4}, {0.3, 0.7}});
  const std::vector<int> aa{0, 0};
  EXPECT_EQ(ctc_min_frames(aa), 3);
  EXPECT_EQ(ctc_neg_log_likelihood(lp, aa, 1), kInf);
  DoubleTape tape;
  EXPECT_FALSE(ctc_loss(tape.leaf(lp, true), aa, 1).has_value());

  const Matrix three = probs_to_log({{0.6, 0.4}, {0.3, 0.7}, {0.5, 0.5}});
  EXPECT_NEAR(ctc_neg_log_likelihood(three, aa, 1), -std::log(0.6 * 0.7 * 0.5), 1e-12);
}

TEST(CtcLoss, MinFrames) {
  EXPECT_EQ(ctc_min_frames(std::vector<int>{}), 0);
  EXPECT_EQ(ctc_min_frames(std::vector<int>{1, 2, 3}), 3);
  EXPECT_EQ(ctc_min_frames(std::vector<int>{1, 1, 1}), 5);
  EXPECT_EQ(ctc_min_frames(std::vector<int>{1, 1, 2, 2}), 6);
}

TEST(CtcLoss, RejectsBlankInTarget) {
  const Matrix lp = oracle::random_log_posterior(3, 3, 1);
  EXPECT_THROW(ctc_neg_log_likelihood(lp, std::vector<int>{0, 2}, 2), std::invalid_argument);
  EXPECT_THROW(ctc_neg_log_likelihood(lp, std::vector<int>{5}, 2), std::invalid_argument);
}

TEST(CtcLoss, OrderOfLabelsMatters) {
  const Matrix lp = oracle::random_log_posterior(4, 3, 7);
  EXPECT_NE(ctc_neg_log_likelihood(lp, std::vector<int>{0, 1}, 2),
            ctc_neg_log_likelihood(lp, std::vector<int>{1, 0}, 2));
}

TEST(CtcLoss, LongInputsStayFinite) {
  const Matrix lp = oracle::random_log_posterior(200, 6, 3, 3.0);
  TokenSeq target;
  for (int i = 0; i < 60; ++i) target.push_back(i % 5);
  const double nll = ctc_neg_log_likelihood(lp, target, 5);
  EXPECT_TRUE(std::isfinite(nll));
  EXPECT_GT(nll, 0.0);

  // Uniform posteriors: each path has probability 6^-200 and at least one path aligns.
  const Matrix uniform = Matrix::Constant(200, 6, -std::log(6.0));
  const double u = ctc_neg_log_likelihood(uniform, target, 5);
  EXPECT_TRUE(std::isfinite(u));
  EXPECT_LE(u, 200 * std::log(6.0));
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  const int T = 5;
  const int V = 3;
  const std::vector<int> target{2, 0};
  const Matrix logits = oracle::random_log_posterior(T, V + 1, 11) * 1.3;
  auto loss_of = [&](const Matrix& z) {
    return ctc_neg_log_likelihood(ctc_log_posterior(z), target, V);
  };
  DoubleTape tape;
  const Var z = tape.leaf(logits, true);
  const auto loss = ctc_loss(log_softmax(z), target, V);
  ASSERT_TRUE(loss.has_value());
  EXPECT_NEAR(loss->item(), loss_of(logits), 1e-12);
  tape.backward(*loss);
  const Matrix analytic = z.grad();

  double max_err = 0.0;
  const double h = 1e-6;
  for (Index i = 0; i < logits.size(); ++i) {
    Matrix plus = logits;
    Matrix minus = logits;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const double numeric = (loss_of(plus) - loss_of(minus)) / (2 * h);
    max_err = std::max(max_err, std::abs(numeric - analytic.data()[i]));
  }
  EXPECT_LT(max_err, 1e-5);
  // Softmax logit gradients sum to zero per frame.
  EXPECT_LT(analytic.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CtcLogPosterior, RowsAreNormalised) {
  Rng rng(4);
  const Matrix lp = ctc_log_posterior(normal_matrix(7, 5, 3.0, rng));
  for (Index t = 0; t < lp.rows(); ++t) EXPECT_NEAR(lp.row(t).array().exp().sum(), 1.0, 1e-12);
}

TEST(CtcGreedy, MergesRepeatsAndDropsBlanks) {
  const int blank = 2;
  auto decode = [&](std::vector<int> frames) {
    Matrix lp = Matrix::Constant(static_cast<Index>(frames.size()), 3, std::log(0.1));
    for (std::size_t t = 0; t < frames.size(); ++t) lp(static_cast<Index>(t), frames[t]) = std::log(0.8);
    return ctc_greedy_decode(lp, blank);
  };
  EXPECT_EQ(decode({0, 0, 2, 0, 1}), (TokenSeq{0, 0, 1}));
  EXPECT_EQ(decode({0, 0, 0, 1, 1}), (TokenSeq{0, 1}));
  EXPECT_EQ(decode({2, 2, 2}), TokenSeq{});
  EXPECT_EQ(decode({1, 2, 2, 1}), (TokenSeq{1, 1}));
}

TEST(CtcPrefixScorer, PrefixProbabilitiesMatchEnumeration) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int V = 2 + static_cast<int>(seed % 2);
    const int T = 3 + static_cast<int>(seed % 3);
    const Matrix lp = oracle::random_log_posterior(T, V + 1, 500 + seed);
    const CtcPrefixScorer scorer(lp, V);
    for (const TokenSeq& prefix : all_sequences(V, 2)) {
      CtcPrefixScorer::State state = scorer.initial();
      double chained = 0.0;
      for (int c : prefix) {
        auto [next, delta] = scorer.extend(state, c);
        chained += delta;
        state = std::move(next);
      }
      const double p = oracle::ctc_prefix_prob(lp, prefix, V);
      EXPECT_NEAR(std::exp(state.log_prefix_prob), p, 1e-9);
      if (p > 0.0) EXPECT_NEAR(chained, std::log(p), 1e-9);
      EXPECT_NEAR(std::exp(scorer.end_log_prob(state)), oracle::ctc_prob(lp, prefix, V), 1e-9);
    }
  }
}

TEST(CtcPrefixScorer, ContinuationsAndEndPartitionUnity) {
  const Matrix lp = oracle::random_log_posterior(3, 3, 42);
  const CtcPrefixScorer scorer(lp, 2);
  const auto root = scorer.initial();
  double total = std::exp(scorer.end_log_prob(root));
  for (int c = 0; c < 2; ++c) total += std::exp(scorer.extend(root, c).first.log_prefix_prob);
  EXPECT_NEAR(total, 1.0, 1e-12);

  // The same holds one level down, relative to p(g...).
  const auto [g, delta] = scorer.extend(root, 1);
  double rel = std::exp(scorer.end_score(g));
  for (int c = 0; c < 2; ++c) rel += std::exp(scorer.extend(g, c).second);
  EXPECT_NEAR(rel, 1.0, 1e-12);
}

TEST(CtcPrefixScorer, ExtensionNeverIncreasesProbability) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix lp = oracle::random_log_posterior(6, 4, seed);
    const CtcPrefixScorer scorer(lp, 3);
    auto state = scorer.initial();
    Rng rng(seed);
    for (int step = 0; step < 4; ++step) {
      const int c = static_cast<int>(rng() % 3);
      auto [next, delta] = scorer.extend(state, c);
      EXPECT_LE(delta, 1e-12);
      EXPECT_LE(next.log_prefix_prob, state.log_prefix_prob + 1e-12);
      state = std::move(next);
    }
  }
}

TEST(CtcPrefixScorer, ChainConsistentAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int T = 4;
    const int V = 3;
    const Matrix lp = oracle::random_log_posterior(T, V + 1, 9000 + seed);
    const CtcPrefixScorer scorer(lp, V);
    Rng rng(seed);
    TokenSeq prefix;
    auto state = scorer.initial();
    double chained = 0.0;
    for (int step = 0; step < 3; ++step) {
      const int c = static_cast<int>(rng() % V);
      prefix.push_back(c);
      auto [next, delta] = scorer.extend(state, c);
      chained += delta;
      state = std::move(next);
      const double p = oracle::ctc_prefix_prob(lp, prefix, V);
      if (p == 0.0) {
        EXPECT_TRUE(is_log_zero(state.log_prefix_prob));
      } else {
        EXPECT_NEAR(chained, std::log(p), 1e-9) << "seed " << seed;
      }
    }
    const double full = oracle::ctc_prob(lp, prefix, V);
    if (full > 0.0) EXPECT_NEAR(chained + scorer.end_score(state), std::log(full), 1e-9);
  }
}

TEST(CtcPrefixScorer, SharedOracleGridPasses) {
  const auto outcome = criteria::ctc_against_enumeration();
  EXPECT_TRUE(outcome.passed) << outcome.detail;
}

TEST(CtcPrefixScorer, RejectsBlankAndOutOfRange) {
  const CtcPrefixScorer scorer(oracle::random_log_posterior(3, 3, 1), 2);
  EXPECT_THROW(scorer.extend(scorer.initial(), 2), std::invalid_argument);
  EXPECT_THROW(scorer.extend(scorer.initial(), 7), std::invalid_argument);
  EXPECT_THROW(CtcPrefixScorer(Matrix(0, 3), 2), DimensionError);
}

}  // namespace
}  // namespace preformer
