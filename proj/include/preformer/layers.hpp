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

#include <cstddef>
#include <string>

#include "preformer/params.hpp"
#include "preformer/tensor.hpp"

namespace preformer {

struct AttentionConfig {
  int d_model = 32;
  int n_heads = 4;
  int d_ff = 64;

  int d_head() const { return d_model / n_heads; }
  /// Throws DimensionError unless d_model is a positive multiple of n_heads.
  void validate() const;
};

// Primitive blocks. Each reads its parameters from `graph` under `prefix`.

void init_linear(ModelParams& params, const std::string& prefix, int in, int out, Rng& rng);
Var linear(Graph& graph, const std::string& prefix, const Var& x);

void init_norm(ModelParams& params, const std::string& prefix, int width);
Var norm(Graph& graph, const std::string& prefix, const Var& x);

void init_attention(ModelParams& params, const std::string& prefix, int d_model, Rng& rng);
/// Scaled dot-product attention with per-head projections and an output projection.
/// Queries come from `query`; keys and values from `key` and `value`.
Var multi_head_attention(Graph& graph, const std::string& prefix, const AttentionConfig& cfg,
                         const Var& query, const Var& key, const Var& value,
                         Mask mask = Mask::kNone);

void init_feed_forward(ModelParams& params, const std::string& prefix, int d_model, int d_ff,
                       Rng& rng);
Var feed_forward(Graph& graph, const std::string& prefix, const Var& x);

enum class PositionKind { kSinusoidal, kLearned };

/// Interleaved sin/cos table: even columns sin(pos / 10000^(2i/d)), odd columns cos.
Matrix sinusoidal_positions(Index length, int d_model);

/// Rows [0, length) of the position table. Sinusoidal positions are constants;
/// learned positions read the trainable table at `table_path`.
Var positional_encoding(Graph& graph, PositionKind kind, Index length, int d_model, Index max_len,
                        const std::string& table_path = "");

// Analytic parameter counts. An attention or feed-forward block includes the
// layer norm that precedes it.
std::size_t attention_projection_params(int d_model);
std::size_t norm_params(int d_model);
std::size_t attention_block_params(int d_model);
std::size_t feed_forward_block_params(int d_model, int d_ff);

// Layer species. All use the pre-norm residual arrangement
//   x = x + sublayer(norm(x)).

/// Causal self-attention + feed-forward. No cross-attention parameters.
struct SelfLayer {
  std::string prefix;
  AttentionConfig cfg;

  void init(ModelParams& params, Rng& rng) const;
  Var forward(Graph& graph, const Var& x) const;
  static std::size_t param_count(const AttentionConfig& cfg);
};

/// Cross-attention onto the encoder stream + feed-forward. No self-attention parameters.
struct CrossLayer {
  std::string prefix;
  AttentionConfig cfg;

  void init(ModelParams& params, Rng& rng) const;
  Var forward(Graph& graph, const Var& x, const Var& memory) const;
  static std::size_t param_count(const AttentionConfig& cfg);
};

/// Causal self-attention + cross-attention + feed-forward.
struct VanillaDecoderLayer {
  std::string prefix;
  AttentionConfig cfg;

  void init(ModelParams& params, Rng& rng) const;
  Var forward(Graph& graph, const Var& x, const Var& memory) const;
  static std::size_t param_count(const AttentionConfig& cfg);
};

/// Bidirectional self-attention + feed-forward.
struct EncoderLayer {
  std::string prefix;
  AttentionConfig cfg;

  void init(ModelParams& params, Rng& rng) const;
  Var forward(Graph& graph, const Var& x) const;
  static std::size_t param_count(const AttentionConfig& cfg);
};

}  // namespace preformer
