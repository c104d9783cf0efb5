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

#include "preformer/layers.hpp"

#include <cmath>
#include <vector>

namespace preformer {

void AttentionConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  if (d_ff <= 0) throw DimensionError("d_ff must be positive");
}

void init_linear(ModelParams& params, const std::string& prefix, int in, int out, Rng& rng) {
  params.add(prefix + ".w", xavier_uniform(in, out, rng));
  params.add(prefix + ".b", Matrix::Zero(1, out));
}

Var linear(Graph& graph, const std::string& prefix, const Var& x) {
  return add_row(matmul(x, graph.param(prefix + ".w")), graph.param(prefix + ".b"));
}

void init_norm(ModelParams& params, const std::string& prefix, int width) {
  params.add(prefix + ".g", Matrix::Ones(1, width));
  params.add(prefix + ".b", Matrix::Zero(1, width));
}

Var norm(Graph& graph, const std::string& prefix, const Var& x) {
  return layer_norm(x, graph.param(prefix + ".g"), graph.param(prefix + ".b"));
}

void init_attention(ModelParams& params, const std::string& prefix, int d_model, Rng& rng) {
  for (const char* name : {"q", "k", "v", "o"}) {
    params.add(prefix + ".w" + name, xavier_uniform(d_model, d_model, rng));
    params.add(prefix + ".b" + name, Matrix::Zero(1, d_model));
  }
}

Var multi_head_attention(Graph& graph, const std::string& prefix, const AttentionConfig& cfg,
                         const Var& query, const Var& key, const Var& value, Mask mask) {
  cfg.validate();
  for (const Var* in : {&query, &key, &value}) {
    if (in->cols() != cfg.d_model) {
      throw DimensionError(prefix + ": input width " + std::to_string(in->cols()) +
                           " != d_model " + std::to_string(cfg.d_model));
    }
  }
  if (key.rows() != value.rows()) {
    throw DimensionError(prefix + ": key length " + std::to_string(key.rows()) +
                         " != value length " + std::to_string(value.rows()));
  }
  if (mask == Mask::kCausal && query.rows() != key.rows()) {
    throw DimensionError(prefix + ": causal mask needs equal query/key lengths, got " +
                         std::to_string(query.rows()) + " and " + std::to_string(key.rows()));
  }
  auto project = [&](const Var& x, const char* name) {
    return add_row(matmul(x, graph.param(prefix + ".w" + name)),
                   graph.param(prefix + ".b" + name));
  };
  const Var q = project(query, "q");
  const Var k = project(key, "k");
  const Var v = project(value, "v");
  const int dh = cfg.d_head();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    heads.push_back(matmul(softmax(scores, 1, mask), vh));
  }
  return project(cfg.n_heads == 1 ? heads.front() : concat_cols(heads), "o");
}

void init_feed_forward(ModelParams& params, const std::string& prefix, int d_model, int d_ff,
                       Rng& rng) {
  params.add(prefix + ".w1", xavier_uniform(d_model, d_ff, rng));
  params.add(prefix + ".b1", Matrix::Zero(1, d_ff));
  params.add(prefix + ".w2", xavier_uniform(d_ff, d_model, rng));
  params.add(prefix + ".b2", Matrix::Zero(1, d_model));
}

Var feed_forward(Graph& graph, const std::string& prefix, const Var& x) {
  const Var hidden =
      gelu(add_row(matmul(x, graph.param(prefix + ".w1")), graph.param(prefix + ".b1")));
  return add_row(matmul(hidden, graph.param(prefix + ".w2")), graph.param(prefix + ".b2"));
}

Matrix sinusoidal_positions(Index length, int d_model) {
  Matrix pe(length, d_model);
  for (Index pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Var positional_encoding(Graph& graph, PositionKind kind, Index length, int d_model, Index max_len,
                        const std::string& table_path) {
  if (length > max_len) {
    throw DimensionError("sequence length " + std::to_string(length) +
                         " exceeds the position limit " + std::to_string(max_len));
  }
  if (kind == PositionKind::kSinusoidal) {
    return graph.constant(sinusoidal_positions(length, d_model));
  }
  return slice_rows(graph.param(table_path), 0, length);
}

std::size_t attention_projection_params(int d) {
  const auto n = static_cast<std::size_t>(d);
  return 4 * n * n + 4 * n;
}

std::size_t norm_params(int d) { return 2 * static_cast<std::size_t>(d); }

std::size_t attention_block_params(int d) {
  return attention_projection_params(d) + norm_params(d);
}

std::size_t feed_forward_block_params(int d, int d_ff) {
  const auto n = static_cast<std::size_t>(d);
  const auto f = static_cast<std::size_t>(d_ff);
  return 2 * n * f + f + n + norm_params(d);
}

// SelfLayer

void SelfLayer::init(ModelParams& params, Rng& rng) const {
  cfg.validate();
  init_norm(params, prefix + ".ln1", cfg.d_model);
  init_attention(params, prefix + ".attn", cfg.d_model, rng);
  init_norm(params, prefix + ".ln2", cfg.d_model);
  init_feed_forward(params, prefix + ".ffn", cfg.d_model, cfg.d_ff, rng);
}

Var SelfLayer::forward(Graph& graph, const Var& x) const {
  const Var h = norm(graph, prefix + ".ln1", x);
  const Var y = add(x, graph.dropout(multi_head_attention(graph, prefix + ".attn", cfg, h, h, h, Mask::kCausal)));
  return add(y, graph.dropout(feed_forward(graph, prefix + ".ffn", norm(graph, prefix + ".ln2", y))));
}

std::size_t SelfLayer::param_count(const AttentionConfig& cfg) {
  return attention_block_params(cfg.d_model) + feed_forward_block_params(cfg.d_model, cfg.d_ff);
}

// CrossLayer

void CrossLayer::init(ModelParams& params, Rng& rng) const {
  cfg.validate();
  init_norm(params, prefix + ".ln1", cfg.d_model);
  init_attention(params, prefix + ".xattn", cfg.d_model, rng);
  init_norm(params, prefix + ".ln2", cfg.d_model);
  init_feed_forward(params, prefix + ".ffn", cfg.d_model, cfg.d_ff, rng);
}

Var CrossLayer::forward(Graph& graph, const Var& x, const Var& memory) const {
  const Var h = norm(graph, prefix + ".ln1", x);
  const Var y = add(x, graph.dropout(multi_head_attention(graph, prefix + ".xattn", cfg, h, memory, memory)));
  return add(y, graph.dropout(feed_forward(graph, prefix + ".ffn", norm(graph, prefix + ".ln2", y))));
}

std::size_t CrossLayer::param_count(const AttentionConfig& cfg) {
  return attention_block_params(cfg.d_model) + feed_forward_block_params(cfg.d_model, cfg.d_ff);
}

// VanillaDecoderLayer

void VanillaDecoderLayer::init(ModelParams& params, Rng& rng) const {
  cfg.validate();
  init_norm(params, prefix + ".ln1", cfg.d_model);
  init_attention(params, prefix + ".attn", cfg.d_model, rng);
  init_norm(params, prefix + ".ln2", cfg.d_model);
  init_attention(params, prefix + ".xattn", cfg.d_model, rng);
  init_norm(params, prefix + ".ln3", cfg.d_model);
  init_feed_forward(params, prefix + ".ffn", cfg.d_model, cfg.d_ff, rng);
}

Var VanillaDecoderLayer::forward(Graph& graph, const Var& x, const Var& memory) const {
  const Var h1 = norm(graph, prefix + ".ln1", x);
  const Var y1 =
      add(x, graph.dropout(
              multi_head_attention(graph, prefix + ".attn", cfg, h1, h1, h1, Mask::kCausal)));
  const Var h2 = norm(graph, prefix + ".ln2", y1);
  const Var y2 = add(y1, graph.dropout(
                              multi_head_attention(graph, prefix + ".xattn", cfg, h2, memory, memory)));
  return add(y2, graph.dropout(feed_forward(graph, prefix + ".ffn", norm(graph, prefix + ".ln3", y2))));
}

std::size_t VanillaDecoderLayer::param_count(const AttentionConfig& cfg) {
  return 2 * attention_block_params(cfg.d_model) +
         feed_forward_block_params(cfg.d_model, cfg.d_ff);
}

// EncoderLayer

void EncoderLayer::init(ModelParams& params, Rng& rng) const {
  cfg.validate();
  init_norm(params, prefix + ".ln1", cfg.d_model);
  init_attention(params, prefix + ".attn", cfg.d_model, rng);
  init_norm(params, prefix + ".ln2", cfg.d_model);
  init_feed_forward(params, prefix + ".ffn", cfg.d_model, cfg.d_ff, rng);
}

Var EncoderLayer::forward(Graph& graph, const Var& x) const {
  const Var h = norm(graph, prefix + ".ln1", x);
  const Var y = add(x, graph.dropout(multi_head_attention(graph, prefix + ".attn", cfg, h, h, h)));
  return add(y, graph.dropout(feed_forward(graph, prefix + ".ffn", norm(graph, prefix + ".ln2", y))));
}

std::size_t EncoderLayer::param_count(const AttentionConfig& cfg) {
  return attention_block_params(cfg.d_model) + feed_forward_block_params(cfg.d_model, cfg.d_ff);
}

}  // namespace preformer
