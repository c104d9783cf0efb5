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

#include "preformer/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace preformer {

namespace {

std::string indexed(const std::string& prefix, int i) { return prefix + "." + std::to_string(i); }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

int EncoderConfig::total_stride() const {
  int stride = 1;
  for (const auto& c : conv) stride *= c.stride;
  return stride;
}

Index EncoderConfig::output_length(Index frames) const {
  for (const auto& c : conv) frames = (frames + c.stride - 1) / c.stride;
  return frames;
}

const char* to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kOcd: return "ocd";
    case DecoderKind::kTcd: return "tcd";
    case DecoderKind::kVanilla: return "vanilla";
  }
  return "?";
}

DecoderKind decoder_kind_from_string(const std::string& name) {
  if (name == "ocd") return DecoderKind::kOcd;
  if (name == "tcd") return DecoderKind::kTcd;
  if (name == "vanilla") return DecoderKind::kVanilla;
  throw std::invalid_argument("unknown decoder kind '" + name + "' (expected ocd, tcd, vanilla)");
}

int DecoderConfig::cross_layers() const {
  switch (kind) {
    case DecoderKind::kOcd: return 1;
    case DecoderKind::kTcd: return 2;
    case DecoderKind::kVanilla: return 0;
  }
  return 0;
}

PreformerConfig PreformerConfig::toy() { return PreformerConfig{}; }

PreformerConfig PreformerConfig::full_scale_preformer() {
  PreformerConfig cfg;
  cfg.vocab.n_chars = 4230;
  cfg.encoder.d_feat = 1;
  cfg.encoder.conv = {{512, 10, 5}, {512, 3, 2}, {512, 3, 2}, {512, 3, 2},
                      {512, 3, 2},  {512, 2, 2}, {512, 2, 2}};
  cfg.encoder.attn = {768, 8, 3072};
  cfg.encoder.layers = 12;
  cfg.decoder.kind = DecoderKind::kOcd;
  cfg.decoder.attn = {768, 12, 3072};
  cfg.decoder.layers = 6;
  cfg.decoder.max_len = 512;
  return cfg;
}

PreformerConfig PreformerConfig::full_scale_baseline() {
  PreformerConfig cfg;
  cfg.vocab.n_chars = 4230;
  cfg.encoder.d_feat = 80;
  cfg.encoder.conv = {{768, 3, 2}, {768, 3, 2}};
  cfg.encoder.attn = {768, 8, 3072};
  cfg.encoder.layers = 12;
  cfg.decoder.kind = DecoderKind::kVanilla;
  cfg.decoder.attn = {768, 12, 3072};
  cfg.decoder.layers = 6;
  cfg.decoder.max_len = 512;
  return cfg;
}

// W2vEncoder

bool W2vEncoder::has_projection() const {
  const int last = cfg_.conv.empty() ? cfg_.d_feat : cfg_.conv.back().channels;
  return last != cfg_.attn.d_model;
}

void W2vEncoder::init(ModelParams& params, Rng& rng) const {
  cfg_.attn.validate();
  int in = cfg_.d_feat;
  for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
    const auto& c = cfg_.conv[i];
    init_linear(params, indexed("encoder.conv", static_cast<int>(i)), c.kernel * in, c.channels,
                rng);
    in = c.channels;
  }
  if (has_projection()) init_linear(params, "encoder.proj", in, cfg_.attn.d_model, rng);
  for (int i = 0; i < cfg_.layers; ++i) {
    EncoderLayer{indexed("encoder.context", i), cfg_.attn}.init(params, rng);
  }
  init_norm(params, "encoder.norm", cfg_.attn.d_model);
}

Var W2vEncoder::forward(Graph& graph, const Var& feats) const {
  if (feats.rows() == 0) throw DimensionError("encoder: empty feature matrix");
  if (feats.cols() != cfg_.d_feat) {
    throw DimensionError("encoder: feature width " + std::to_string(feats.cols()) +
                         " != d_feat " + std::to_string(cfg_.d_feat));
  }
  Var x = feats;
  for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
    const auto& c = cfg_.conv[i];
    x = gelu(linear(graph, indexed("encoder.conv", static_cast<int>(i)),
                    unfold_time(x, c.kernel, c.stride, (c.kernel - 1) / 2)));
  }
  if (has_projection()) x = linear(graph, "encoder.proj", x);
  x = add(x, positional_encoding(graph, PositionKind::kSinusoidal, x.rows(), cfg_.attn.d_model,
                                 cfg_.max_len));
  for (int i = 0; i < cfg_.layers; ++i) {
    x = EncoderLayer{indexed("encoder.context", i), cfg_.attn}.forward(graph, x);
  }
  return norm(graph, "encoder.norm", x);
}

std::size_t W2vEncoder::analytic_param_count() const {
  std::size_t n = 0;
  std::size_t in = static_cast<std::size_t>(cfg_.d_feat);
  for (const auto& c : cfg_.conv) {
    n += linear_params(static_cast<std::size_t>(c.kernel) * in, static_cast<std::size_t>(c.channels));
    in = static_cast<std::size_t>(c.channels);
  }
  if (has_projection()) n += linear_params(in, static_cast<std::size_t>(cfg_.attn.d_model));
  n += static_cast<std::size_t>(cfg_.layers) * EncoderLayer::param_count(cfg_.attn);
  return n + norm_params(cfg_.attn.d_model);
}

// CtcHead

void CtcHead::init(ModelParams& params, Rng& rng) const {
  init_linear(params, "ctc", d_model_, vocab_.ctc_size(), rng);
}

Var CtcHead::forward(Graph& graph, const Var& encoder_out) const {
  return linear(graph, "ctc", encoder_out);
}

std::size_t CtcHead::analytic_param_count() const {
  return linear_params(static_cast<std::size_t>(d_model_), static_cast<std::size_t>(vocab_.ctc_size()));
}

// Decoder

void Decoder::init(ModelParams& params, Rng& rng) const {
  cfg_.attn.validate();
  const int d = cfg_.attn.d_model;
  params.add("decoder.embed", normal_matrix(vocab_.size(), d, 1.0 / std::sqrt(d), rng));
  params.add("decoder.pos", normal_matrix(cfg_.max_len, d, 0.02, rng));
  if (cfg_.kind == DecoderKind::kVanilla) {
    for (int i = 0; i < cfg_.layers; ++i) {
      VanillaDecoderLayer{indexed("decoder.layers", i), cfg_.attn}.init(params, rng);
    }
  } else {
    for (int i = 0; i < cfg_.layers; ++i) {
      SelfLayer{indexed("decoder.self", i), cfg_.attn}.init(params, rng);
    }
  }
  init_norm(params, "decoder.norm", d);
  for (int j = 0; j < cfg_.cross_layers(); ++j) {
    CrossLayer{indexed("decoder.cross", j), cfg_.attn}.init(params, rng);
  }
  init_linear(params, "decoder.out", d, vocab_.size(), rng);
}

Var Decoder::forward(Graph& graph, std::span<const int> tokens, const Var& memory) const {
  if (tokens.empty()) throw DimensionError("decoder: empty token prefix");
  const auto len = static_cast<Index>(tokens.size());
  Var x = add(gather_rows(graph.param("decoder.embed"), tokens),
              positional_encoding(graph, PositionKind::kLearned, len, cfg_.attn.d_model,
                                  cfg_.max_len, "decoder.pos"));
  if (cfg_.kind == DecoderKind::kVanilla) {
    for (int i = 0; i < cfg_.layers; ++i) {
      x = VanillaDecoderLayer{indexed("decoder.layers", i), cfg_.attn}.forward(graph, x, memory);
    }
    x = norm(graph, "decoder.norm", x);
  } else {
    for (int i = 0; i < cfg_.layers; ++i) {
      x = SelfLayer{indexed("decoder.self", i), cfg_.attn}.forward(graph, x);
    }
    x = norm(graph, "decoder.norm", x);
    for (int j = 0; j < cfg_.cross_layers(); ++j) {
      x = CrossLayer{indexed("decoder.cross", j), cfg_.attn}.forward(graph, x, memory);
    }
  }
  return linear(graph, "decoder.out", x);
}

std::size_t Decoder::analytic_param_count() const {
  const auto d = static_cast<std::size_t>(cfg_.attn.d_model);
  const auto v = static_cast<std::size_t>(vocab_.size());
  std::size_t n = v * d + static_cast<std::size_t>(cfg_.max_len) * d;
  const auto layers = static_cast<std::size_t>(cfg_.layers);
  if (cfg_.kind == DecoderKind::kVanilla) {
    n += layers * VanillaDecoderLayer::param_count(cfg_.attn);
  } else {
    n += layers * SelfLayer::param_count(cfg_.attn);
  }
  n += norm_params(cfg_.attn.d_model);
  n += static_cast<std::size_t>(cfg_.cross_layers()) * CrossLayer::param_count(cfg_.attn);
  return n + linear_params(d, v);
}

std::vector<std::string> Decoder::lm_group_selectors() const {
  if (!has_lm_group()) return {};
  return {"embed", "pos", "self", "norm"};
}

// CausalLM

CausalLM CausalLM::matching(const DecoderConfig& cfg, Vocab vocab) {
  return CausalLM(cfg.attn, cfg.layers, cfg.max_len, vocab);
}

void CausalLM::init(ModelParams& params, Rng& rng) const {
  attn_.validate();
  const int d = attn_.d_model;
  params.add("lm.embed", normal_matrix(vocab_.size(), d, 1.0 / std::sqrt(d), rng));
  params.add("lm.pos", normal_matrix(max_len_, d, 0.02, rng));
  for (int i = 0; i < layers_; ++i) SelfLayer{indexed("lm.self", i), attn_}.init(params, rng);
  init_norm(params, "lm.norm", d);
  init_linear(params, "lm.head", d, vocab_.size(), rng);
}

Var CausalLM::forward(Graph& graph, std::span<const int> tokens) const {
  if (tokens.empty()) throw DimensionError("lm: empty token prefix");
  const auto len = static_cast<Index>(tokens.size());
  Var x = add(gather_rows(graph.param("lm.embed"), tokens),
              positional_encoding(graph, PositionKind::kLearned, len, attn_.d_model, max_len_,
                                  "lm.pos"));
  for (int i = 0; i < layers_; ++i) x = SelfLayer{indexed("lm.self", i), attn_}.forward(graph, x);
  return linear(graph, "lm.head", norm(graph, "lm.norm", x));
}

Checkpoint export_lm_donor(const ModelParams& lm_params) {
  Checkpoint donor;
  for (const auto& [path, p] : lm_params) {
    if (!path_matches(path, "lm") || path_matches(path, "lm.head")) continue;
    donor.add(path.substr(3), p.value);
  }
  return donor;
}

// Preformer

Preformer::Preformer(PreformerConfig cfg)
    : cfg_(std::move(cfg)),
      encoder_(cfg_.encoder),
      ctc_head_(cfg_.encoder.attn.d_model, cfg_.vocab),
      decoder_(cfg_.decoder, cfg_.vocab) {
  if (cfg_.encoder.attn.d_model != cfg_.decoder.attn.d_model) {
    throw DimensionError("encoder and decoder widths differ");
  }
}

ModelParams Preformer::init(std::uint64_t seed) const {
  ModelParams params;
  Rng rng(seed);
  init(params, rng);
  return params;
}

void Preformer::init(ModelParams& params, Rng& rng) const {
  encoder_.init(params, rng);
  ctc_head_.init(params, rng);
  decoder_.init(params, rng);
}

PreformerOutput Preformer::encode(Graph& graph, const Matrix& feats) const {
  if (feats.rows() == 0) throw DimensionError("preformer: empty features");
  PreformerOutput out;
  out.encoder_out = encoder_.forward(graph, graph.constant(feats));
  out.ctc_logits = ctc_head_.forward(graph, out.encoder_out);
  return out;
}

PreformerOutput Preformer::forward(Graph& graph, const Matrix& feats,
                                   std::span<const int> target_prefix) const {
  if (target_prefix.empty() || target_prefix.front() != cfg_.vocab.sos()) {
    throw std::invalid_argument("preformer: target prefix must begin with SOS");
  }
  PreformerOutput out = encode(graph, feats);
  out.dec_logits = decoder_.forward(graph, target_prefix, out.encoder_out);
  return out;
}

std::size_t Preformer::analytic_param_count() const {
  return encoder_.analytic_param_count() + ctc_head_.analytic_param_count() +
         decoder_.analytic_param_count();
}

// Initialization from donors

void init_from_lm(ModelParams& params, const Decoder& decoder, const Checkpoint& donor) {
  if (!decoder.has_lm_group()) {
    throw std::invalid_argument("init_from_lm: vanilla decoder has no LM-initializable group");
  }
  std::vector<std::pair<std::string, Matrix>> updates;
  std::vector<std::string> wanted;
  for (const auto& sel : decoder.lm_group_selectors()) {
    for (const auto& path : params.paths("decoder." + sel)) {
      const std::string rel = path.substr(std::string("decoder.").size());
      wanted.push_back(rel);
      if (!donor.contains(rel)) {
        throw std::invalid_argument("init_from_lm: donor is missing tensor " + rel +
                                    " (for " + path + ")");
      }
      Matrix m = donor.matrix(rel);
      const Matrix& cur = params.value(path);
      if (m.rows() != cur.rows() || m.cols() != cur.cols()) {
        throw DimensionError("init_from_lm: shape mismatch at " + path + ": model " +
                             shape_string(cur) + ", donor " + shape_string(m));
      }
      updates.emplace_back(path, std::move(m));
    }
  }
  for (const auto& name : donor.names()) {
    if (std::find(wanted.begin(), wanted.end(), name) == wanted.end()) {
      throw std::invalid_argument("init_from_lm: donor tensor " + name +
                                  " has no counterpart in the decoder");
    }
  }
  for (auto& [path, m] : updates) params.value(path) = std::move(m);
}

void init_encoder_from(ModelParams& params, const Checkpoint& donor) {
  std::vector<std::pair<std::string, Matrix>> updates;
  for (const auto& path : params.paths("encoder")) {
    if (!donor.contains(path)) {
      throw std::invalid_argument("init_encoder_from: donor is missing tensor " + path);
    }
    Matrix m = donor.matrix(path);
    const Matrix& cur = params.value(path);
    if (m.rows() != cur.rows() || m.cols() != cur.cols()) {
      throw DimensionError("init_encoder_from: shape mismatch at " + path + ": model " +
                           shape_string(cur) + ", donor " + shape_string(m));
    }
    updates.emplace_back(path, std::move(m));
  }
  for (auto& [path, m] : updates) params.value(path) = std::move(m);
}

// Freezing

const char* to_string(LmGroupPolicy policy) {
  switch (policy) {
    case LmGroupPolicy::kFixed: return "fixed";
    case LmGroupPolicy::kLast1: return "last1";
    case LmGroupPolicy::kLast3: return "last3";
    case LmGroupPolicy::kAll: return "all";
  }
  return "?";
}

LmGroupPolicy lm_group_policy_from_string(const std::string& name) {
  if (name == "fixed") return LmGroupPolicy::kFixed;
  if (name == "last1") return LmGroupPolicy::kLast1;
  if (name == "last3") return LmGroupPolicy::kLast3;
  if (name == "all") return LmGroupPolicy::kAll;
  throw std::invalid_argument("unknown freeze policy '" + name +
                              "' (expected fixed, last1, last3, all)");
}

void apply_freeze_policy(ModelParams& params, const PreformerConfig& cfg, Phase phase,
                         const FreezePolicy& policy) {
  for (const auto& sel : policy.extra_trainable) {
    if (params.paths(sel).empty()) {
      throw std::invalid_argument("freeze policy names unknown path: " + sel);
    }
  }
  params.freeze_all();
  params.set_frozen_matching("ctc", false);
  params.set_frozen_matching("decoder.out", false);
  if (cfg.decoder.kind == DecoderKind::kVanilla) {
    params.set_frozen_matching("decoder", false);
  } else {
    params.set_frozen_matching("decoder.cross", false);
    const int n = cfg.decoder.layers;
    switch (policy.lm_group) {
      case LmGroupPolicy::kFixed:
        break;
      case LmGroupPolicy::kLast1:
      case LmGroupPolicy::kLast3: {
        const int k = policy.lm_group == LmGroupPolicy::kLast1 ? 1 : 3;
        for (int i = std::max(0, n - k); i < n; ++i) {
          params.set_frozen_matching(indexed("decoder.self", i), false);
        }
        break;
      }
      case LmGroupPolicy::kAll:
        for (const char* sel : {"decoder.embed", "decoder.pos", "decoder.self", "decoder.norm"}) {
          params.set_frozen_matching(sel, false);
        }
        break;
    }
  }
  if (phase == Phase::kMain) {
    params.set_frozen_matching("encoder.context", false);
    params.set_frozen_matching("encoder.proj", false);
    params.set_frozen_matching("encoder.norm", false);
  }
  for (const auto& sel : policy.extra_trainable) params.set_frozen_matching(sel, false);
}

int count_cross_attention_blocks(const ModelParams& params, std::string_view selector) {
  int n = 0;
  for (const auto& path : params.paths(selector)) {
    if (ends_with(path, ".xattn.wq")) ++n;
  }
  return n;
}

}  // namespace preformer
