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
#include <span>
#include <string>
#include <vector>

#include "preformer/checkpoint.hpp"
#include "preformer/layers.hpp"
#include "preformer/params.hpp"

namespace preformer {

/// Shared character inventory. Decoder tokens are the characters followed by
/// SOS and EOS; the CTC output space is the characters, SOS, EOS and a
/// trailing blank. SOS/EOS never occur in CTC targets.
struct Vocab {
  int n_chars = 16;

  int sos() const { return n_chars; }
  int eos() const { return n_chars + 1; }
  int size() const { return n_chars + 2; }
  int blank() const { return size(); }
  int ctc_size() const { return size() + 1; }
  bool is_char(int token) const { return token >= 0 && token < n_chars; }
};

struct ConvLayerSpec {
  int channels = 32;
  int kernel = 3;
  int stride = 2;
};

struct EncoderConfig {
  int d_feat = 8;
  std::vector<ConvLayerSpec> conv = {{32, 3, 2}, {32, 3, 2}};
  AttentionConfig attn;
  int layers = 2;
  Index max_len = 4096;

  int total_stride() const;
  Index output_length(Index frames) const;
};

enum class DecoderKind { kOcd, kTcd, kVanilla };

const char* to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& name);

struct DecoderConfig {
  DecoderKind kind = DecoderKind::kOcd;
  AttentionConfig attn;
  /// Self layers for OCD/TCD, full layers for the vanilla decoder.
  int layers = 2;
  Index max_len = 64;

  int cross_layers() const;
};

struct PreformerConfig {
  Vocab vocab;
  EncoderConfig encoder;
  DecoderConfig decoder;

  /// d=32, 4 heads, d_ff=64, two stride-2 conv layers, 2 encoder layers, N=2.
  static PreformerConfig toy();
  /// 768/3072, 7-layer waveform conv frontend, 12 context layers, OCD with 6 self layers.
  static PreformerConfig full_scale_preformer();
  /// 768/3072, 2-layer filterbank conv frontend, 12 encoder layers, 6 vanilla layers.
  static PreformerConfig full_scale_baseline();
};

/// Convolutional frontend followed by a bidirectional transformer context network.
class W2vEncoder {
 public:
  explicit W2vEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {}

  const EncoderConfig& config() const { return cfg_; }
  void init(ModelParams& params, Rng& rng) const;
  /// feats [T x d_feat] -> [ceil(T / stride) x d_model]
  Var forward(Graph& graph, const Var& feats) const;
  std::size_t analytic_param_count() const;
  bool has_projection() const;

 private:
  EncoderConfig cfg_;
};

/// Single fully connected layer to vocab + blank.
class CtcHead {
 public:
  CtcHead(int d_model, Vocab vocab) : d_model_(d_model), vocab_(vocab) {}
  void init(ModelParams& params, Rng& rng) const;
  Var forward(Graph& graph, const Var& encoder_out) const;
  std::size_t analytic_param_count() const;

 private:
  int d_model_;
  Vocab vocab_;
};

/// Token decoder of one of three shapes:
///   OCD:     embed + positions, N self layers, norm, 1 cross layer, output projection
///   TCD:     as OCD with 2 cross layers
///   vanilla: embed + positions, M vanilla layers, norm, output projection
class Decoder {
 public:
  Decoder(DecoderConfig cfg, Vocab vocab) : cfg_(std::move(cfg)), vocab_(vocab) {}

  const DecoderConfig& config() const { return cfg_; }
  void init(ModelParams& params, Rng& rng) const;
  /// tokens (starting with SOS) -> logits [len x vocab]
  Var forward(Graph& graph, std::span<const int> tokens, const Var& memory) const;
  std::size_t analytic_param_count() const;

  /// Parameters below the first cross layer, in the donor's relative naming
  /// ("embed", "pos", "self.<i>.*", "norm.*"). Empty for the vanilla decoder.
  std::vector<std::string> lm_group_selectors() const;
  bool has_lm_group() const { return cfg_.kind != DecoderKind::kVanilla; }

 private:
  DecoderConfig cfg_;
  Vocab vocab_;
};

/// Causal transformer LM. Its parameters "lm.<rel>" mirror the decoder's
/// LM-initializable group "decoder.<rel>", plus an output head.
class CausalLM {
 public:
  CausalLM(AttentionConfig attn, int layers, Index max_len, Vocab vocab)
      : attn_(attn), layers_(layers), max_len_(max_len), vocab_(vocab) {}
  /// Shape-compatible with the given decoder's LM-initializable group.
  static CausalLM matching(const DecoderConfig& cfg, Vocab vocab);

  void init(ModelParams& params, Rng& rng) const;
  /// tokens (starting with SOS) -> logits [len x vocab]
  Var forward(Graph& graph, std::span<const int> tokens) const;
  const Vocab& vocab() const { return vocab_; }

 private:
  AttentionConfig attn_;
  int layers_;
  Index max_len_;
  Vocab vocab_;
};

/// Donor checkpoint for a decoder: the LM's shared group with the "lm." prefix removed.
Checkpoint export_lm_donor(const ModelParams& lm_params);

struct PreformerOutput {
  Var ctc_logits;  // [T' x (V + 1)]
  Var dec_logits;  // [L x V]
  Var encoder_out;
};

class Preformer {
 public:
  explicit Preformer(PreformerConfig cfg);

  const PreformerConfig& config() const { return cfg_; }
  const W2vEncoder& encoder() const { return encoder_; }
  const CtcHead& ctc_head() const { return ctc_head_; }
  const Decoder& decoder() const { return decoder_; }

  ModelParams init(std::uint64_t seed) const;
  void init(ModelParams& params, Rng& rng) const;

  /// Encoder + CTC branch only.
  PreformerOutput encode(Graph& graph, const Matrix& feats) const;
  PreformerOutput forward(Graph& graph, const Matrix& feats,
                          std::span<const int> target_prefix) const;

  std::size_t analytic_param_count() const;

 private:
  PreformerConfig cfg_;
  W2vEncoder encoder_;
  CtcHead ctc_head_;
  Decoder decoder_;
};

/// Copies the LM-initializable group of the decoder from `donor`. Cross layers
/// and the output projection are left untouched.
void init_from_lm(ModelParams& params, const Decoder& decoder, const Checkpoint& donor);

/// Copies every "encoder.*" parameter from `donor`.
void init_encoder_from(ModelParams& params, const Checkpoint& donor);

enum class Phase { kWarm, kMain };

/// How much of the LM-initialized decoder group is trained.
enum class LmGroupPolicy { kFixed, kLast1, kLast3, kAll };

const char* to_string(LmGroupPolicy policy);
LmGroupPolicy lm_group_policy_from_string(const std::string& name);

struct FreezePolicy {
  LmGroupPolicy lm_group = LmGroupPolicy::kFixed;
  /// Extra parameter selectors kept trainable in both phases.
  std::vector<std::string> extra_trainable;
};

/// Warm phase trains the CTC head, the decoder output projection and the cross
/// layer(s); the main phase adds the encoder context network. The conv frontend
/// is frozen in both phases. A vanilla decoder has no donor group and is fully
/// trainable in both phases.
void apply_freeze_policy(ModelParams& params, const PreformerConfig& cfg, Phase phase,
                         const FreezePolicy& policy = {});

/// Counts cross-attention blocks (attention whose keys come from the encoder).
int count_cross_attention_blocks(const ModelParams& params, std::string_view selector = "decoder");

}  // namespace preformer
