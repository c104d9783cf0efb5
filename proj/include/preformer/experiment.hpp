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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "preformer/checkpoint.hpp"
#include "preformer/data.hpp"
#include "preformer/decoding.hpp"
#include "preformer/model.hpp"
#include "preformer/training.hpp"

namespace preformer {

/// Everything needed to go from a seed to a test CER.
struct ExperimentConfig {
  CorpusConfig corpus;
  PreformerConfig model = PreformerConfig::toy();
  TrainConfig train;
  TrainConfig lm_train = default_lm_train();
  TrainConfig encoder_train = default_encoder_train();
  DecodeConfig decode;
  FreezePolicy policy;
  bool init_decoder_from_lm = true;
  bool init_encoder_from_donor = true;

  /// Points every seed (corpus, initialisation, shuffling) at `seed`.
  void set_seed(std::uint64_t seed);

  static TrainConfig default_lm_train();
  static TrainConfig default_encoder_train();
};

struct Donors {
  ModelParams lm_params;  // full causal LM, also used for shallow fusion
  Checkpoint lm_donor;
  Checkpoint encoder_donor;
};

CausalLM fusion_lm(const PreformerConfig& cfg);

/// LM pretraining on the text corpus and CTC pretraining of an encoder on the
/// pretrain split.
Donors build_donors(const ExperimentConfig& cfg, const Corpus& corpus);

/// Initial parameters: random init, then donor weights where configured.
ModelParams initial_params(const ExperimentConfig& cfg, const Donors& donors);

struct FinetuneResult {
  ModelParams initial;
  ModelParams averaged;
  TrainResult train;
};

FinetuneResult finetune(const ExperimentConfig& cfg, const Corpus& corpus, const Donors& donors,
                        const TrainHooks& hooks = {});

struct DecodeReport {
  double cer = 0.0;  // total edits over total reference length
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
  int unfinished = 0;
  std::vector<std::string> lines;  // decode output, one per utterance
};

DecodeReport decode_split(const Preformer& model, const ModelParams& params,
                          const std::vector<Utterance>& utts, const DecodeConfig& cfg,
                          const ModelParams* lm_params = nullptr);

}  // namespace preformer
