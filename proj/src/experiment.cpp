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

#include "preformer/experiment.hpp"

namespace preformer {

TrainConfig ExperimentConfig::default_lm_train() {
  TrainConfig cfg;
  cfg.lambda_ctc = 0.0;
  cfg.warmup_steps = 200;
  cfg.max_epochs = 8;
  return cfg;
}

TrainConfig ExperimentConfig::default_encoder_train() {
  TrainConfig cfg;
  cfg.lambda_ctc = 1.0;
  cfg.warmup_steps = 200;
  cfg.max_epochs = 8;
  return cfg;
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  corpus.seed = seed;
  train.seed = seed;
  lm_train.seed = seed;
  encoder_train.seed = seed;
}

CausalLM fusion_lm(const PreformerConfig& cfg) {
  return CausalLM::matching(cfg.decoder, cfg.vocab);
}

Donors build_donors(const ExperimentConfig& cfg, const Corpus& corpus) {
  Donors donors;
  const CausalLM lm = fusion_lm(cfg.model);
  Rng lm_rng(cfg.lm_train.seed);
  lm.init(donors.lm_params, lm_rng);
  pretrain_lm(lm, donors.lm_params, corpus.lm_text, cfg.lm_train);
  donors.lm_donor = export_lm_donor(donors.lm_params);

  const Preformer model(cfg.model);
  ModelParams enc = model.init(cfg.encoder_train.seed);
  pretrain_encoder(model, enc, corpus.pretrain, corpus.dev, cfg.encoder_train);
  donors.encoder_donor = to_checkpoint(enc, "encoder");
  return donors;
}

ModelParams initial_params(const ExperimentConfig& cfg, const Donors& donors) {
  const Preformer model(cfg.model);
  ModelParams params = model.init(cfg.train.seed);
  if (cfg.init_encoder_from_donor) init_encoder_from(params, donors.encoder_donor);
  if (cfg.init_decoder_from_lm && model.decoder().has_lm_group()) {
    init_from_lm(params, model.decoder(), donors.lm_donor);
  }
  return params;
}

FinetuneResult finetune(const ExperimentConfig& cfg, const Corpus& corpus, const Donors& donors,
                        const TrainHooks& hooks) {
  const Preformer model(cfg.model);
  FinetuneResult out;
  out.initial = initial_params(cfg, donors);
  ModelParams params = out.initial;
  out.train = train_epochs(model, params, corpus.train, corpus.dev, cfg.train, cfg.policy, hooks);
  assign_from_checkpoint(params, average_last(out.train, cfg.train.avg_last_k));
  out.averaged = std::move(params);
  return out;
}

DecodeReport decode_split(const Preformer& model, const ModelParams& params,
                          const std::vector<Utterance>& utts, const DecodeConfig& cfg,
                          const ModelParams* lm_params) {
  DecodeReport report;
  const CausalLM lm = fusion_lm(model.config());
  for (const Utterance& utt : utts) {
    const SearchResult result = recognize(model, params, utt.feats, cfg, &lm, lm_params);
    const RankedHypothesis& best = result.ranked.front();
    if (result.unfinished_fallback) ++report.unfinished;
    report.edits += edit_distance(best.tokens, utt.transcript);
    report.ref_tokens += utt.transcript.size();
    report.lines.push_back(decode_line(utt.id, best));
  }
  if (report.ref_tokens > 0) {
    report.cer = static_cast<double>(report.edits) / static_cast<double>(report.ref_tokens);
  }
  return report;
}

}  // namespace preformer
