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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preformer/checkpoint.hpp"
#include "preformer/data.hpp"
#include "preformer/model.hpp"
#include "preformer/params.hpp"

namespace preformer {

struct TrainConfig {
  double lambda_ctc = 0.3;
  int warmup_steps = 400;
  double peak_lr = 1e-3;
  int warm_phase_updates = 200;
  int max_epochs = 15;
  int patience = 3;
  int avg_last_k = 5;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double label_smoothing = 0.0;
  double dropout = 0.0;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 5.0;

  void validate() const;

  /// 25000 warmup steps, 10000 warm-phase updates, 20 epochs, patience 3, last-10 averaging.
  static TrainConfig full_scale();
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// lambda * ctc + (1 - lambda) * ce. Zero-weighted terms are skipped entirely.
double mtl_loss(double ctc, double ce, double lambda);
Var mtl_loss(const Var& ctc, const Var& ce, double lambda);

/// Mean over positions of the label-smoothed negative log-likelihood. The
/// smoothed target puts 1 - eps on the label and eps / V on every class.
Var ce_loss(const Var& logits, std::span<const int> targets, double label_smoothing = 0.0);

/// Noam schedule: linear warmup to peak_lr at step == warmup_steps, then step^-0.5 decay.
double lr_at(long step, const TrainConfig& cfg);

/// Adam with per-parameter moments. Frozen parameters are never touched and
/// never get accumulators.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ModelParams& params, const GradientMap& grads, double lr);
  long steps() const { return step_; }
  bool has_state(const std::string& path) const { return moments_.count(path) != 0; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  TrainConfig cfg_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the original norm.
double clip_global_norm(GradientMap& grads, double max_norm);

struct EpochRecord {
  int epoch = 0;
  long update = 0;
  double train_mtl = 0.0;
  double dev_mtl = 0.0;
  double lr = 0.0;

  /// `epoch <n> update <u> train_mtl <x> dev_mtl <y> lr <z>`
  std::string line() const;
  static EpochRecord parse(const std::string& line);
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::vector<Checkpoint> epoch_checkpoints;
  long updates = 0;
  bool early_stopped = false;
};

struct TrainHooks {
  /// Called after every optimizer update with the 1-based update index.
  std::function<void(long update, const ModelParams& params)> after_update;
  /// When set, `epoch_<n>.ckpt` is written here after every epoch.
  std::filesystem::path checkpoint_dir;
  /// When set, one log line per epoch is written here.
  std::ostream* log = nullptr;
};

/// Epochs completed before stopping: the first epoch at which the best dev
/// loss has not improved for `patience` consecutive epochs, or all of them.
int early_stop_epoch(std::span<const double> dev_losses, int patience);

/// Per-utterance loss terms of the joint objective.
struct UtteranceLoss {
  std::optional<Var> ctc;  // empty when the target cannot be aligned
  Var ce;
};

UtteranceLoss preformer_losses(Graph& graph, const Preformer& model, const Utterance& utt,
                               double label_smoothing);

/// Fine-tunes `params` with the joint CTC/attention objective. Freezing follows
/// `policy`: warm phase for updates [1, warm_phase_updates], main phase after.
TrainResult train_epochs(const Preformer& model, ModelParams& params,
                         const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                         const TrainConfig& cfg, const FreezePolicy& policy = {},
                         const TrainHooks& hooks = {});

/// Mean joint objective over `utts` (CTC term averaged over alignable utterances only).
double evaluate_mtl(const Preformer& model, const ModelParams& params,
                    const std::vector<Utterance>& utts, double lambda);

/// Elementwise mean. Identical inputs reproduce the input bitwise.
Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts);
Checkpoint average_checkpoint_files(std::span<const std::filesystem::path> paths);
/// Mean of the last `k` epoch checkpoints (fewer if training stopped earlier).
Checkpoint average_last(const TrainResult& result, int k);

/// Trains a causal LM with next-token cross-entropy. The last tenth of the
/// corpus is held out for early stopping.
TrainResult pretrain_lm(const CausalLM& lm, ModelParams& params, const std::vector<TokenSeq>& corpus,
                        const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Mean per-token negative log-likelihood (including EOS) of `corpus` under the LM.
double lm_nll(const CausalLM& lm, const ModelParams& params, const std::vector<TokenSeq>& corpus);

/// CTC-only training of the encoder and CTC head, all parameters trainable.
/// Produces encoder donors.
TrainResult pretrain_encoder(const Preformer& model, ModelParams& params,
                             const std::vector<Utterance>& train,
                             const std::vector<Utterance>& dev, const TrainConfig& cfg,
                             const TrainHooks& hooks = {});

}  // namespace preformer
