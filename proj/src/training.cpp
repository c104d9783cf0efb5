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

#include "preformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace preformer {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(lambda_ctc >= 0.0 && lambda_ctc <= 1.0)) fail("lambda_ctc must lie in [0, 1]");
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (warm_phase_updates < 0) fail("warm_phase_updates must be >= 0");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (avg_last_k < 1) fail("avg_last_k must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig cfg;
  cfg.warmup_steps = 25000;
  cfg.warm_phase_updates = 10000;
  cfg.max_epochs = 20;
  cfg.patience = 3;
  cfg.avg_last_k = 10;
  return cfg;
}

double mtl_loss(double ctc, double ce, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda outside [0, 1]");
  if (lambda == 0.0) return ce;
  if (lambda == 1.0) return ctc;
  return lambda * ctc + (1.0 - lambda) * ce;
}

Var mtl_loss(const Var& ctc, const Var& ce, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda outside [0, 1]");
  if (lambda == 0.0) return ce;
  if (lambda == 1.0) return ctc;
  return add(scale(ctc, lambda), scale(ce, 1.0 - lambda));
}

Var ce_loss(const Var& logits, std::span<const int> targets, double label_smoothing) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("ce_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " positions");
  }
  const Index classes = logits.cols();
  const double off = label_smoothing / static_cast<double>(classes);
  Matrix target_dist = Matrix::Constant(logits.rows(), classes, off);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= classes) {
      throw std::invalid_argument("ce_loss: target id " + std::to_string(targets[i]) +
                                  " outside vocabulary of " + std::to_string(classes));
    }
    target_dist(static_cast<Index>(i), targets[i]) += 1.0 - label_smoothing;
  }
  const Var logp = log_softmax(logits);
  return scale(sum(mul(logp, logits.tape().constant(std::move(target_dist)))),
               -1.0 / static_cast<double>(logits.rows()));
}

double lr_at(long step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5)) * std::sqrt(w);
}

void Adam::step(ModelParams& params, const GradientMap& grads, double lr) {
  ++step_;
  const double bias1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(step_));
  for (const auto& [path, g] : grads) {
    Parameter& p = params.at(path);
    if (p.frozen) continue;
    auto it = moments_.find(path);
    if (it == moments_.end()) {
      it = moments_
               .emplace(path, Moments{Matrix::Zero(g.rows(), g.cols()),
                                      Matrix::Zero(g.rows(), g.cols())})
               .first;
    }
    Moments& mo = it->second;
    mo.m = cfg_.adam_beta1 * mo.m + (1.0 - cfg_.adam_beta1) * g;
    mo.v = cfg_.adam_beta2 * mo.v + (1.0 - cfg_.adam_beta2) * g.cwiseAbs2();
    p.value.array() -= lr * (mo.m.array() / bias1) /
                       ((mo.v.array() / bias2).sqrt() + cfg_.adam_eps);
  }
}

double clip_global_norm(GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [path, g] : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [path, g] : grads) g *= s;
  }
  return norm;
}

std::string EpochRecord::line() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch %d update %ld train_mtl %.8g dev_mtl %.8g lr %.8g", epoch,
                update, train_mtl, dev_mtl, lr);
  return buf;
}

EpochRecord EpochRecord::parse(const std::string& line) {
  std::istringstream in(line);
  EpochRecord r;
  std::string k1, k2, k3, k4, k5;
  if (!(in >> k1 >> r.epoch >> k2 >> r.update >> k3 >> r.train_mtl >> k4 >> r.dev_mtl >> k5 >>
        r.lr) ||
      k1 != "epoch" || k2 != "update" || k3 != "train_mtl" || k4 != "dev_mtl" || k5 != "lr") {
    throw std::invalid_argument("malformed training log line: " + line);
  }
  return r;
}

int early_stop_epoch(std::span<const double> dev_losses, int patience) {
  double best = std::numeric_limits<double>::infinity();
  int since = 0;
  for (std::size_t i = 0; i < dev_losses.size(); ++i) {
    if (dev_losses[i] < best) {
      best = dev_losses[i];
      since = 0;
    } else if (++since >= patience) {
      return static_cast<int>(i + 1);
    }
  }
  return static_cast<int>(dev_losses.size());
}

namespace {

using Group = std::span<const std::size_t>;

struct TrainingLoop {
  std::size_t n_train = 0;
  std::size_t n_dev = 0;
  /// Weighted contribution of one item to the mean objective over `group`.
  std::function<std::optional<Var>(Graph&, bool dev, std::size_t idx, Group group)> objective;
  std::function<void(long update)> before_update;
};

double mean_objective(const ModelParams& params, const TrainingLoop& loop, bool dev, Group group) {
  double total = 0.0;
  for (std::size_t idx : group) {
    Graph graph(params, GradMode::kNone);
    if (auto v = loop.objective(graph, dev, idx, group)) total += v->item();
  }
  return total;
}

TrainResult run_training(ModelParams& params, const TrainingLoop& loop, const TrainConfig& cfg,
                         const TrainHooks& hooks) {
  cfg.validate();
  if (loop.n_train == 0) throw std::invalid_argument("training data is empty");
  if (!hooks.checkpoint_dir.empty()) std::filesystem::create_directories(hooks.checkpoint_dir);

  Adam adam(cfg);
  Rng rng(cfg.seed);
  Rng dropout_rng(cfg.seed + 1);
  std::vector<std::size_t> order(loop.n_train);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> dev_all(loop.n_dev);
  std::iota(dev_all.begin(), dev_all.end(), 0);

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long update = 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    int batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const Group group(order.data() + start, std::min(batch, order.size() - start));
      ++update;
      if (loop.before_update) loop.before_update(update);
      GradientMap grads;
      double batch_loss = 0.0;
      try {
        for (std::size_t idx : group) {
          Graph graph(params, GradMode::kTrainable);
          if (cfg.dropout > 0.0) graph.enable_dropout(cfg.dropout, dropout_rng);
          auto v = loop.objective(graph, false, idx, group);
          if (!v) continue;
          batch_loss += v->item();
          graph.tape().backward(*v);
          graph.accumulate_grads(grads);
        }
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at update " + std::to_string(update) + ": " +
                            e.what());
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("non-finite loss at update " + std::to_string(update));
      }
      clip_global_norm(grads, cfg.clip_norm);
      lr = lr_at(update, cfg);
      adam.step(params, grads, lr);
      if (hooks.after_update) hooks.after_update(update, params);
      train_sum += batch_loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.update = update;
    rec.train_mtl = train_sum / std::max(1, batches);
    rec.dev_mtl = loop.n_dev > 0 ? mean_objective(params, loop, true, dev_all) : rec.train_mtl;
    rec.lr = lr;
    if (!std::isfinite(rec.dev_mtl)) {
      throw TrainingError("non-finite dev loss after epoch " + std::to_string(epoch));
    }
    result.log.push_back(rec);
    if (hooks.log != nullptr) *hooks.log << rec.line() << std::endl;

    Checkpoint ckpt = to_checkpoint(params);
    if (!hooks.checkpoint_dir.empty()) {
      save_checkpoint(ckpt, hooks.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
    }
    result.epoch_checkpoints.push_back(std::move(ckpt));

    if (rec.dev_mtl < best) {
      best = rec.dev_mtl;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  result.updates = update;
  return result;
}

bool ctc_alignable(const Preformer& model, const Utterance& utt) {
  return ctc_min_frames(utt.transcript) <= model.config().encoder.output_length(utt.feats.rows());
}

TokenSeq with_sos(const Vocab& vocab, const TokenSeq& seq) {
  TokenSeq out;
  out.reserve(seq.size() + 1);
  out.push_back(vocab.sos());
  out.insert(out.end(), seq.begin(), seq.end());
  return out;
}

TokenSeq with_eos(const Vocab& vocab, const TokenSeq& seq) {
  TokenSeq out = seq;
  out.push_back(vocab.eos());
  return out;
}

// lambda / n_alignable * ctc + (1 - lambda) / n * ce
std::optional<Var> weighted_joint(Graph& graph, const Preformer& model, const Utterance& utt,
                                  double lambda, double smoothing, std::size_t n,
                                  std::size_t n_alignable) {
  const UtteranceLoss terms = preformer_losses(graph, model, utt, smoothing);
  std::optional<Var> out;
  if (lambda > 0.0 && terms.ctc) out = scale(*terms.ctc, lambda / static_cast<double>(n_alignable));
  if (lambda < 1.0) {
    const Var ce = scale(terms.ce, (1.0 - lambda) / static_cast<double>(n));
    out = out ? add(*out, ce) : ce;
  }
  return out;
}

}  // namespace

UtteranceLoss preformer_losses(Graph& graph, const Preformer& model, const Utterance& utt,
                               double label_smoothing) {
  const Vocab& vocab = model.config().vocab;
  const TokenSeq prefix = with_sos(vocab, utt.transcript);
  const TokenSeq targets = with_eos(vocab, utt.transcript);
  const PreformerOutput out = model.forward(graph, utt.feats, prefix);
  UtteranceLoss loss;
  loss.ctc = ctc_loss(log_softmax(out.ctc_logits), utt.transcript, vocab.blank());
  loss.ce = ce_loss(out.dec_logits, targets, label_smoothing);
  return loss;
}

TrainResult train_epochs(const Preformer& model, ModelParams& params,
                         const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                         const TrainConfig& cfg, const FreezePolicy& policy,
                         const TrainHooks& hooks) {
  cfg.validate();
  const PreformerConfig& mcfg = model.config();
  std::vector<char> train_ok(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_ok[i] = ctc_alignable(model, train[i]);
  std::vector<char> dev_ok(dev.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev_ok[i] = ctc_alignable(model, dev[i]);

  TrainingLoop loop;
  loop.n_train = train.size();
  loop.n_dev = dev.size();
  loop.objective = [&](Graph& graph, bool is_dev, std::size_t idx, Group group) {
    const auto& ok = is_dev ? dev_ok : train_ok;
    std::size_t n_alignable = 0;
    for (std::size_t j : group) n_alignable += ok[j] ? 1 : 0;
    const Utterance& utt = is_dev ? dev[idx] : train[idx];
    return weighted_joint(graph, model, utt, cfg.lambda_ctc, cfg.label_smoothing, group.size(),
                          std::max<std::size_t>(1, n_alignable));
  };
  std::optional<Phase> phase;
  loop.before_update = [&](long update) {
    const Phase want = update <= cfg.warm_phase_updates ? Phase::kWarm : Phase::kMain;
    if (phase != want) {
      apply_freeze_policy(params, mcfg, want, policy);
      phase = want;
    }
  };
  return run_training(params, loop, cfg, hooks);
}

double evaluate_mtl(const Preformer& model, const ModelParams& params,
                    const std::vector<Utterance>& utts, double lambda) {
  if (utts.empty()) throw std::invalid_argument("evaluate_mtl: no utterances");
  std::size_t n_alignable = 0;
  for (const auto& u : utts) n_alignable += ctc_alignable(model, u) ? 1 : 0;
  double total = 0.0;
  for (const auto& u : utts) {
    Graph graph(params, GradMode::kNone);
    if (auto v = weighted_joint(graph, model, u, lambda, 0.0, utts.size(),
                                std::max<std::size_t>(1, n_alignable))) {
      total += v->item();
    }
  }
  return total;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts) {
  if (ckpts.empty()) throw std::invalid_argument("average_checkpoints: nothing to average");
  const Checkpoint& first = ckpts.front();
  const auto names = first.names();
  const std::set<std::string> reference(names.begin(), names.end());
  for (std::size_t i = 1; i < ckpts.size(); ++i) {
    const auto other_names = ckpts[i].names();
    const std::set<std::string> other(other_names.begin(), other_names.end());
    if (other != reference) {
      std::string diff;
      for (const auto& n : reference) {
        if (!other.count(n)) diff += " " + n;
      }
      for (const auto& n : other) {
        if (!reference.count(n)) diff += " " + n;
      }
      throw std::invalid_argument("average_checkpoints: checkpoint " + std::to_string(i) +
                                  " differs in parameter paths:" + diff);
    }
  }
  const double k = static_cast<double>(ckpts.size());
  Checkpoint out;
  for (const NamedTensor& base : first.tensors()) {
    NamedTensor avg = base;
    std::vector<double> delta(base.data.size(), 0.0);
    for (std::size_t i = 1; i < ckpts.size(); ++i) {
      const NamedTensor* t = ckpts[i].find(base.name);
      if (t->shape != base.shape) {
        throw DimensionError("average_checkpoints: shape mismatch at " + base.name);
      }
      for (std::size_t j = 0; j < delta.size(); ++j) delta[j] += t->data[j] - base.data[j];
    }
    // base + mean deviation keeps identical inputs bitwise identical
    for (std::size_t j = 0; j < delta.size(); ++j) avg.data[j] = base.data[j] + delta[j] / k;
    out.add(std::move(avg));
  }
  return out;
}

Checkpoint average_checkpoint_files(std::span<const std::filesystem::path> paths) {
  std::vector<Checkpoint> ckpts;
  ckpts.reserve(paths.size());
  for (const auto& p : paths) ckpts.push_back(load_checkpoint(p));
  return average_checkpoints(ckpts);
}

Checkpoint average_last(const TrainResult& result, int k) {
  if (result.epoch_checkpoints.empty()) throw std::invalid_argument("no epoch checkpoints");
  const std::size_t n = std::min(result.epoch_checkpoints.size(), static_cast<std::size_t>(k));
  return average_checkpoints(std::span<const Checkpoint>(
      result.epoch_checkpoints.data() + result.epoch_checkpoints.size() - n, n));
}

TrainResult pretrain_lm(const CausalLM& lm, ModelParams& params, const std::vector<TokenSeq>& corpus,
                        const TrainConfig& cfg, const TrainHooks& hooks) {
  if (corpus.empty()) throw std::invalid_argument("pretrain_lm: empty corpus");
  const std::size_t n_dev = corpus.size() >= 10 ? corpus.size() / 10 : 0;
  const std::size_t n_train = corpus.size() - n_dev;
  const Vocab& vocab = lm.vocab();
  params.set_frozen_matching("lm", false);

  TrainingLoop loop;
  loop.n_train = n_train;
  loop.n_dev = n_dev;
  loop.objective = [&](Graph& graph, bool is_dev, std::size_t idx,
                       Group group) -> std::optional<Var> {
    const TokenSeq& seq = corpus[is_dev ? n_train + idx : idx];
    const Var logits = lm.forward(graph, with_sos(vocab, seq));
    return scale(ce_loss(logits, with_eos(vocab, seq)), 1.0 / static_cast<double>(group.size()));
  };
  return run_training(params, loop, cfg, hooks);
}

double lm_nll(const CausalLM& lm, const ModelParams& params, const std::vector<TokenSeq>& corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : corpus) {
    Graph graph(params, GradMode::kNone);
    const Var logits = lm.forward(graph, with_sos(lm.vocab(), seq));
    const double mean = ce_loss(logits, with_eos(lm.vocab(), seq)).item();
    total += mean * static_cast<double>(seq.size() + 1);
    tokens += seq.size() + 1;
  }
  return total / static_cast<double>(tokens);
}

TrainResult pretrain_encoder(const Preformer& model, ModelParams& params,
                             const std::vector<Utterance>& train,
                             const std::vector<Utterance>& dev, const TrainConfig& cfg,
                             const TrainHooks& hooks) {
  params.freeze_all();
  params.set_frozen_matching("encoder", false);
  params.set_frozen_matching("ctc", false);
  const int blank = model.config().vocab.blank();

  std::vector<char> train_ok(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_ok[i] = ctc_alignable(model, train[i]);
  std::vector<char> dev_ok(dev.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev_ok[i] = ctc_alignable(model, dev[i]);

  TrainingLoop loop;
  loop.n_train = train.size();
  loop.n_dev = dev.size();
  loop.objective = [&](Graph& graph, bool is_dev, std::size_t idx,
                       Group group) -> std::optional<Var> {
    const auto& ok = is_dev ? dev_ok : train_ok;
    if (!ok[idx]) return std::nullopt;
    std::size_t n_alignable = 0;
    for (std::size_t j : group) n_alignable += ok[j] ? 1 : 0;
    const Utterance& utt = is_dev ? dev[idx] : train[idx];
    const PreformerOutput out = model.encode(graph, utt.feats);
    auto loss = ctc_loss(log_softmax(out.ctc_logits), utt.transcript, blank);
    if (!loss) return std::nullopt;
    return scale(*loss, 1.0 / static_cast<double>(n_alignable));
  };
  return run_training(params, loop, cfg, hooks);
}

}  // namespace preformer
