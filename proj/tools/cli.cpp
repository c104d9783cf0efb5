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

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "preformer/checkpoint.hpp"
#include "preformer/data.hpp"
#include "preformer/decoding.hpp"
#include "preformer/experiment.hpp"
#include "preformer/grad_suite.hpp"
#include "preformer/training.hpp"

namespace preformer::cli {
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values of every configurable key. Flags and config-file entries both land here.
struct Settings {
  ExperimentConfig exp;
  int d_model = 32;
  int n_heads = 4;
  int d_ff = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  std::string decoder_kind = "ocd";
  std::string lm_group = "fixed";
  int lm_epochs = ExperimentConfig::default_lm_train().max_epochs;
  int encoder_epochs = ExperimentConfig::default_encoder_train().max_epochs;
  std::uint64_t seed = 1;
  std::string preset = "toy";

  std::string data;
  std::string out;
  std::string lm;
  std::string model;
  std::string encoder_donor;
  std::string split = "test";

  std::vector<std::string> positional;
};

void add_keys(CLI::App& app, Settings& s, std::vector<std::string>& keys) {
  auto key = [&](const std::string& name, auto& target, const std::string& help,
                 const std::string& alias = "") {
    std::string dashed = name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    std::string flags = "--" + name;
    if (dashed != name) flags += ",--" + dashed;
    if (!alias.empty()) flags += ",--" + alias;
    app.add_option(flags, target, help);
    keys.push_back(name);
  };
  ExperimentConfig& e = s.exp;
  key("seed", s.seed, "seed for every random stream");

  key("vocab_size", e.corpus.vocab_size, "number of characters");
  key("n_train", e.corpus.n_train, "training utterances");
  key("n_dev", e.corpus.n_dev, "dev utterances");
  key("n_test", e.corpus.n_test, "test utterances");
  key("n_pretrain", e.corpus.n_pretrain, "encoder pretraining utterances");
  key("n_lm", e.corpus.n_lm, "LM text sequences");
  key("noise_sigma", e.corpus.noise_sigma, "feature noise standard deviation");
  key("frames_min", e.corpus.frames_min, "minimum frames per token");
  key("frames_max", e.corpus.frames_max, "maximum frames per token");
  key("len_min", e.corpus.len_min, "minimum tokens per utterance");
  key("len_max", e.corpus.len_max, "maximum tokens per utterance");
  key("markov_order", e.corpus.markov_order, "order of the token Markov chain");

  key("d_model", s.d_model, "model width");
  key("n_heads", s.n_heads, "attention heads");
  key("d_ff", s.d_ff, "feed-forward width");
  key("encoder_layers", s.encoder_layers, "encoder context layers");
  key("decoder_layers", s.decoder_layers, "decoder self (or vanilla) layers");
  key("decoder_kind", s.decoder_kind, "ocd, tcd or vanilla");
  key("preset", s.preset, "toy, full-preformer or full-baseline (param-count only)");

  key("lambda_ctc", e.train.lambda_ctc, "CTC weight of the training objective");
  key("warmup_steps", e.train.warmup_steps, "learning-rate warmup updates");
  key("peak_lr", e.train.peak_lr, "learning rate at the end of warmup");
  key("warm_phase_updates", e.train.warm_phase_updates, "updates before unfreezing the encoder");
  key("max_epochs", e.train.max_epochs, "maximum training epochs");
  key("patience", e.train.patience, "early-stopping patience in epochs");
  key("avg_last_k", e.train.avg_last_k, "number of final checkpoints to average");
  key("batch_size", e.train.batch_size, "utterances per update");
  key("label_smoothing", e.train.label_smoothing, "label smoothing of the decoder loss");
  key("dropout", e.train.dropout, "dropout rate after every sublayer");
  key("lm_group", s.lm_group, "fixed, last1, last3 or all");
  key("init_decoder_from_lm", e.init_decoder_from_lm, "copy LM weights into the decoder");
  key("init_encoder_from_donor", e.init_encoder_from_donor, "start from a CTC-pretrained encoder");
  key("lm_epochs", s.lm_epochs, "LM pretraining epochs");
  key("encoder_epochs", s.encoder_epochs, "encoder pretraining epochs");

  key("mu", e.decode.mu, "CTC weight during decoding");
  key("lm_weight", e.decode.lm_weight, "shallow-fusion LM weight");
  key("beam_size", e.decode.beam_size, "beam width", "beam");
  key("max_len_ratio", e.decode.max_len_ratio, "output length budget relative to encoder frames");

  key("data", s.data, "corpus directory");
  key("out", s.out, "output file or directory");
  key("lm", s.lm, "causal LM checkpoint");
  key("model", s.model, "model checkpoint");
  key("encoder_donor", s.encoder_donor, "CTC-pretrained encoder checkpoint");
  key("split", s.split, "split to decode");
}

void finalize(Settings& s) {
  ExperimentConfig& e = s.exp;
  e.set_seed(s.seed);
  const AttentionConfig attn{s.d_model, s.n_heads, s.d_ff};
  e.model.vocab.n_chars = e.corpus.vocab_size;
  e.model.encoder.d_feat = e.corpus.d_feat;
  e.model.encoder.attn = attn;
  e.model.encoder.layers = s.encoder_layers;
  e.model.decoder.attn = attn;
  e.model.decoder.layers = s.decoder_layers;
  e.model.decoder.max_len = std::max<Index>(e.model.decoder.max_len, e.corpus.len_max + 2);
  e.lm_train.max_epochs = s.lm_epochs;
  e.encoder_train.max_epochs = s.encoder_epochs;
  try {
    e.model.decoder.kind = decoder_kind_from_string(s.decoder_kind);
    e.policy.lm_group = lm_group_policy_from_string(s.lm_group);
    attn.validate();
    e.corpus.validate();
    e.train.validate();
    e.lm_train.validate();
    e.encoder_train.validate();
    e.decode.validate();
  } catch (const std::exception& ex) {
    throw UsageError(ex.what());
  }
}

const std::string& require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError("missing required --" + key);
  return value;
}

ModelParams load_params(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  ModelParams params;
  for (const NamedTensor& t : ckpt.tensors()) params.add(t.name, ckpt.matrix(t.name));
  return params;
}

void save_params(const ModelParams& params, const fs::path& path) {
  save_checkpoint(to_checkpoint(params), path);
}

int cmd_gen_data(const Settings& s, std::ostream& out) {
  const fs::path dir = require(s.out, "out");
  const Corpus corpus = gen_corpus(s.exp.corpus);
  write_corpus(dir, corpus);
  out << "wrote " << corpus.train.size() << " train, " << corpus.dev.size() << " dev, "
      << corpus.test.size() << " test, " << corpus.pretrain.size() << " pretrain utterances and "
      << corpus.lm_text.size() << " LM sequences to " << dir.string() << '\n';
  return 0;
}

int cmd_pretrain_lm(const Settings& s, std::ostream& out) {
  const fs::path dir = require(s.data, "data");
  const fs::path dest = require(s.out, "out");
  const CausalLM lm = fusion_lm(s.exp.model);
  ModelParams params;
  Rng rng(s.exp.lm_train.seed);
  lm.init(params, rng);
  TrainHooks hooks;
  hooks.log = &out;
  pretrain_lm(lm, params, read_lm_text(dir / "lm.txt"), s.exp.lm_train, hooks);
  save_params(params, dest);
  return 0;
}

int cmd_train(const Settings& s, std::ostream& out) {
  const fs::path dir = require(s.data, "data");
  const fs::path out_dir = require(s.out, "out");
  fs::create_directories(out_dir);
  const ExperimentConfig& e = s.exp;
  const Preformer model(e.model);

  Donors donors;
  if (e.init_decoder_from_lm && model.decoder().has_lm_group()) {
    donors.lm_params = load_params(require(s.lm, "lm"));
    donors.lm_donor = export_lm_donor(donors.lm_params);
  }
  const std::vector<Utterance> dev = load_split(dir / "dev.tsv");
  if (e.init_encoder_from_donor) {
    if (!s.encoder_donor.empty()) {
      donors.encoder_donor = load_checkpoint(s.encoder_donor);
    } else {
      ModelParams enc = model.init(e.encoder_train.seed);
      TrainHooks hooks;
      hooks.log = &out;
      out << "# encoder pretraining\n";
      pretrain_encoder(model, enc, load_split(dir / "pretrain.tsv"), dev, e.encoder_train, hooks);
      donors.encoder_donor = to_checkpoint(enc, "encoder");
      save_checkpoint(donors.encoder_donor, out_dir / "encoder_donor.ckpt");
    }
  }

  ModelParams params = initial_params(e, donors);
  save_params(params, out_dir / "initial.ckpt");
  std::ofstream log(out_dir / "train.log");
  std::ostringstream lines;
  TrainHooks hooks;
  hooks.checkpoint_dir = out_dir;
  hooks.log = &lines;
  out << "# fine-tuning\n";
  const TrainResult result =
      train_epochs(model, params, load_split(dir / "train.tsv"), dev, e.train, e.policy, hooks);
  log << lines.str();
  out << lines.str();
  assign_from_checkpoint(params, average_last(result, e.train.avg_last_k));
  save_params(params, out_dir / "averaged.ckpt");
  out << "updates " << result.updates << (result.early_stopped ? " (early stop)" : "") << '\n';
  return 0;
}

int cmd_decode(const Settings& s, std::ostream& out) {
  const fs::path dir = require(s.data, "data");
  const ExperimentConfig& e = s.exp;
  const Preformer model(e.model);
  const ModelParams params = load_params(require(s.model, "model"));
  std::optional<ModelParams> lm_params;
  if (e.decode.lm_weight > 0.0) lm_params = load_params(require(s.lm, "lm"));
  const std::vector<Utterance> utts = load_split(dir / (s.split + ".tsv"));
  const DecodeReport report =
      decode_split(model, params, utts, e.decode, lm_params ? &*lm_params : nullptr);
  std::ofstream file;
  if (!s.out.empty()) {
    file.open(s.out);
    if (!file) throw std::runtime_error("cannot write " + s.out);
  }
  std::ostream& dest = s.out.empty() ? out : file;
  for (const std::string& line : report.lines) dest << line << '\n';
  if (report.unfinished > 0) {
    out << "warning: " << report.unfinished << " utterance(s) ended without EOS\n";
  }
  return 0;
}

std::map<std::string, TokenSeq> read_token_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<std::string, TokenSeq> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    }
    const std::string id = line.substr(0, tab);
    std::string rest = line.substr(tab + 1);
    rest = rest.substr(0, rest.find('\t'));
    if (!out.emplace(id, parse_tokens(rest)).second) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate id " + id);
    }
  }
  return out;
}

int cmd_eval_cer(const Settings& s, std::ostream& out) {
  if (s.positional.size() != 2) throw UsageError("eval-cer expects HYP REF");
  const auto hyp = read_token_file(s.positional[0]);
  const auto ref = read_token_file(s.positional[1]);
  std::size_t edits = 0;
  std::size_t total = 0;
  for (const auto& [id, tokens] : ref) {
    const auto it = hyp.find(id);
    if (it == hyp.end()) throw std::runtime_error("no hypothesis for " + id);
    if (tokens.empty()) throw std::runtime_error("empty reference for " + id);
    edits += edit_distance(it->second, tokens);
    total += tokens.size();
  }
  if (total == 0) throw std::runtime_error("reference file is empty");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", static_cast<double>(edits) / static_cast<double>(total));
  out << buf << '\n';
  return 0;
}

int cmd_avg_ckpt(const Settings& s, std::ostream& out) {
  const fs::path dest = require(s.out, "out");
  if (s.positional.empty()) throw UsageError("avg-ckpt expects at least one input checkpoint");
  std::vector<fs::path> inputs(s.positional.begin(), s.positional.end());
  save_checkpoint(average_checkpoint_files(inputs), dest);
  out << "averaged " << inputs.size() << " checkpoint(s) into " << dest.string() << '\n';
  return 0;
}

int cmd_grad_check(const Settings& s, std::ostream& out) {
  bool ok = true;
  for (const NamedGradCheck& c : gradient_suite(s.seed)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s scalars %5zu max_rel_err %.3e %s\n", c.name.c_str(),
                  c.report.scalars_checked, c.report.max_rel_error, c.report.passed ? "ok" : "FAILED");
    out << buf;
    ok = ok && c.report.passed;
  }
  return ok ? 0 : 2;
}

int cmd_param_count(const Settings& s, std::ostream& out) {
  PreformerConfig cfg;
  if (s.preset == "toy") {
    cfg = s.exp.model;
  } else if (s.preset == "full-preformer") {
    cfg = PreformerConfig::full_scale_preformer();
  } else if (s.preset == "full-baseline") {
    cfg = PreformerConfig::full_scale_baseline();
  } else {
    throw UsageError("unknown preset '" + s.preset + "'");
  }
  const Preformer model(cfg);
  out << "encoder " << model.encoder().analytic_param_count() << '\n'
      << "ctc " << model.ctc_head().analytic_param_count() << '\n'
      << "decoder " << model.decoder().analytic_param_count() << '\n'
      << "total " << model.analytic_param_count() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid CTC/attention recognizer with a one-cross decoder", "preformer"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "line-oriented key = value file; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Settings s;
  std::vector<std::string> keys;
  add_keys(app, s, keys);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "write a synthetic corpus to --out"},
      {"pretrain-lm", "train the causal LM on --data/lm.txt, save to --out"},
      {"train", "fine-tune a recognizer, writing checkpoints and logs to --out"},
      {"decode", "decode --split of --data with --model"},
      {"eval-cer", "corpus CER of HYP against REF"},
      {"avg-ckpt", "average checkpoints into --out"},
      {"grad-check", "finite-difference gradient suite"},
      {"param-count", "analytic parameter counts"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    subs[name] = sub;
  }
  subs["eval-cer"]->add_option("files", s.positional, "HYP REF")->expected(2);
  subs["avg-ckpt"]->add_option("inputs", s.positional, "input checkpoints")->expected(1, -1);

  auto usage = [&](const std::string& message) {
    err << "error: " << message << "\nvalid keys:";
    for (const auto& k : keys) err << ' ' << k;
    err << "\nsubcommands:";
    for (const auto& c : commands) err << ' ' << c.first;
    err << '\n';
    return 1;
  };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  }

  try {
    finalize(s);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return cmd_gen_data(s, out);
    if (name == "pretrain-lm") return cmd_pretrain_lm(s, out);
    if (name == "train") return cmd_train(s, out);
    if (name == "decode") return cmd_decode(s, out);
    if (name == "eval-cer") return cmd_eval_cer(s, out);
    if (name == "avg-ckpt") return cmd_avg_ckpt(s, out);
    if (name == "grad-check") return cmd_grad_check(s, out);
    return cmd_param_count(s, out);
  } catch (const UsageError& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace preformer::cli
