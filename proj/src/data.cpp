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

#include "preformer/data.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "preformer/checkpoint.hpp"

namespace preformer {

namespace {

enum Stream : std::uint64_t {
  kPrototypes = 0,
  kChain = 1,
  kTrain = 2,
  kDev = 3,
  kTest = 4,
  kLmText = 5,
  kPretrain = 6,
};

Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return Rng(seq);
}

std::vector<Utterance> make_split(const CorpusConfig& cfg, const MarkovChain& chain,
                                  const Matrix& prototypes, int count, const std::string& prefix,
                                  Rng rng) {
  std::uniform_int_distribution<int> length(cfg.len_min, cfg.len_max);
  std::uniform_int_distribution<int> frames(cfg.frames_min, cfg.frames_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int u = 0; u < count; ++u) {
    Utterance utt;
    char id[32];
    std::snprintf(id, sizeof(id), "%s%05d", prefix.c_str(), u);
    utt.id = id;
    utt.transcript = chain.sample(length(rng), rng);
    std::vector<int> durations;
    int total = 0;
    for (std::size_t i = 0; i < utt.transcript.size(); ++i) {
      durations.push_back(frames(rng));
      total += durations.back();
    }
    utt.feats.resize(total, cfg.d_feat);
    Index row = 0;
    for (std::size_t i = 0; i < utt.transcript.size(); ++i) {
      for (int f = 0; f < durations[i]; ++f, ++row) {
        utt.feats.row(row) = prototypes.row(utt.transcript[i]);
        for (int d = 0; d < cfg.d_feat; ++d) utt.feats(row, d) += cfg.noise_sigma * noise(rng);
      }
    }
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace

void CorpusConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("corpus: " + msg); };
  if (vocab_size < 4) fail("vocab_size must be >= 4");
  if (n_train < 1 || n_dev < 0 || n_test < 0 || n_pretrain < 0 || n_lm < 0) {
    fail("split sizes must be non-negative and n_train >= 1");
  }
  if (frames_min < 1 || frames_max < frames_min) fail("degenerate frames-per-token range");
  if (len_min < 1 || len_max < len_min) fail("degenerate token length range");
  if (markov_order < 1 || markov_order > 3) fail("markov_order must be 1, 2 or 3");
  if (d_feat < 1) fail("d_feat must be positive");
  if (noise_sigma < 0) fail("noise_sigma must be non-negative");
  if (dirichlet_alpha <= 0) fail("dirichlet_alpha must be positive");
}

MarkovChain::MarkovChain(int n_chars, int order, double alpha, bool allow_repeats, Rng& rng)
    : n_chars_(n_chars), order_(order) {
  // Contexts are base-(n+1) numbers over the last `order` tokens, with n
  // standing for "before the start".
  std::size_t contexts = 1;
  for (int i = 0; i < order; ++i) contexts *= static_cast<std::size_t>(n_chars + 1);
  table_ = Matrix::Zero(static_cast<Index>(contexts), n_chars);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (Index c = 0; c < table_.rows(); ++c) {
    const int last = static_cast<int>(c % static_cast<Index>(n_chars + 1));
    double total = 0.0;
    for (int k = 0; k < n_chars; ++k) {
      double w = gamma(rng) + 1e-6;
      if (!allow_repeats && k == last) w = 0.0;
      table_(c, k) = w;
      total += w;
    }
    table_.row(c) /= total;
  }
}

std::size_t MarkovChain::context(std::span<const int> history) const {
  std::size_t ctx = 0;
  for (int i = order_; i >= 1; --i) {
    const auto pos = static_cast<std::ptrdiff_t>(history.size()) - i;
    const int tok = pos >= 0 ? history[static_cast<std::size_t>(pos)] : n_chars_;
    ctx = ctx * static_cast<std::size_t>(n_chars_ + 1) + static_cast<std::size_t>(tok);
  }
  return ctx;
}

double MarkovChain::prob(std::span<const int> history, int next) const {
  return table_(static_cast<Index>(context(history)), next);
}

TokenSeq MarkovChain::sample(int length, Rng& rng) const {
  TokenSeq seq;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < length; ++i) {
    const auto row = table_.row(static_cast<Index>(context(seq)));
    double u = unit(rng);
    int pick = n_chars_ - 1;
    for (int k = 0; k < n_chars_; ++k) {
      u -= row(k);
      if (u < 0) {
        pick = k;
        break;
      }
    }
    // Guard against rounding landing on a zero-probability tail entry.
    while (row(pick) == 0.0) pick = (pick + n_chars_ - 1) % n_chars_;
    seq.push_back(pick);
  }
  return seq;
}

Corpus gen_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.vocab.n_chars = cfg.vocab_size;

  Rng proto_rng = stream_rng(cfg.seed, kPrototypes);
  corpus.prototypes = normal_matrix(cfg.vocab_size, cfg.d_feat, 1.0, proto_rng);

  Rng chain_rng = stream_rng(cfg.seed, kChain);
  const MarkovChain chain(cfg.vocab_size, cfg.markov_order, cfg.dirichlet_alpha,
                          cfg.allow_repeats, chain_rng);

  corpus.train = make_split(cfg, chain, corpus.prototypes, cfg.n_train, "train",
                            stream_rng(cfg.seed, kTrain));
  corpus.dev =
      make_split(cfg, chain, corpus.prototypes, cfg.n_dev, "dev", stream_rng(cfg.seed, kDev));
  corpus.test =
      make_split(cfg, chain, corpus.prototypes, cfg.n_test, "test", stream_rng(cfg.seed, kTest));
  corpus.pretrain = make_split(cfg, chain, corpus.prototypes, cfg.n_pretrain, "pre",
                               stream_rng(cfg.seed, kPretrain));

  Rng lm_rng = stream_rng(cfg.seed, kLmText);
  std::uniform_int_distribution<int> length(cfg.len_min, cfg.len_max);
  for (int i = 0; i < cfg.n_lm; ++i) corpus.lm_text.push_back(chain.sample(length(lm_rng), lm_rng));
  return corpus;
}

TokenSeq nearest_prototype_decode(const Matrix& feats, const Matrix& prototypes) {
  TokenSeq out;
  int prev = -1;
  for (Index t = 0; t < feats.rows(); ++t) {
    Index best = 0;
    (prototypes.rowwise() - feats.row(t)).rowwise().squaredNorm().minCoeff(&best);
    const int token = static_cast<int>(best);
    if (token != prev) out.push_back(token);
    prev = token;
  }
  return out;
}

// Files

std::string join_tokens(std::span<const int> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

TokenSeq parse_tokens(const std::string& text) {
  TokenSeq out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size() || v < 0) throw FormatError("bad token '" + word + "'");
    out.push_back(v);
  }
  return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read manifest " + path.string());
  Manifest manifest;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw FormatError(where + ": expected 3 tab-separated fields, got " +
                        std::to_string(fields.size()));
    }
    if (!seen.insert(fields[0]).second) {
      throw FormatError(where + ": duplicate utt_id " + fields[0]);
    }
    ManifestEntry e{fields[0], fields[1], {}};
    try {
      e.transcript = parse_tokens(fields[2]);
    } catch (const FormatError& err) {
      throw FormatError(where + ": " + err.what());
    }
    if (e.transcript.empty()) throw FormatError(where + ": empty transcript");
    manifest.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  for (const auto& e : manifest) {
    out << e.utt_id << '\t' << e.feature_path << '\t' << join_tokens(e.transcript) << '\n';
  }
}

void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<Utterance>& utts) {
  std::filesystem::create_directories(dir / "feats");
  Manifest manifest;
  for (const auto& u : utts) {
    const std::string rel = "feats/" + u.id + ".feat";
    Checkpoint feat;
    feat.add("feat", u.feats);
    save_checkpoint(feat, dir / rel);
    manifest.push_back({u.id, rel, u.transcript});
  }
  write_manifest(dir / (name + ".tsv"), manifest);
}

std::vector<Utterance> load_split(const std::filesystem::path& manifest_path) {
  const Manifest manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<Utterance> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) {
    const Checkpoint feat = load_checkpoint(base / e.feature_path);
    out.push_back({e.utt_id, feat.matrix("feat"), e.transcript});
  }
  return out;
}

void write_reference(const std::filesystem::path& path, const std::vector<Utterance>& utts) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& u : utts) out << u.id << '\t' << join_tokens(u.transcript) << '\n';
}

void write_lm_text(const std::filesystem::path& path, const std::vector<TokenSeq>& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& seq : text) out << join_tokens(seq) << '\n';
}

std::vector<TokenSeq> read_lm_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<TokenSeq> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      TokenSeq seq = parse_tokens(line);
      if (!seq.empty()) out.push_back(std::move(seq));
    } catch (const FormatError& err) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  write_split(dir, "train", corpus.train);
  write_split(dir, "dev", corpus.dev);
  write_split(dir, "test", corpus.test);
  write_split(dir, "pretrain", corpus.pretrain);
  write_reference(dir / "dev.ref", corpus.dev);
  write_reference(dir / "test.ref", corpus.test);
  write_lm_text(dir / "lm.txt", corpus.lm_text);
}

}  // namespace preformer
