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
#include <string>
#include <vector>

#include "preformer/ctc.hpp"
#include "preformer/model.hpp"
#include "preformer/tensor.hpp"

namespace preformer {

struct Utterance {
  std::string id;
  Matrix feats;  // [T x d_feat]
  TokenSeq transcript;
};

struct CorpusConfig {
  int vocab_size = 16;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;
  /// Disjoint split used to CTC-pretrain donor encoders.
  int n_pretrain = 2000;
  int n_lm = 2000;
  std::uint64_t seed = 1;
  double noise_sigma = 0.3;
  int frames_min = 8;
  int frames_max = 12;
  int len_min = 3;
  int len_max = 12;
  int markov_order = 1;
  int d_feat = 8;
  /// Concentration of the Dirichlet rows of the transition table.
  double dirichlet_alpha = 0.5;
  /// Whether a token may follow itself.
  bool allow_repeats = false;

  void validate() const;
};

/// Token-sequence source shared by the acoustic splits and the LM text.
class MarkovChain {
 public:
  MarkovChain(int n_chars, int order, double alpha, bool allow_repeats, Rng& rng);

  TokenSeq sample(int length, Rng& rng) const;
  /// Probability of `next` after `history` (only the last `order` tokens matter).
  double prob(std::span<const int> history, int next) const;
  int order() const { return order_; }

 private:
  std::size_t context(std::span<const int> history) const;

  int n_chars_;
  int order_;
  Matrix table_;  // [contexts x n_chars]
};

struct Corpus {
  Vocab vocab;
  Matrix prototypes;  // [n_chars x d_feat]
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  std::vector<Utterance> pretrain;
  std::vector<TokenSeq> lm_text;
};

/// Deterministic synthetic frames->tokens corpus. Each token has a fixed
/// prototype feature vector; an utterance repeats the prototype of each token
/// for a random number of frames and adds Gaussian noise. Splits draw from
/// independent seed streams.
Corpus gen_corpus(const CorpusConfig& cfg);

/// Nearest-prototype label per frame, then merge runs (zero-noise oracle).
TokenSeq nearest_prototype_decode(const Matrix& feats, const Matrix& prototypes);

// Files

struct ManifestEntry {
  std::string utt_id;
  std::string feature_path;  // relative to the manifest's directory
  TokenSeq transcript;
};

using Manifest = std::vector<ManifestEntry>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string join_tokens(std::span<const int> tokens);
TokenSeq parse_tokens(const std::string& text);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Writes `<dir>/<name>.tsv` plus one feature checkpoint per utterance under `<dir>/feats/`.
void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<Utterance>& utts);
std::vector<Utterance> load_split(const std::filesystem::path& manifest_path);

/// `utt_id<TAB>tokens` reference file.
void write_reference(const std::filesystem::path& path, const std::vector<Utterance>& utts);

/// One space-joined token sequence per line.
void write_lm_text(const std::filesystem::path& path, const std::vector<TokenSeq>& text);
std::vector<TokenSeq> read_lm_text(const std::filesystem::path& path);

/// Writes every split, the reference files and the LM text into `dir`.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

}  // namespace preformer
