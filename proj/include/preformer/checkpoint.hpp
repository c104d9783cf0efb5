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

// Named-tensor container used for model saves, donor checkpoints and feature files.
//
// Layout (all integers little-endian):
//   "PFCKPT1\n"
//   u32 tensor count
//   per tensor: u16 path length, UTF-8 path, u8 dtype (0 = f64), u8 rank,
//               rank x u64 dims, row-major f64 payload
//   u32 CRC-32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "preformer/params.hpp"
#include "preformer/tensor.hpp"

namespace preformer {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kTruncated, kBadMagic, kCrcMismatch, kFormat };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  bool operator==(const NamedTensor&) const = default;
};

class Checkpoint {
 public:
  void add(NamedTensor tensor);
  void add(const std::string& name, const Matrix& value);

  const NamedTensor* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  /// Rank-2 (or rank-1 as 1 x n) tensor as a matrix; throws if missing.
  Matrix matrix(const std::string& name) const;
  std::vector<std::string> names() const;

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  bool operator==(const Checkpoint&) const = default;

 private:
  std::vector<NamedTensor> tensors_;
};

inline constexpr char kCheckpointMagic[] = "PFCKPT1\n";
inline constexpr std::uint8_t kDtypeFloat64 = 0;

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every parameter as a rank-2 tensor, in path order.
Checkpoint to_checkpoint(const ModelParams& params, std::string_view selector = "");

/// Overwrites the values of `params` from `ckpt`. The path sets must match exactly.
void assign_from_checkpoint(ModelParams& params, const Checkpoint& ckpt);

}  // namespace preformer
