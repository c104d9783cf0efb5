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

#include "preformer/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace preformer {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > size_ - pos_) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(NamedTensor tensor) {
  if (contains(tensor.name)) {
    throw std::invalid_argument("duplicate checkpoint tensor: " + tensor.name);
  }
  std::uint64_t n = 1;
  for (auto d : tensor.shape) n *= d;
  if (n != tensor.data.size()) {
    throw DimensionError("checkpoint tensor " + tensor.name + ": shape does not match payload");
  }
  tensors_.push_back(std::move(tensor));
}

void Checkpoint::add(const std::string& name, const Matrix& value) {
  NamedTensor t{name,
                {static_cast<std::uint64_t>(value.rows()), static_cast<std::uint64_t>(value.cols())},
                std::vector<double>(value.data(), value.data() + value.size())};
  add(std::move(t));
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(tensors_.begin(), tensors_.end(),
                         [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors_.end() ? nullptr : &*it;
}

Matrix Checkpoint::matrix(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (t == nullptr) throw std::out_of_range("checkpoint has no tensor " + name);
  Index rows = 1;
  Index cols = 1;
  if (t->shape.size() == 2) {
    rows = static_cast<Index>(t->shape[0]);
    cols = static_cast<Index>(t->shape[1]);
  } else if (t->shape.size() == 1) {
    cols = static_cast<Index>(t->shape[0]);
  } else if (!t->shape.empty()) {
    throw DimensionError("checkpoint tensor " + name + " has rank " +
                         std::to_string(t->shape.size()) + "; expected 1 or 2");
  }
  Matrix m(rows, cols);
  std::copy(t->data.begin(), t->data.end(), m.data());
  return m;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(t.name);
  return out;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kCheckpointMagic, kMagicSize);
  w.put(static_cast<std::uint32_t>(ckpt.size()));
  for (const NamedTensor& t : ckpt.tensors()) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("tensor path too long: " + t.name);
    if (t.shape.size() > 0xFF) throw std::invalid_argument("tensor rank too large: " + t.name);
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put(kDtypeFloat64);
    w.put(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put(d);
    w.put_bytes(t.data.data(), t.data.size() * sizeof(double));
  }
  const std::uint32_t crc = crc32(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < kMagicSize + 2 * sizeof(std::uint32_t)) {
    throw CheckpointError(Kind::kTruncated, "checkpoint truncated: only " +
                                                std::to_string(bytes.size()) + " bytes");
  }
  // The CRC is verified before anything else is interpreted so that any
  // corruption, including in the header, is reported as such.
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  const std::uint32_t actual = crc32(bytes.data(), body);
  if (stored != actual) {
    throw CheckpointError(Kind::kCrcMismatch, "checkpoint CRC mismatch (stored " +
                                                  std::to_string(stored) + ", computed " +
                                                  std::to_string(actual) + ")");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize) != 0) {
    throw CheckpointError(Kind::kBadMagic, "bad checkpoint magic");
  }

  Reader r(bytes.data() + kMagicSize, body - kMagicSize);
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = r.get<std::uint16_t>("path length");
    const std::uint8_t* name = r.take(len, "path");
    t.name.assign(reinterpret_cast<const char*>(name), len);
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeFloat64) {
      throw CheckpointError(Kind::kFormat, "unknown dtype code " + std::to_string(dtype) +
                                               " for tensor " + t.name);
    }
    const auto rank = r.get<std::uint8_t>("rank");
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<std::uint64_t>("dims"));
      n *= t.shape.back();
    }
    if (n > r.remaining() / sizeof(double)) {
      throw CheckpointError(Kind::kTruncated, "checkpoint truncated in payload of " + t.name);
    }
    t.data.resize(n);
    std::memcpy(t.data.data(), r.take(n * sizeof(double), "payload"), n * sizeof(double));
    if (ckpt.contains(t.name)) {
      throw CheckpointError(Kind::kFormat, "duplicate tensor " + t.name);
    }
    ckpt.add(std::move(t));
  }
  if (r.remaining() != 0) {
    throw CheckpointError(Kind::kFormat,
                          std::to_string(r.remaining()) + " trailing bytes after last tensor");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint to_checkpoint(const ModelParams& params, std::string_view selector) {
  Checkpoint ckpt;
  for (const auto& [path, p] : params) {
    if (path_matches(path, selector)) ckpt.add(path, p.value);
  }
  return ckpt;
}

void assign_from_checkpoint(ModelParams& params, const Checkpoint& ckpt) {
  std::set<std::string> expected;
  for (const auto& [path, p] : params) expected.insert(path);
  std::set<std::string> present;
  for (const auto& t : ckpt.tensors()) present.insert(t.name);
  if (expected != present) {
    std::string diff;
    for (const auto& p : expected) {
      if (!present.count(p)) diff += " -" + p;
    }
    for (const auto& p : present) {
      if (!expected.count(p)) diff += " +" + p;
    }
    throw std::invalid_argument("checkpoint parameter set differs from model:" + diff);
  }
  for (auto& [path, p] : params) {
    Matrix m = ckpt.matrix(path);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw DimensionError("checkpoint tensor " + path + " has shape " + shape_string(m) +
                           ", model expects " + shape_string(p.value));
    }
    p.value = std::move(m);
  }
}

}  // namespace preformer
