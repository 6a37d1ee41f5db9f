#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "that/tensor.hpp"

namespace that {

// Binary container shared by model checkpoints, memory-bank state and
// galleries. Layout (all integers little-endian u32):
//
//   "THAT" | version | descriptor length | descriptor (UTF-8 key=value text)
//   | tensor count | records...
//   record: name length | name | rank | dims[rank] | float32 LE data
struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string descriptor;
  std::vector<NamedTensor> tensors;

  const Tensor<float>* find(const std::string& name) const noexcept;
  const Tensor<float>& at(const std::string& name) const;
  void add(std::string name, Tensor<float> value);
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Whole-file helpers. write_file_atomic writes "<path>.tmp" and renames it
// over path, so readers never observe a partial file.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path,
                       const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::string& path, const std::string& text);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string file_sha256(const std::string& path);

}  // namespace that
