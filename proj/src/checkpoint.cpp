#include "that/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace that {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

const Tensor<float>* Checkpoint::find(const std::string& name) const noexcept {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Tensor<float>& Checkpoint::at(const std::string& name) const {
  const auto* t = find(name);
  if (t == nullptr) fail(ErrorCode::format, "checkpoint lacks tensor '" + name + "'");
  return *t;
}

void Checkpoint::add(std::string name, Tensor<float> value) {
  tensors.push_back({std::move(name), std::move(value)});
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorCode::truncated_file, "checkpoint ends unexpectedly");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void copy(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  put_bytes(out, "THAT", 4);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.descriptor.size()));
  put_bytes(out, ckpt.descriptor.data(), ckpt.descriptor.size());
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    put_bytes(out, t.name.data(), t.name.size());
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    put_bytes(out, t.value.data().data(), t.value.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.copy(magic, 4);
  if (std::memcmp(magic, "THAT", 4) != 0) {
    fail(ErrorCode::bad_magic, "not a checkpoint (magic mismatch)");
  }
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    fail(ErrorCode::bad_magic,
         "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.descriptor.resize(r.u32());
  r.copy(ckpt.descriptor.data(), ckpt.descriptor.size());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(r.u32());
    r.copy(t.name.data(), t.name.size());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(shape_size(shape));
    r.copy(data.data(), data.size() * sizeof(float));
    t.value = Tensor<float>(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) fail(ErrorCode::format, "trailing bytes after checkpoint");
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::string& path,
                       const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::io, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::io, "cannot rename onto '" + path + "'");
  }
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    fail(ErrorCode::internal, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string file_sha256(const std::string& path) {
  return sha256_hex(read_file(path));
}

}  // namespace that
