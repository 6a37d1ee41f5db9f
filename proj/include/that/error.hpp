#pragma once

#include <stdexcept>
#include <string>

namespace that {

// Values are part of the C ABI (see c_api.h); append only.
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 1,
  shape_mismatch = 2,
  zero_norm = 3,
  unsupported_primitive = 4,
  invalid_label = 5,
  empty_negatives = 6,
  not_a_distribution = 7,
  zero_divergence = 8,
  dim_mismatch = 9,
  empty_gallery = 10,
  invalid_k = 11,
  bad_magic = 12,
  truncated_file = 13,
  count_mismatch = 14,
  io = 15,
  config = 16,
  internal = 17,
  format = 18,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) throw Error(code, what);
}

}  // namespace that
