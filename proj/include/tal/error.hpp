// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tal {

/// Exception carrying a machine-readable rule/error code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

namespace errc {
inline constexpr const char* kPrecondition = "precondition";
inline constexpr const char* kNotFound = "not-found";
inline constexpr const char* kMalformed = "malformed-record";
inline constexpr const char* kEmptyCorpus = "empty-corpus";
inline constexpr const char* kNonFinite = "non-finite-loss";
inline constexpr const char* kShapeMismatch = "shape-mismatch";
inline constexpr const char* kUnknownTarget = "unknown-target";
inline constexpr const char* kConflict = "conflict";
inline constexpr const char* kIo = "io";
inline constexpr const char* kUnavailable = "backend-unavailable";
}  // namespace errc

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(errc::kPrecondition, message);
}

}  // namespace tal
