#pragma once

#include <stdexcept>
#include <string>

namespace ctfr {

// Bad run configuration (unknown keys, constraint violations such as k > k_c).
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated on-disk artifacts (corpus, checkpoint, index,
// encodings). The CLI maps this to exit code 3.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ctfr
