#pragma once

#include <stdexcept>
#include <string>

namespace ecl {

/// Bad shapes, bad config keys, violated preconditions.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite ones are required (diverged training, NaN gradients).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ecl
