// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pairlm {

/// Base class for all pairlm errors. Subclasses map onto CLI exit codes:
/// ConfigError/UsageError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad model shape, incompatible arch/objective, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed caller input (bad token id, empty text, overlength sequence).
class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(msg) {}
};

/// Corpus/checkpoint/manifest integrity failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Non-finite values detected where finite results are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// API misuse (backward on a non-scalar, continuation in the same direction).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

}  // namespace pairlm
