// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mangatone {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated (shape mismatch, out-of-range value, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Filesystem or codec failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A non-finite loss or parameter was produced during training.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mangatone
