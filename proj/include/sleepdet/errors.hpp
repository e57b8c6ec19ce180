#pragma once

#include <stdexcept>
#include <string>

namespace sleepdet {

// Exit-code mapping for the CLI: validation/format -> 2, numerical -> 3.

/// Bad input data or an inconsistent request (label out of range, apnea
/// while awake, record longer than the pad target, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed on-disk container (missing channel file, bad manifest line).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem failure (unwritable path, short read).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sleepdet
