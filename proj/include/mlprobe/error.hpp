#pragma once

#include <stdexcept>
#include <string>

namespace mlprobe {

/// Bad or inconsistent input data: malformed files, missing manifest
/// entries, label/embedding mismatches. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// PRBE container decoding failures.
class FormatError : public DataError {
public:
  enum class Kind { bad_magic, unsupported_version, unsupported_dtype, truncated, non_finite, io };

  FormatError(Kind kind, const std::string &what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

/// Shape or argument contract violated by the caller.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

} // namespace mlprobe
