#pragma once

#include <stdexcept>
#include <string>

namespace merf {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  schema = 3,
  parse = 4,
  empty_input = 5,
  consistency = 6,
  config = 7,
  shape = 8,
  fit = 9,
  io = 10,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::empty_input: return "empty-input error";
    case ErrorKind::consistency: return "consistency error";
    case ErrorKind::config: return "config error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::fit: return "fit error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class KindedError : public Error {
 public:
  explicit KindedError(const std::string& what) : Error(K, what) {}
};

using SchemaError = KindedError<ErrorKind::schema>;
using ParseError = KindedError<ErrorKind::parse>;
using EmptyInputError = KindedError<ErrorKind::empty_input>;
using ConsistencyError = KindedError<ErrorKind::consistency>;
using ConfigError = KindedError<ErrorKind::config>;
using ShapeError = KindedError<ErrorKind::shape>;
using FitError = KindedError<ErrorKind::fit>;
using IoError = KindedError<ErrorKind::io>;

}  // namespace merf
