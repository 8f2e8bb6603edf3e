// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace testam {

/// Broad failure classes. The C API maps each one onto a status code, and the
/// CLI maps those onto process exit codes.
enum class ErrorKind {
  InvalidArgument,
  Config,
  Io,
  Format,
  Numeric,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string &what,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!cond)
    throw Error(kind, what);
}

} // namespace testam
