#pragma once

#include <stdexcept>
#include <string>

namespace dormant {

enum class ErrorKind {
  Dimension,
  Index,
  Usage,
  Spec,
  Format,
  Consistency,
  Bounds,
  Parameter,
  Numeric,
  Training,
  Detection,
  Io,
  Config,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind` drives C API status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dormant
