#pragma once

#include <stdexcept>
#include <string>

namespace egodir {

/// Failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  Domain,        // argument outside the mathematical domain of an operation
  Shape,         // dimension mismatch between operands
  Config,        // invalid configuration or parameters
  Numeric,       // NaN/Inf, divergence, underdetermined systems
  MissingInput,  // file or asset not found
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace egodir
