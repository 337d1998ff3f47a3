#pragma once

#include <stdexcept>
#include <string>

namespace nvmag {

/// Failure categories. The CLI maps each one to its own exit code.
enum class ErrorKind {
  kInvalidInput,   // bad arguments, out-of-range parameters, malformed files
  kInconsistent,   // data that no model state can explain
  kFitFailure,     // peak detection / spectrum fitting failed
  kDegenerate,     // solution is not unique
  kNonConvergence, // iterative solver gave up
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace nvmag
