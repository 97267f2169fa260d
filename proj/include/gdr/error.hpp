#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gdr {

// Broad failure classes; the CLI maps each one onto a process exit code.
enum class ErrorKind {
  parameter,  // argument outside its documented domain
  input,      // malformed or inconsistent in-memory input
  data,       // dataset / prior file failed validation
  io,         // file could not be read or written
  numerical,  // iteration failed to converge or produced non-finite values
  config      // experiment configuration rejected
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::input: return "input";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const { return kind_; }
  // Short machine-readable tag, e.g. "laplacian-requires-undirected".
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

// Raised when power iteration stops before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(std::string code, const std::string& message, double residual)
      : Error(ErrorKind::numerical, std::move(code), message), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace gdr
