#pragma once

#include <stdexcept>
#include <string>

namespace histmix {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
  usage,       // caller violated a precondition (bad sizes, mismatched inputs)
  domain,      // value outside its mathematical domain
  size,        // a size guard tripped (partition too fine, M^3 too large)
  config,      // malformed configuration or scenario file
  data,        // malformed dataset or serialized object
  estimation,  // the estimator could not produce a finite answer
  singular,    // information matrix singular or ill-conditioned
  selection,   // no candidate partition could be scored
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::domain: return "domain";
    case ErrorKind::size: return "size";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::estimation: return "estimation";
    case ErrorKind::singular: return "singular";
    case ErrorKind::selection: return "selection";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace histmix
