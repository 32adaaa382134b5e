#pragma once

#include <stdexcept>
#include <string>

namespace ampgc {

/// Failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
  kConfig,      // malformed input, bad configuration, unrealizable placement
  kPermission,  // affinity or RAPL access denied
  kTarget,      // target process failed to launch or exited abnormally
  kNoHeap,      // heap search exhausted its cap
  kParse,       // malformed record in a structured input stream
  kUnavailable, // requested hardware facility does not exist
  kState,       // operation invalid in the current state
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ampgc
