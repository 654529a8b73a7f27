#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dwd {

// Every failure carries a kind so the CLI can map it to one exit code and a
// stable error prefix.
enum class ErrorKind {
  shape,             // dimension or role mismatch
  input,             // bad user data (missing images, unknown layer, ...)
  numeric,           // non-finite values, solver non-convergence
  degenerate,        // all-zero operand where a direction is required
  undefined_metric,  // relative error against an all-zero reference
  io,                // filesystem failure
  format_version,    // container version mismatch
  checksum,          // CRC mismatch
  truncated,         // buffer shorter than the manifest declares
  malformed,         // manifest does not parse or violates the schema
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::input: return "input";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::undefined_metric: return "undefined-metric";
    case ErrorKind::io: return "io";
    case ErrorKind::format_version: return "version";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::malformed: return "malformed";
  }
  return "unknown";
}

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

}  // namespace dwd
