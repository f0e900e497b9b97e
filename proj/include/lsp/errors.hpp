#pragma once

#include <stdexcept>
#include <string>

namespace lsp {

// Raised by centroid() and anything else that needs at least one covered pixel.
class EmptyMaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was called on a state it cannot continue from, e.g. a query
// position that has left its confinement box.
class InvalidStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class ParseErrorKind {
  kIo,
  kMalformedHeader,
  kUnsupportedMaxval,
  kTruncated,
  kMissingSidecar,
  kBadSidecar,
  kUnknownInstanceClass,
  kBadRecord,
};

inline const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::kIo: return "io";
    case ParseErrorKind::kMalformedHeader: return "malformed_header";
    case ParseErrorKind::kUnsupportedMaxval: return "unsupported_maxval";
    case ParseErrorKind::kTruncated: return "truncated";
    case ParseErrorKind::kMissingSidecar: return "missing_sidecar";
    case ParseErrorKind::kBadSidecar: return "bad_sidecar";
    case ParseErrorKind::kUnknownInstanceClass: return "unknown_instance_class";
    case ParseErrorKind::kBadRecord: return "bad_record";
  }
  return "unknown";
}

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

}  // namespace lsp
