#include "hypsel/error.hpp"

namespace hypsel {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::decode: return "decode";
    case ErrorKind::schema: return "schema";
    case ErrorKind::version: return "version";
    case ErrorKind::io: return "io";
    case ErrorKind::training: return "training";
    case ErrorKind::service: return "service";
    case ErrorKind::selector_aborted: return "selector_aborted";
  }
  return "unknown";
}

}  // namespace hypsel
