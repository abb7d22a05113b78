#include "tensegrity/errors.hpp"

namespace tensegrity {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::geometry_mismatch: return "GeometryMismatch";
    case ErrorKind::closure_violation: return "ClosureViolation";
    case ErrorKind::sequence_too_short: return "SequenceTooShort";
    case ErrorKind::format_error: return "FormatError";
    case ErrorKind::io_error: return "IoError";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::not_scalar: return "NotScalar";
    case ErrorKind::empty_dataset: return "EmptyDataset";
    case ErrorKind::version_mismatch: return "VersionMismatch";
    case ErrorKind::corrupt_checkpoint: return "CorruptCheckpoint";
    case ErrorKind::config_invalid: return "ConfigInvalid";
    case ErrorKind::non_finite_input: return "NonFiniteInput";
    case ErrorKind::length_mismatch: return "LengthMismatch";
  }
  return "Error";
}

}  // namespace tensegrity
