#pragma once

#include <stdexcept>
#include <string>

namespace tensegrity {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
  geometry_mismatch = 10,
  closure_violation,
  sequence_too_short,
  format_error,
  io_error,
  shape_mismatch,
  not_scalar,
  empty_dataset,
  version_mismatch,
  corrupt_checkpoint,
  config_invalid,
  non_finite_input,
  length_mismatch,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TENSEGRITY_DEFINE_ERROR(Name, kind_value)                               \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorKind::kind_value, what) {} \
  };

TENSEGRITY_DEFINE_ERROR(GeometryMismatch, geometry_mismatch)
TENSEGRITY_DEFINE_ERROR(ClosureViolation, closure_violation)
TENSEGRITY_DEFINE_ERROR(SequenceTooShort, sequence_too_short)
TENSEGRITY_DEFINE_ERROR(FormatError, format_error)
TENSEGRITY_DEFINE_ERROR(IoError, io_error)
TENSEGRITY_DEFINE_ERROR(ShapeMismatch, shape_mismatch)
TENSEGRITY_DEFINE_ERROR(NotScalar, not_scalar)
TENSEGRITY_DEFINE_ERROR(EmptyDataset, empty_dataset)
TENSEGRITY_DEFINE_ERROR(VersionMismatch, version_mismatch)
TENSEGRITY_DEFINE_ERROR(CorruptCheckpoint, corrupt_checkpoint)
TENSEGRITY_DEFINE_ERROR(ConfigInvalid, config_invalid)
TENSEGRITY_DEFINE_ERROR(NonFiniteInput, non_finite_input)
TENSEGRITY_DEFINE_ERROR(LengthMismatch, length_mismatch)

#undef TENSEGRITY_DEFINE_ERROR

}  // namespace tensegrity
