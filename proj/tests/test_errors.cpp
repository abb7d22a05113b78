#include <doctest.h>

#include <string>

#include "tensegrity/errors.hpp"

using namespace tensegrity;

TEST_CASE("errors carry their kind and a prefixed message") {
  try {
    throw SequenceTooShort("50 < 100");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::sequence_too_short);
    CHECK(std::string(e.what()) == "SequenceTooShort: 50 < 100");
  }
}

TEST_CASE("every kind has a distinct name and a nonzero exit code") {
  const ErrorKind kinds[] = {ErrorKind::geometry_mismatch, ErrorKind::closure_violation, ErrorKind::sequence_too_short,
                             ErrorKind::format_error,      ErrorKind::io_error,          ErrorKind::shape_mismatch,
                             ErrorKind::not_scalar,        ErrorKind::empty_dataset,     ErrorKind::version_mismatch,
                             ErrorKind::corrupt_checkpoint, ErrorKind::config_invalid,   ErrorKind::non_finite_input,
                             ErrorKind::length_mismatch};
  for (std::size_t i = 0; i < std::size(kinds); ++i) {
    CHECK(static_cast<int>(kinds[i]) != 0);
    for (std::size_t j = i + 1; j < std::size(kinds); ++j) {
      CHECK(std::string(to_string(kinds[i])) != std::string(to_string(kinds[j])));
      CHECK(static_cast<int>(kinds[i]) != static_cast<int>(kinds[j]));
    }
  }
}
