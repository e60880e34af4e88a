#pragma once

#include <stdexcept>
#include <string>

namespace cellmt {

// Base for every error raised by the library. Callers that only need to
// report a failure can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that violates a documented precondition or invariant.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Problems reading or writing dataset, checkpoint, and report files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss; the message carries the diagnostic dump.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace cellmt
