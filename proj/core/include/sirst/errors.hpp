#pragma once

#include <stdexcept>
#include <string>

namespace sirst {

// Broad error classes. The CLI maps these onto distinct exit codes.
enum class ErrorKind {
  Config,
  InvalidShape,
  InvalidInput,
  StaleTape,
  DependencyOrder,
  Generation,
  Io,
  Numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SIRST_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

SIRST_DEFINE_ERROR(ConfigError, Config)
SIRST_DEFINE_ERROR(InvalidShapeError, InvalidShape)
SIRST_DEFINE_ERROR(InvalidInputError, InvalidInput)
SIRST_DEFINE_ERROR(StaleTapeError, StaleTape)
SIRST_DEFINE_ERROR(DependencyOrderError, DependencyOrder)
SIRST_DEFINE_ERROR(GenerationError, Generation)
SIRST_DEFINE_ERROR(IoError, Io)
SIRST_DEFINE_ERROR(NumericError, Numeric)

#undef SIRST_DEFINE_ERROR

}  // namespace sirst
