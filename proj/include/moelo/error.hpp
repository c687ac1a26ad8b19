#pragma once

#include <stdexcept>
#include <string>

namespace moelo {

// Every failure raised by the library derives from Error so callers can catch
// one type at the boundary (the CLI maps these onto exit codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MOELO_DEFINE_ERROR(Name)            \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

MOELO_DEFINE_ERROR(ShapeError);
MOELO_DEFINE_ERROR(StateError);
MOELO_DEFINE_ERROR(NumericError);
MOELO_DEFINE_ERROR(DegenerateInputError);
MOELO_DEFINE_ERROR(GeometryError);
MOELO_DEFINE_ERROR(RegistryError);
MOELO_DEFINE_ERROR(CapacityError);
MOELO_DEFINE_ERROR(PlanError);
MOELO_DEFINE_ERROR(DataError);
MOELO_DEFINE_ERROR(ConfigError);

#undef MOELO_DEFINE_ERROR

// Parse failures carry the offending line so messages can point at it.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace moelo
