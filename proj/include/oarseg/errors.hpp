#pragma once

#include <stdexcept>
#include <string>

namespace oarseg {

// Base for every error the library raises. The CLI prints what() on one line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define OARSEG_DEFINE_ERROR(Name)                                \
  class Name : public Error {                                    \
   public:                                                       \
    using Error::Error;                                          \
    const char* kind() const noexcept override { return #Name; } \
  };

OARSEG_DEFINE_ERROR(DimsError)
OARSEG_DEFINE_ERROR(ShapeError)
OARSEG_DEFINE_ERROR(RangeError)
OARSEG_DEFINE_ERROR(ResampleError)
OARSEG_DEFINE_ERROR(DownsampleError)
OARSEG_DEFINE_ERROR(EmptyStructureError)
OARSEG_DEFINE_ERROR(EmptySetError)
OARSEG_DEFINE_ERROR(ConfigError)
OARSEG_DEFINE_ERROR(TrainError)
OARSEG_DEFINE_ERROR(ParseError)
OARSEG_DEFINE_ERROR(CorruptModelError)
OARSEG_DEFINE_ERROR(SpecError)
OARSEG_DEFINE_ERROR(IoError)

#undef OARSEG_DEFINE_ERROR

}  // namespace oarseg
