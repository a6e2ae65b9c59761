#pragma once

#include <stdexcept>
#include <string>

namespace multicos {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MULTICOS_DEFINE_ERROR(Name)            \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(std::string(#Name ": ") + what) {} \
  }

MULTICOS_DEFINE_ERROR(ShapeMismatch);
MULTICOS_DEFINE_ERROR(InvalidGroups);
MULTICOS_DEFINE_ERROR(NonScalarLoss);
MULTICOS_DEFINE_ERROR(NonPositiveDelta);
MULTICOS_DEFINE_ERROR(LengthMismatch);
MULTICOS_DEFINE_ERROR(InvalidReduction);
MULTICOS_DEFINE_ERROR(DomainError);
MULTICOS_DEFINE_ERROR(InvalidDimensions);
MULTICOS_DEFINE_ERROR(IoError);
MULTICOS_DEFINE_ERROR(MalformedHeader);
MULTICOS_DEFINE_ERROR(ConfigError);
MULTICOS_DEFINE_ERROR(MissingModality);

#undef MULTICOS_DEFINE_ERROR

}  // namespace multicos
