#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcl {

// Base of every error thrown by the library. Subclasses exist so callers
// (and the CLI exit-code mapping) can dispatch on the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DCL_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

DCL_DEFINE_ERROR(ShapeMismatch)
DCL_DEFINE_ERROR(NonIntegralOutput)
DCL_DEFINE_ERROR(NonFinite)
DCL_DEFINE_ERROR(Overflow)
DCL_DEFINE_ERROR(ShapeChainError)
DCL_DEFINE_ERROR(StaleCache)
DCL_DEFINE_ERROR(NegativeInput)
DCL_DEFINE_ERROR(PreconditionViolated)
DCL_DEFINE_ERROR(InvalidConfig)
DCL_DEFINE_ERROR(BadMagic)
DCL_DEFINE_ERROR(TruncatedFile)
DCL_DEFINE_ERROR(DimMismatch)
DCL_DEFINE_ERROR(UnknownPreset)
DCL_DEFINE_ERROR(MissingDigitLabels)
DCL_DEFINE_ERROR(NoDclBlock)
DCL_DEFINE_ERROR(UnknownLayer)
DCL_DEFINE_ERROR(SchemaError)
DCL_DEFINE_ERROR(Divergence)
DCL_DEFINE_ERROR(IoError)

#undef DCL_DEFINE_ERROR

// Architecture-string syntax error; `token` is the 1-based token index.
class ParseError : public Error {
 public:
  ParseError(std::size_t token, const std::string& what)
      : Error("token " + std::to_string(token) + ": " + what), token_(token) {}
  std::size_t token() const noexcept { return token_; }

 private:
  std::size_t token_;
};

}  // namespace dcl
