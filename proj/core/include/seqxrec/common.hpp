#pragma once

// Scalar type, namespace versioning and the exception hierarchy shared by
// every seqxrec module.
//
// The library is built twice: seqxrec_core (32-bit storage, used for
// training) and seqxrec_core64 (64-bit storage, used by gradient checks).
// Each build lives in its own inline namespace so both can be linked into
// one executable.

#include <stdexcept>
#include <string>

#ifndef SEQXREC_DOUBLE
#define SEQXREC_DOUBLE 0
#endif

#if SEQXREC_DOUBLE
#define SEQXREC_PRECISION f64
#else
#define SEQXREC_PRECISION f32
#endif

namespace seqxrec {
inline namespace SEQXREC_PRECISION {}
}  // namespace seqxrec

// Opens a module namespace inside the active precision namespace.
#define SEQXREC_NS seqxrec::inline SEQXREC_PRECISION

namespace SEQXREC_NS {

#if SEQXREC_DOUBLE
using Real = double;
inline constexpr const char* kRealName = "f64";
#else
using Real = float;
inline constexpr const char* kRealName = "f32";
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage ran before the stage that produces its inputs.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace SEQXREC_NS
