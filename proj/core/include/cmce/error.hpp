#pragma once

#include <stdexcept>
#include <string>

namespace cmce {

enum class ErrorKind {
  kDegenerateVector,
  kDimensionMismatch,
  kIo,
  kFormat,
  kInvalidConfig,
  kInsufficientModels,
  kEmptyGallery,
  kEmptyScores,
  kNonFiniteLoss,
};

const char* to_string(ErrorKind kind);

// Base of every error thrown by the library. The kind lets callers (the CLI in
// particular) map failures to exit codes without a cascade of catch blocks.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CMCE_DEFINE_ERROR(Name, Kind)                              \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(Kind, what) {} \
  };

CMCE_DEFINE_ERROR(DegenerateVector, ErrorKind::kDegenerateVector)
CMCE_DEFINE_ERROR(DimensionMismatch, ErrorKind::kDimensionMismatch)
CMCE_DEFINE_ERROR(IoError, ErrorKind::kIo)
CMCE_DEFINE_ERROR(FormatError, ErrorKind::kFormat)
CMCE_DEFINE_ERROR(InvalidConfig, ErrorKind::kInvalidConfig)
CMCE_DEFINE_ERROR(InsufficientModels, ErrorKind::kInsufficientModels)
CMCE_DEFINE_ERROR(EmptyGallery, ErrorKind::kEmptyGallery)
CMCE_DEFINE_ERROR(EmptyScores, ErrorKind::kEmptyScores)
CMCE_DEFINE_ERROR(NonFiniteLoss, ErrorKind::kNonFiniteLoss)

#undef CMCE_DEFINE_ERROR

}  // namespace cmce
