#pragma once

#include <stdexcept>
#include <string>

namespace dfusion {

// Base class for every error raised by the library. The `kind()` tag is what
// the CLI maps to exit codes and what tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what);
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DFUSION_DECLARE_ERROR(Name, tag)                                 \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

DFUSION_DECLARE_ERROR(ValidationError, "validation")
DFUSION_DECLARE_ERROR(EditError, "edit")
DFUSION_DECLARE_ERROR(ShapeError, "shape")
DFUSION_DECLARE_ERROR(NumericError, "numeric")
DFUSION_DECLARE_ERROR(UsageError, "usage")
DFUSION_DECLARE_ERROR(ConfigError, "config")
DFUSION_DECLARE_ERROR(IoError, "io")

#undef DFUSION_DECLARE_ERROR

}  // namespace dfusion
