#include "detailfusion/common/errors.hpp"

#include <utility>

namespace dfusion {

Error::Error(std::string kind, const std::string& what)
    : std::runtime_error(kind + " error: " + what), kind_(std::move(kind)) {}

}  // namespace dfusion
