#pragma once

#include <stdexcept>
#include <string>

namespace cpreg {

/// Raised for shape mismatches, invalid arguments and malformed inputs.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const std::string& message)
{
  if (!condition) throw Error(message);
}

}  // namespace detail
}  // namespace cpreg
