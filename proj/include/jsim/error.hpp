#ifndef JSIM_ERROR_HPP_
#define JSIM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace jsim {

// Base class for every domain error raised by the framework. Each module
// derives the errors named in its contract so callers can catch precisely.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Logical-time wait that expired before its predicate held.
class Timeout : public Error {
 public:
  explicit Timeout(const std::string& what) : Error("timeout: " + what) {}
};

}  // namespace jsim

#endif  // JSIM_ERROR_HPP_
