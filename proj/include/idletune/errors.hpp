#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace idletune {

namespace detail {
// %g-style text for messages; std::to_string prints tiny values as 0.000000.
inline std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}
}  // namespace detail

/// An argument fell outside the domain of a model function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The requested failure probability is at or below (1 - xi)^N and cannot
/// be reached by any finite timeout.
class InfeasibleTarget : public std::runtime_error {
 public:
  InfeasibleTarget(const std::string& what, double bound)
      : std::runtime_error(what), bound_(bound) {}

  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

/// The estimator was handed no window with traffic in it.
class CannotInitialize : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Events arrived out of order or outside the window they were assigned to.
class SequencingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace idletune
