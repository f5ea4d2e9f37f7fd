#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metalearn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Conforming shapes are violated (operands named in the message).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input values outside an operation's domain (log of non-positive, divide by zero).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the differentiation graph (non-scalar output, detached output).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid experiment or pipeline configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

}  // namespace metalearn
