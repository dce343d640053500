#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trident {

using Real = double;
using Dims = std::vector<std::size_t>;

// Every rejected precondition in the library surfaces as this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(concat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool condition, Args&&... args) {
  if (!condition) fail(std::forward<Args>(args)...);
}

inline std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline std::string to_string(const Dims& dims) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) oss << ',';
    oss << dims[i];
  }
  oss << ']';
  return oss.str();
}

}  // namespace trident
