#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mde {

inline constexpr const char* kVersion = "0.1.0";

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreements.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid argument values (ratios, task combinations, region names...).
struct ParameterError : Error {
  using Error::Error;
};

// API contract violations (non-scalar loss, double backward...).
struct ContractError : Error {
  using Error::Error;
};

// Invalid run/model configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input files.
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string format_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace mde

#define MDE_THROW(ExcType, ...) throw ExcType(::mde::format_msg(__VA_ARGS__))

#define MDE_CHECK(cond, ExcType, ...)       \
  do {                                      \
    if (!(cond)) MDE_THROW(ExcType, __VA_ARGS__); \
  } while (0)
