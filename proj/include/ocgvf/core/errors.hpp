#pragma once

#include <stdexcept>
#include <string>

namespace ocgvf {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace ocgvf
