#pragma once

#include <stdexcept>
#include <string>

namespace foodweb {

// Input file could not be parsed (bad CSV cell, wrong shape, ...).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inputs parsed but violate a model/config precondition.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside the sampler (non-PD precision, etc.).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace foodweb
