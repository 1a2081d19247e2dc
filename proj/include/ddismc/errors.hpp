#pragma once

#include <stdexcept>
#include <string>

namespace ddismc {

// A design step has no solution for the given data.
class InfeasibleDesign : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical routine failed to produce a usable result.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ddismc
