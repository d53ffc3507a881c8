#pragma once

#include <stdexcept>
#include <string>

namespace sard {

/// Malformed or invariant-violating input data (cohort files, configs, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sard
