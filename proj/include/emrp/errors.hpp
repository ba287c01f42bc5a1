#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emrp {

// Malformed input: bad sizes, out-of-range indices, negative counts.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A Z-margin cell with positive population count but no sampled units.
class EmptyCellError : public std::runtime_error {
 public:
  explicit EmptyCellError(std::size_t z_cell)
      : std::runtime_error("Z-cell " + std::to_string(z_cell + 1) +
                           " has a positive population margin but no sampled units"),
        z_cell_(z_cell) {}

  // 0-based index of the offending Z-cell.
  std::size_t z_cell() const noexcept { return z_cell_; }

 private:
  std::size_t z_cell_;
};

// The weighted Polya urn produced a negative draw probability (a weight below 1).
class UrnUnderflowError : public std::runtime_error {
 public:
  UrnUnderflowError(std::size_t unit, double numerator)
      : std::runtime_error("Polya urn numerator for unit " + std::to_string(unit + 1) +
                           " is negative (" + std::to_string(numerator) +
                           "); enable clamp_nonnegative to floor it at zero"),
        unit_(unit) {}

  std::size_t unit() const noexcept { return unit_; }

 private:
  std::size_t unit_;
};

// A data condition that makes an estimate undefined, such as a subgroup with
// no population mass in too many draws.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace emrp
