#pragma once

// Cell index spaces, sample and margin containers, and draw matrices.
//
// All indices are 0-based in memory. Joint cells are laid out row-major in
// (Z-cell, X-level): j = m * C + c. File formats use 1-based indices and the
// I/O layer converts.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace emrp {

class CellFrame {
 public:
  CellFrame() = default;

  std::size_t z_cells() const noexcept { return z_cells_; }
  std::size_t x_levels() const noexcept { return x_levels_; }
  std::size_t joint_cells() const noexcept { return z_cells_ * x_levels_; }

  std::size_t joint_index(std::size_t m, std::size_t c) const noexcept { return m * x_levels_ + c; }
  std::size_t z_of(std::size_t j) const noexcept { return j / x_levels_; }
  std::size_t x_of(std::size_t j) const noexcept { return j % x_levels_; }

  std::span<const double> margins() const noexcept { return margins_; }
  double margin(std::size_t m) const { return margins_.at(m); }
  double population() const noexcept { return population_; }

  friend CellFrame build_cell_frame(std::size_t, std::size_t, std::vector<double>);

 private:
  std::size_t z_cells_ = 0;
  std::size_t x_levels_ = 0;
  std::vector<double> margins_;
  double population_ = 0.0;
};

// Throws ValidationError when M or C is zero, a margin is negative or not an
// integer, or the margin count differs from M.
CellFrame build_cell_frame(std::size_t z_cells, std::size_t x_levels, std::vector<double> margins);

struct SampleUnit {
  std::size_t z = 0;  // Z-cell
  std::size_t x = 0;  // X level
  int y = 0;          // binary outcome
  double w = 1.0;     // base weight
};

class WeightedSample {
 public:
  WeightedSample() = default;
  // Validates every unit against the frame's index ranges.
  WeightedSample(const CellFrame& frame, std::vector<SampleUnit> units);

  std::size_t size() const noexcept { return units_.size(); }
  const SampleUnit& operator[](std::size_t i) const { return units_[i]; }
  std::span<const SampleUnit> units() const noexcept { return units_; }

  // Replaces every base weight; size must match.
  void set_weights(std::span<const double> w);

  // n^z_m, length M.
  std::vector<std::size_t> z_counts(const CellFrame& frame) const;
  // n^{z,x}_{m,c}, length J.
  std::vector<std::size_t> joint_counts(const CellFrame& frame) const;

 private:
  std::vector<SampleUnit> units_;
};

// w_i = N^z_{m[i]} / n^z_{m[i]}. Throws EmptyCellError for the first Z-cell with
// a positive margin and no units; ValidationError for units in a zero-margin cell.
std::vector<double> construct_base_weights(const WeightedSample& sample, const CellFrame& frame);

struct CollapseRecord {
  std::size_t from = 0;
  std::size_t to = 0;
};

// Opt-in empty-cell policy: moves the margin of every sampled-empty Z-cell onto
// the nearest nonempty Z-cell index (ties go to the lower index). Returns the
// adjusted frame; the merges are appended to `log` when given.
CellFrame collapse_empty_cells(const CellFrame& frame, const WeightedSample& sample,
                               std::vector<CollapseRecord>* log = nullptr);

// Row-major L x J matrix of joint cell count draws.
class CountDraws {
 public:
  CountDraws() = default;
  CountDraws(std::size_t draws, std::size_t cells, double population);

  std::size_t draws() const noexcept { return draws_; }
  std::size_t cells() const noexcept { return cells_; }
  double population() const noexcept { return population_; }

  std::span<double> row(std::size_t l) { return {values_.data() + l * cells_, cells_}; }
  std::span<const double> row(std::size_t l) const { return {values_.data() + l * cells_, cells_}; }
  std::span<const double> values() const noexcept { return values_; }

  // Rescales every row to sum to the population total.
  void normalize();

 private:
  std::size_t draws_ = 0;
  std::size_t cells_ = 0;
  double population_ = 0.0;
  std::vector<double> values_;
};

// Row-major S x J matrix of per-cell outcome means in [0, 1].
class CellMeanDraws {
 public:
  CellMeanDraws() = default;
  CellMeanDraws(std::size_t draws, std::size_t cells);

  std::size_t draws() const noexcept { return draws_; }
  std::size_t cells() const noexcept { return cells_; }

  std::span<double> row(std::size_t s) { return {values_.data() + s * cells_, cells_}; }
  std::span<const double> row(std::size_t s) const { return {values_.data() + s * cells_, cells_}; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t draws_ = 0;
  std::size_t cells_ = 0;
  std::vector<double> values_;
};

struct SubgroupDef {
  std::string name;
  std::vector<std::size_t> cells;  // joint cell indices

  // 0/1 mask of length `joint_cells`.
  std::vector<double> mask(std::size_t joint_cells) const;
};

struct EstimateSummary {
  std::string method;
  std::string estimand;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::size_t n_draws = 0;
  std::size_t skipped_draws = 0;
};

}  // namespace emrp
