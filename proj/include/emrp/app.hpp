#pragma once

// Command-line front end: `simulate`, `estimate` and `plot`.
//
// Exit codes: 0 success, 2 user or configuration error, 3 data condition
// (empty sampled Z-cell, undefined estimand, urn underflow), 4 internal failure.

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "emrp/bayes_glm.hpp"
#include "emrp/data_model.hpp"
#include "emrp/io.hpp"
#include "emrp/random.hpp"

namespace emrp::app {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUserError = 2, kDataError = 3, kInternalError = 4 };

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Z-cells as the cross of named factors, the first varying slowest.
struct FactorLayout {
  std::vector<std::string> names;
  std::vector<std::size_t> levels;

  std::size_t cells() const;
  // 0-based level of factor f in Z-cell m.
  std::size_t level(std::size_t f, std::size_t m) const;
  std::size_t z_cell(std::span<const std::size_t> factor_levels) const;
  // Index of a factor, or names.size() when absent.
  std::size_t find(const std::string& name) const;
};

// "age:3,sex:2,..." or, when empty, one factor named z_cat with `z_cells` levels.
FactorLayout parse_factors(const std::string& spec, std::size_t z_cells);

// A varying-intercept term over design rows. `term` names one factor, `x`,
// or an interaction such as `x:income`. Rows are joint cells when
// `joint_rows`, else Z-cells (where `x` is not available).
glm::Term make_term(const std::string& term, const FactorLayout& layout, const CellFrame& frame,
                    bool joint_rows);

glm::ModelSpec make_spec(const std::string& terms, const FactorLayout& layout, const CellFrame& frame,
                         bool joint_rows, double prior_scale);

// Predicate of `&`-joined clauses `col==v` or `col!=v` over the factor columns,
// `x` and `z_cat`, with 1-based values. Throws ValidationError on an unknown
// column or malformed clause.
SubgroupDef parse_subgroup(const std::string& name, const std::string& predicate,
                           const FactorLayout& layout, const CellFrame& frame);

// Replaces missing cells ("" or "NA") in each listed column with a value
// drawn uniformly from that column's observed values.
void impute_hotdeck(io::CsvTable& table, std::span<const std::string> columns, Rng& rng);

}  // namespace emrp::app
