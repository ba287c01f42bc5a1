#pragma once

// Population and subgroup estimates from cell-count draws and cell-mean draws.
//
// Every estimator produces one value per draw for each estimand ("overall"
// first, then the subgroups in order) and summarizes the draws by their mean,
// sample sd and type-7 2.5/97.5 percentiles.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emrp/data_model.hpp"
#include "emrp/synthpop.hpp"

namespace emrp::est {

inline constexpr const char* kOverall = "overall";

struct EstimandDraws {
  std::string estimand;
  std::vector<double> values;  // defined draws only
  std::size_t skipped = 0;     // draws where the subgroup had zero mass
};

struct PairingOptions {
  std::uint64_t seed = 1;
  // Shuffle each stream once before pairing by index. Off pairs row k with row k.
  bool shuffle = true;
  // Fraction of skipped draws above which estimation fails.
  double max_skip_fraction = 0.01;
};

// Per-draw estimands for K = min(L, S) paired draws. Overall: sum_j N_j theta_j / N;
// subgroup g: sum_{j in g} N_j theta_j / sum_{j in g} N_j.
std::vector<EstimandDraws> emrp_draws(const CountDraws& counts, const CellMeanDraws& means,
                                      std::span<const SubgroupDef> subgroups,
                                      const PairingOptions& options = {});

// As emrp_draws with the same known counts in every draw.
std::vector<EstimandDraws> mrp_draws(std::span<const double> counts, const CellMeanDraws& means,
                                     std::span<const SubgroupDef> subgroups);

// Throws EstimationError when more than `max_skip_fraction` of the draws of an
// estimand were skipped.
EstimateSummary summarize(const std::string& method, const EstimandDraws& draws,
                          double max_skip_fraction = 0.01);

std::vector<EstimateSummary> emrp_estimate(const std::string& method, const CountDraws& counts,
                                           const CellMeanDraws& means,
                                           std::span<const SubgroupDef> subgroups,
                                           const PairingOptions& options = {});

std::vector<EstimateSummary> mrp_estimate(const std::string& method, std::span<const double> counts,
                                          const CellMeanDraws& means,
                                          std::span<const SubgroupDef> subgroups);

// Law-of-total-variance split of an estimand over a G x R grid: each of G
// count draws is combined with R cell-mean draws. All three terms use the
// 1/n convention so between + within == total up to rounding.
struct VarianceDecomposition {
  double between = 0.0;  // variance over g of the mean over r
  double within = 0.0;   // mean over g of the variance over r
  double total = 0.0;
};

// `grid` is row-major G x R. Throws ValidationError for G < 2 or R < 1.
VarianceDecomposition decompose_variance(std::span<const double> grid, std::size_t groups,
                                         std::size_t per_group);

// Builds the grid from the first G count draws, combining draw g with mean
// draws g*R .. g*R+R-1 (wrapping around S), for the cells in `mask`
// (all cells when empty).
VarianceDecomposition emrp_variance_decomposition(const CountDraws& counts, const CellMeanDraws& means,
                                                  std::span<const double> mask, std::size_t groups = 50,
                                                  std::size_t per_group = 20);

// Outcome means read directly off synthetic populations generated with y.
std::vector<EstimandDraws> wfpbb_direct_draws(std::span<const synthpop::SyntheticPopulation> pops,
                                              std::span<const SubgroupDef> subgroups);

std::vector<EstimateSummary> wfpbb_direct_estimate(const std::string& method,
                                                   std::span<const synthpop::SyntheticPopulation> pops,
                                                   std::span<const SubgroupDef> subgroups,
                                                   double max_skip_fraction = 0.01);

// Sample proportions with Wald intervals p +- 1.96 sqrt(p (1 - p) / n_g).
// `se` is the Wald standard error and `n_draws` the subgroup sample size.
std::vector<EstimateSummary> unweighted_estimate(const WeightedSample& sample, const CellFrame& frame,
                                                 std::span<const SubgroupDef> subgroups);

// JSON array of {method, estimand, estimate, se, ci_lower, ci_upper, n_draws, skipped_draws}.
std::string to_json(std::span<const EstimateSummary> summaries);
std::vector<EstimateSummary> from_json(const std::string& text);

}  // namespace emrp::est
