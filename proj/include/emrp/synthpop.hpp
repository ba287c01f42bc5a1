#pragma once

// Draws of joint population cell counts by the weighted finite-population
// Bayesian bootstrap (WFPBB), per-Z-cell multinomials, and a first-stage
// model for binary X.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "emrp/data_model.hpp"
#include "emrp/random.hpp"

namespace emrp::synthpop {

// Per-unit replicate counts of one Bayesian-bootstrap resample; sums to n.
struct BBReplicate {
  std::vector<std::uint64_t> counts;
};

// Dirichlet(1, ..., 1) unit probabilities, then a multinomial resample of n units.
BBReplicate bayesian_bootstrap(std::size_t n, Rng& rng);

// w^l_i = total * w_i r_i / sum_j w_j r_j. Units with r_i = 0 get weight 0.
std::vector<double> recalibrate_weights(std::span<const double> base_weights,
                                        std::span<const std::uint64_t> replicate, double total);

// Sequential weighted Polya urn over the units with positive weight.
//
// Draw k (1-based) selects unit i with probability
//   (w_i - 1 + l_i * (N - n) / n) / (N - n + (k - 1) * (N - n) / n)
// where l_i counts earlier selections of unit i and n is the number of units
// in the urn. With clamp_nonnegative, w_i - 1 is floored at zero and the
// denominator is the sum of the floored numerators.
class PolyaUrn {
 public:
  PolyaUrn(std::vector<double> weights, double population, bool clamp_nonnegative = false);

  std::size_t units() const noexcept { return weights_.size(); }
  double population() const noexcept { return population_; }
  // Draws still to make: N - n - (k - 1).
  std::size_t remaining() const noexcept;
  // 1-based index of the next draw.
  std::size_t next_draw() const noexcept { return drawn_ + 1; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const std::uint64_t> tallies() const noexcept { return tallies_; }

  // Selection probabilities of the next draw. Throws UrnUnderflowError for a
  // negative numerator unless clamping is enabled.
  std::vector<double> probabilities() const;

  // Makes one draw and returns the selected unit.
  std::size_t draw(Rng& rng);

 private:
  std::vector<double> weights_;
  std::vector<std::uint64_t> tallies_;
  double population_;
  bool clamp_;
  std::size_t drawn_ = 0;
  std::size_t total_draws_ = 0;
};

inline std::vector<double> polya_probs(const PolyaUrn& urn) { return urn.probabilities(); }

// One pooled synthetic population S_l: per-joint-cell counts summed over F
// constituent populations, and the same restricted to units with y = 1.
struct SyntheticPopulation {
  std::vector<double> cells;
  std::vector<double> cells_y1;
  double size = 0.0;  // F * pop_draw_size
};

struct WfpbbOptions {
  std::size_t pops_per_draw = 20;  // F
  double pop_draw_size = 0.0;      // 0 means the population total N
  bool clamp_nonnegative = false;
  // Sample the urn as its equivalent Dirichlet-multinomial over distinct
  // (cell, y) keys instead of one unit at a time.
  bool batched = true;
};

// Expands a bootstrap-recalibrated sample into one pooled synthetic population.
// `recal_weights` sum to the draw size; zero-weight units are not in the urn.
SyntheticPopulation wfpbb_expand(const WeightedSample& sample, std::span<const double> recal_weights,
                                 const CellFrame& frame, const WfpbbOptions& options, Rng& rng);

// L pooled synthetic populations, each from its own bootstrap resample. Draw l
// uses RNG stream l of `seed`.
std::vector<SyntheticPopulation> wfpbb_populations(const WeightedSample& sample,
                                                   const CellFrame& frame, std::size_t draws,
                                                   const WfpbbOptions& options, std::uint64_t seed,
                                                   std::size_t threads = 1);

// Cell counts from pooled populations, each row rescaled to sum to N.
CountDraws counts_from_populations(std::span<const SyntheticPopulation> pops, const CellFrame& frame);

CountDraws counts_wfpbb(const WeightedSample& sample, const CellFrame& frame, std::size_t draws,
                        const WfpbbOptions& options, std::uint64_t seed, std::size_t threads = 1);

// X | Z = m ~ Multinomial(N^z_m; n_{m,c} / n^z_m), independently per Z-cell.
CountDraws counts_multinomial(const WeightedSample& sample, const CellFrame& frame, std::size_t draws,
                              std::uint64_t seed);

// Row-major S x M matrix of posterior draws of Pr(X = level 2 | Z = m).
struct Stage1Draws {
  std::size_t draws = 0;
  std::size_t z_cells = 0;
  std::vector<double> p;

  std::span<const double> row(std::size_t s) const { return {p.data() + s * z_cells, z_cells}; }
};

struct TwoStageOptions {
  // Draw Binomial(N^z_m, p) per cell instead of using the expected count.
  bool binomial_allocation = false;
};

// Requires C == 2; throws UnsupportedError otherwise.
CountDraws counts_twostage(const CellFrame& frame, const Stage1Draws& stage1,
                           const TwoStageOptions& options, std::uint64_t seed);

// Writes L rows x J columns with header j1..jJ.
void write_count_draws_csv(const CountDraws& draws, const std::string& path);

}  // namespace emrp::synthpop
