#pragma once

// Split R-hat and rank-normalized bulk effective sample size.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "emrp/hmc.hpp"

namespace emrp {

// Draws of one scalar quantity, one vector per chain.
using ChainSeries = std::vector<std::vector<double>>;

// Potential scale reduction over chains split in half. Absent for a single
// chain; NaN when every draw is identical.
std::optional<double> split_rhat(const ChainSeries& chains);

// Bulk ESS: split chains, rank-normalized, Geyer initial monotone sequence.
// NaN when every draw is identical.
double ess_bulk(const ChainSeries& chains);

// ESS of the raw (not rank-normalized) split chains.
double ess_raw(const ChainSeries& chains);

struct Diagnostics {
  std::vector<std::optional<double>> rhat;
  std::vector<double> ess_bulk;
  std::size_t divergences = 0;
  std::size_t total_draws = 0;

  // Largest finite R-hat; absent when R-hat is undefined for every parameter.
  std::optional<double> max_rhat() const;
  double min_ess() const;
};

Diagnostics diagnose(std::span<const hmc::Chain> chains);

}  // namespace emrp
