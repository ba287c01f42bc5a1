#pragma once

// Hamiltonian Monte Carlo for any differentiable log density: the no-U-turn
// sampler (multinomial trajectory sampling) or static trajectories, with
// dual-averaging step size and dense or diagonal mass-matrix adaptation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace emrp::hmc {

// Returns log p(q) up to a constant and writes d log p / dq into grad. May
// return a non-finite value outside the support; the sampler treats that as a
// divergence.
using LogDensity = std::function<double(std::span<const double> q, std::span<double> grad)>;

enum class Algorithm { nuts, static_trajectory };

struct Config {
  Algorithm algorithm = Algorithm::nuts;
  std::size_t chains = 2;
  std::size_t iterations = 2000;  // including warmup
  std::size_t warmup = 1500;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  std::size_t max_depth = 10;      // NUTS tree depth limit
  double integration_time = 4.0;  // static trajectories; jittered by +-20% per iteration
  std::size_t max_leapfrog = 1024;
  double init_radius = 0.5;  // initial values drawn from U(-r, r)
  // Adapt a dense inverse metric during warmup instead of a diagonal one.
  bool dense_metric = false;
  std::size_t threads = 1;
};

struct Chain {
  std::size_t dim = 0;
  std::vector<double> draws;  // kept iterations x dim, row-major
  std::vector<double> lp;     // log density per kept draw
  std::size_t divergences = 0;
  std::size_t warmup_divergences = 0;
  double step_size = 0.0;
  double mean_accept = 0.0;  // over kept iterations
  double mean_leapfrog = 0.0;  // gradient evaluations per kept iteration
  std::size_t max_depth_hits = 0;
  std::vector<double> inv_metric;       // diagonal of the adapted inverse metric
  std::vector<double> metric_cholesky;  // lower Cholesky factor when dense, else empty

  std::size_t kept() const noexcept { return lp.size(); }
  std::span<const double> draw(std::size_t s) const { return {draws.data() + s * dim, dim}; }
};

// One chain; `chain_index` selects the RNG stream of config.seed.
Chain run_chain(const LogDensity& density, std::size_t dim, const Config& config,
                std::size_t chain_index);

// `make_density` is called once per chain so each chain owns its scratch buffers.
std::vector<Chain> run_chains(const std::function<LogDensity()>& make_density, std::size_t dim,
                              const Config& config);

// Leapfrog integration under a diagonal metric; exposed for reversibility and
// energy-error tests. Returns the final Hamiltonian (negative log density plus
// kinetic energy), or a non-finite value on failure.
double leapfrog(const LogDensity& density, std::span<double> q, std::span<double> p,
                std::span<const double> inv_metric, double step_size, std::size_t steps);

double hamiltonian(const LogDensity& density, std::span<const double> q, std::span<const double> p,
                   std::span<const double> inv_metric);

}  // namespace emrp::hmc
