#pragma once

// Sampler validation routines shared by the unit tests and the acceptance
// suite. Each returns raw measurements; callers pick the tolerances.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "emrp/bayes_glm.hpp"

namespace emrp::testing {

struct GlmInstance {
  glm::ModelSpec spec;
  glm::BinomialData data;
  std::vector<double> params;
};

// A random small model (one to three terms, random intercept and fixed-scale
// choices, random counts) with a random parameter vector.
GlmInstance random_instance(std::uint64_t seed, glm::Parameterization param);

// Largest componentwise |analytic - central difference| / max(1, |analytic|)
// over `instances` random models of every parameterization.
double max_gradient_error(std::size_t instances, std::uint64_t seed, double h = 1e-5);

struct GaussianCheck {
  double max_mean_error = 0.0;
  double max_sd_error = 0.0;
  double min_ess = 0.0;
};

// Samples a model with no data and unit fixed scales, whose effects are then
// independent standard normals, and compares their draws to N(0, 1).
GaussianCheck gaussian_moments(std::size_t dim, std::size_t chains, std::size_t kept, std::uint64_t seed);

struct RecoveryCheck {
  std::size_t covered = 0;
  std::size_t total = 0;
  double coverage() const { return total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0; }
};

// Repeatedly simulates a one-factor logistic model (`levels` levels, `n` units
// split evenly) with effects drawn from N(0, 0.5^2), fits it and counts how
// often the central 95% interval of each level effect covers the truth.
RecoveryCheck coefficient_recovery(std::size_t fits, std::size_t levels, std::size_t n, std::uint64_t seed,
                                   const glm::SamplerConfig& sampler);

}  // namespace emrp::testing
