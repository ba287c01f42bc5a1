#pragma once

// Hierarchical Bernoulli-logit regression with varying intercepts.
//
// Data are aggregated to design rows (cells): row r has y_r successes out of
// n_r trials and linear predictor
//   eta_r = b0 + sum_t alpha_t[level_t(r)],   alpha_t ~ N(0, sigma_t^2),
//   sigma_t ~ half-Cauchy(0, a),
// fit by HMC on the unconstrained scale (log sigma, with Jacobian).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emrp/data_model.hpp"
#include "emrp/diagnostics.hpp"
#include "emrp/hmc.hpp"

namespace emrp::glm {

struct Term {
  std::string name;
  std::size_t levels = 0;
  std::vector<std::size_t> level_of_row;
  // Known group scale; the term then has no scale parameter.
  std::optional<double> fixed_sigma;
  // Split form: contrasts are v = sigma^kappa u with u ~ N(0, sigma^(2 - 2 kappa)),
  // so kappa = 0 is centered and kappa = 1 non-centered. Unset means 0 unless
  // chosen from data by choose_centering.
  std::optional<double> kappa;
};

// How each term's level effects alpha_t are represented:
//   centered      alpha_t directly;
//   non_centered  alpha_t = sigma_t * z_t;
//   split         alpha_t = sigma_t / sqrt(K) * w_t + Q v_t, with Q an orthonormal
//                 sum-to-zero (Helmert) basis, w_t ~ N(0, 1) and v_t ~ N(0, sigma_t^2).
//                 The intercept slot then holds the grand mean b0 + sum_t mean(alpha_t),
//                 so the likelihood depends only on the grand mean and the contrasts.
// All three define the same posterior over (b0, alpha, sigma).
enum class Parameterization { non_centered, centered, split };

struct ModelSpec {
  std::size_t rows = 0;
  bool intercept = true;
  double intercept_sd = 5.0;
  double prior_scale = 1.0;  // a in half-Cauchy(0, a)
  Parameterization parameterization = Parameterization::split;
  std::vector<Term> terms;

  // Throws ValidationError on inconsistent sizes or levels.
  void validate() const;
};

// Per-row binomial counts.
struct BinomialData {
  std::vector<double> successes;
  std::vector<double> trials;
};

// Fills each unset Term::kappa from the data. A term whose marginal
// empirical logits show little spread beyond sampling noise (Cochran's Q per
// degree of freedom below `threshold`) gets `weak_kappa`: its scale is then
// weakly identified, and fully centered contrasts funnel as it nears zero
// while fully non-centered ones funnel as it grows.
void choose_centering(ModelSpec& spec, const BinomialData& data, double threshold = 9.0,
                      double weak_kappa = 0.5);

// Positions of each parameter block in the unconstrained vector:
// [b0] [term 0 effects] ... [term T-1 effects] [log sigma for each free term].
struct ParamLayout {
  std::size_t dim = 0;
  std::optional<std::size_t> intercept;
  std::vector<std::size_t> effect_offset;
  std::vector<std::optional<std::size_t>> log_sigma;

  explicit ParamLayout(const ModelSpec& spec);
  std::vector<std::string> names(const ModelSpec& spec) const;
  // Maps a sampler vector to the same layout holding the intercept, the level
  // effects alpha and the log scales.
  void to_natural(const ModelSpec& spec, std::span<const double> params, std::span<double> out) const;
};

// Evaluates the log posterior and its gradient with reusable scratch space.
// Not thread-safe; use one evaluator per thread.
class LogPosterior {
 public:
  LogPosterior(const ModelSpec& spec, const BinomialData& data);

  std::size_t dim() const noexcept { return layout_.dim; }
  const ParamLayout& layout() const noexcept { return layout_; }

  double operator()(std::span<const double> params, std::span<double> grad);

  // Linear predictor for every row at `params`.
  void linear_predictor(std::span<const double> params, std::span<double> eta) const;

 private:
  const ModelSpec* spec_;
  const BinomialData* data_;
  ParamLayout layout_;
  std::vector<double> eta_;
  std::vector<double> resid_;
  std::vector<double> sigma_;
  std::vector<double> group_score_;
  std::vector<double> natural_;
  std::vector<double> work_;
};

struct LogPosteriorValue {
  double value = 0.0;
  std::vector<double> gradient;
};

// Throws ValidationError for non-finite parameters.
LogPosteriorValue log_posterior(const ModelSpec& spec, const BinomialData& data,
                                std::span<const double> params);

struct PosteriorFit {
  std::vector<std::string> names;
  std::vector<hmc::Chain> chains;
  std::size_t warmup = 0;
  std::size_t iterations = 0;
  Diagnostics diagnostics;
  std::vector<std::string> warnings;
  // Term::kappa chosen by sample(); reapplied by cell_means and write_draws_csv.
  std::vector<double> kappa;

  std::size_t dim() const noexcept { return names.size(); }
  std::size_t total_draws() const;
  // Kept draws of all chains, concatenated in chain order.
  std::vector<double> merged() const;
};

struct SamplerConfig {
  std::size_t chains = 2;
  std::size_t iterations = 2000;
  std::size_t warmup = 1500;
  std::uint64_t seed = 1;
  double target_accept = 0.95;
  hmc::Algorithm algorithm = hmc::Algorithm::nuts;
  std::size_t max_depth = 10;
  double integration_time = 4.0;  // static trajectories only
  bool dense_metric = false;
  std::size_t threads = 1;
};

// Warns when the divergence rate exceeds 10%, any split R-hat exceeds 1.05 or
// any bulk ESS is below 100.
PosteriorFit sample(const ModelSpec& spec, const BinomialData& data, const SamplerConfig& config);

// expit(eta_r) for every kept draw (merged across chains) and design row.
CellMeanDraws cell_means(const PosteriorFit& fit, const ModelSpec& spec);

struct PredictiveSubgroup {
  std::string name;
  std::vector<std::size_t> units;
};

struct PredictiveCheck {
  std::string name;
  bool skipped = false;  // empty subgroup
  double observed = 0.0;
  std::vector<double> draws;
};

// Subgroup means of posterior predictive outcomes, one value per kept draw.
// `row_of_unit` maps each sample unit to its design row.
std::vector<PredictiveCheck> posterior_predictive_check(const PosteriorFit& fit, const ModelSpec& spec,
                                                        std::span<const std::size_t> row_of_unit,
                                                        std::span<const int> y,
                                                        std::span<const PredictiveSubgroup> subgroups,
                                                        std::uint64_t seed);

// One row per kept draw: Intercept, <term>[<level>] effects, sigma_<term>, lp__.
void write_draws_csv(const PosteriorFit& fit, const ModelSpec& spec, const std::string& path);

// Design helpers.

// Rows are joint cells; successes are y.
BinomialData aggregate_outcome_by_joint_cell(const WeightedSample& sample, const CellFrame& frame);
// Rows are Z-cells; successes are y.
BinomialData aggregate_outcome_by_z_cell(const WeightedSample& sample, const CellFrame& frame);
// Rows are Z-cells; successes are units at X level `level` (binary first stage).
BinomialData aggregate_x_by_z_cell(const WeightedSample& sample, const CellFrame& frame,
                                   std::size_t level);

}  // namespace emrp::glm
