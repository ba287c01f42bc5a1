#pragma once

// Repeated-sampling study: one finite population, Z-dependent inclusion,
// and five estimators scored over R samples.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emrp/bayes_glm.hpp"
#include "emrp/data_model.hpp"
#include "emrp/random.hpp"

namespace emrp::sim {

enum class Case { main, interaction };

enum class Method { wfpbb, wfpbb_mrp, multinomial_mrp, twostage_mrp, classical_mrp };

inline constexpr std::array<Method, 5> kAllMethods = {Method::wfpbb, Method::wfpbb_mrp,
                                                      Method::multinomial_mrp, Method::twostage_mrp,
                                                      Method::classical_mrp};

// "WFPBB", "WFPBB-MRP", "Multinomial-MRP", "TwoStage-MRP", "Classical-MRP".
std::string method_name(Method m);
std::optional<Method> parse_method(const std::string& name);

// Factor levels: Za and Zb have 5 levels, Zc and X have 2. Entries are
// indexed by 0-based level.
struct Coefficients {
  double beta0 = 0.0;
  std::array<double, 5> beta_a{};
  std::array<double, 5> beta_b{};
  std::array<double, 2> beta_c{};
  std::array<double, 5> beta_ac{};  // added when Zc is at its second level
  std::array<double, 5> beta_bc{};
  double alpha0 = 0.0;
  std::array<double, 5> alpha_a{};
  std::array<double, 5> alpha_b{};
  std::array<double, 2> alpha_c{};
  // Outcome effect of X, indexed by the 0/1 value of X.
  std::array<double, 2> alpha_x{};
};

Coefficients default_coefficients(Case c);

// Inclusion probabilities for Z-cells first..last (0-based, inclusive) are
// drawn with replacement from an equally spaced grid on [lo, hi].
struct InclusionRange {
  std::size_t first = 0;
  std::size_t last = 0;
  double lo = 0.0;
  double hi = 0.0;
};

std::vector<InclusionRange> default_inclusion_ranges();

struct SimConfig {
  std::size_t population = 10000;
  Case design = Case::main;
  Coefficients coef = default_coefficients(Case::main);
  std::vector<InclusionRange> inclusion = default_inclusion_ranges();
  double grid_step = 0.01;
  std::size_t replicates = 200;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  glm::SamplerConfig sampler;
  double prior_scale = 1.0;
  std::size_t L = 1000;
  std::size_t F = 20;
  double T = 0.0;  // synthetic draw size T * n when positive, else N
  bool clamp_nonnegative = true;
  std::uint64_t seed = 20240501;
  std::size_t threads = 1;
  std::size_t max_retries = 10;
  double max_failure_fraction = 0.05;

  // Throws ValidationError when inconsistent.
  void validate() const;
};

// R = 20, L = 200 and half the sampler iterations.
SimConfig smoke_profile(SimConfig config);

inline constexpr std::size_t kLevelsA = 5;
inline constexpr std::size_t kLevelsB = 5;
inline constexpr std::size_t kLevelsC = 2;
inline constexpr std::size_t kZCells = kLevelsA * kLevelsB * kLevelsC;

// Z-cell index m = (za * 5 + zb) * 2 + zc.
constexpr std::size_t z_cell_of(std::size_t za, std::size_t zb, std::size_t zc) {
  return (za * kLevelsB + zb) * kLevelsC + zc;
}
constexpr std::size_t za_of(std::size_t m) { return m / (kLevelsB * kLevelsC); }
constexpr std::size_t zb_of(std::size_t m) { return (m / kLevelsC) % kLevelsB; }
constexpr std::size_t zc_of(std::size_t m) { return m % kLevelsC; }

struct Population {
  std::vector<std::size_t> z;  // Z-cell per unit
  std::vector<std::size_t> x;  // 0/1
  std::vector<int> y;
  CellFrame frame;
  std::vector<double> joint_counts;  // true N_j
  std::vector<double> joint_y1;      // units with y = 1 per joint cell
  std::vector<double> px;            // Pr(X = 1 | Z-cell)

  std::size_t size() const noexcept { return z.size(); }
  double overall_mean() const;
  // Realized mean of y over the units in `cells`.
  double subgroup_mean(std::span<const std::size_t> cells) const;
};

Population generate_population(const SimConfig& config, Rng& rng);

std::vector<double> assign_inclusion(const SimConfig& config, Rng& rng);

// Independent Bernoulli inclusion with margin-constructed weights. Throws
// EmptyCellError when a Z-cell with population units has no sampled units.
WeightedSample draw_sample(const Population& pop, std::span<const double> inclusion, Rng& rng);

// Four groups of 20 joint cells taken from windows of Z-cell inclusion ranks
// 1-20, 11-30, 21-40 and 31-50 (ties by cell index). Within each window the
// first five Z-cells contribute their X = 0 cell and the rest their X = 1
// cell; the third group is reversed (15 at X = 0, 5 at X = 1).
std::vector<SubgroupDef> define_subgroups(std::span<const double> inclusion);

// Models used in the study, all over aggregated cells.
glm::ModelSpec outcome_spec(const CellFrame& frame, double prior_scale);     // Y ~ Za + Zb + Zc + X
glm::ModelSpec z_only_spec(double prior_scale);                              // over Z-cells

struct MetricRow {
  std::string method;
  std::string estimand;
  double bias = 0.0;
  double rmse = 0.0;
  double ci_length = 0.0;
  double coverage = 0.0;
  std::size_t replicates = 0;
};

// Scores point estimates and intervals against a fixed truth.
class MetricAccumulator {
 public:
  void add(double estimate, double lower, double upper, double truth);
  std::size_t count() const noexcept { return n_; }
  std::size_t covered() const noexcept { return covered_; }
  double bias() const;
  double rmse() const;
  double ci_length() const;
  double coverage() const;
  // True when every interval had zero width.
  bool degenerate() const noexcept { return n_ > 0 && degenerate_ == n_; }

 private:
  std::size_t n_ = 0;
  std::size_t covered_ = 0;
  std::size_t degenerate_ = 0;
  double err_ = 0.0;
  double sq_ = 0.0;
  double len_ = 0.0;
};

// Per-cell mean and 2.5/97.5 percentiles of count draws.
struct CountSummary {
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
};

CountSummary summarize_counts(const CountDraws& draws);

struct CellMetricRow {
  std::string method;
  std::size_t cell = 0;  // 0-based joint cell
  double bias = 0.0;
  double rmse = 0.0;
  double ci_length = 0.0;
  double coverage = 0.0;
  bool degenerate = false;
};

// Scores per-replicate count summaries against the true N_j.
std::vector<CellMetricRow> score_counts(const std::string& method, std::span<const CountSummary> reps,
                                        std::span<const double> truth);

struct FitRecord {
  std::string model;
  std::optional<double> max_rhat;
  double min_ess = 0.0;
  std::size_t divergences = 0;
  std::vector<std::string> warnings;
};

struct ReplicateResult {
  bool failed = false;
  std::string error;
  std::size_t retries = 0;
  std::size_t sample_size = 0;
  std::vector<std::size_t> subgroup_sizes;
  std::vector<EstimateSummary> estimates;
  std::vector<std::pair<std::string, CountSummary>> counts;
  std::vector<FitRecord> fits;
};

// Runs every configured method on one sample.
ReplicateResult analyze_sample(const SimConfig& config, const Population& pop, const WeightedSample& sample,
                               std::span<const SubgroupDef> subgroups, std::uint64_t seed);

struct StudyResult {
  Population population;
  std::vector<double> inclusion;
  std::vector<SubgroupDef> subgroups;
  std::vector<double> truths;  // overall, then subgroups
  std::vector<ReplicateResult> replicates;
  std::vector<MetricRow> metrics;
  std::vector<CellMetricRow> count_metrics;
  std::size_t failures = 0;
  double mean_sample_size = 0.0;
  std::vector<double> mean_subgroup_sizes;
  std::size_t fits = 0;
  std::size_t fits_rhat_above = 0;  // fits with any split R-hat > 1.05
  double max_rhat = 0.0;

  const MetricRow* find(const std::string& method, const std::string& estimand) const;
};

// Throws EstimationError when more than max_failure_fraction of replicates fail.
StudyResult run_study(const SimConfig& config);

void write_results_csv(std::span<const MetricRow> rows, const std::string& path);
void write_count_metrics_csv(std::span<const CellMetricRow> rows, const std::string& path);
// Long format: replicate, method, estimand, estimate, se, ci_lower, ci_upper, truth.
void write_replicates_csv(const StudyResult& study, const std::string& path);

}  // namespace emrp::sim
