#include "emrp/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "emrp/errors.hpp"
#include "emrp/estimators.hpp"
#include "emrp/io.hpp"
#include "emrp/parallel.hpp"
#include "emrp/stats.hpp"
#include "emrp/synthpop.hpp"

namespace emrp::sim {

std::string method_name(Method m) {
  switch (m) {
    case Method::wfpbb: return "WFPBB";
    case Method::wfpbb_mrp: return "WFPBB-MRP";
    case Method::multinomial_mrp: return "Multinomial-MRP";
    case Method::twostage_mrp: return "TwoStage-MRP";
    case Method::classical_mrp: return "Classical-MRP";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  for (auto m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

Coefficients default_coefficients(Case c) {
  Coefficients k;
  k.beta0 = -0.5;
  k.beta_a = {1.7, 0.25, 0.2, -0.75, -1.7};
  k.beta_b = {2.3, 1.5, 0.15, 0.2, 0.9};
  k.beta_c = {0.0, -1.0};
  if (c == Case::interaction) {
    k.beta_ac = {0.0, -0.6, 0.5, 0.35, -0.4};
    k.beta_bc = {0.0, 1.7, 0.1, 2.0, -0.75};
  }
  k.alpha0 = 0.0;
  k.alpha_a = {1.37, -0.56, 0.36, 0.63, 0.40};
  k.alpha_b = {-0.11, 1.51, -0.09, 2.02, -0.06};
  k.alpha_c = {0.0, 0.24};
  k.alpha_x = {-1.3, 0.0};
  return k;
}

std::vector<InclusionRange> default_inclusion_ranges() {
  return {{0, 4, 0.01, 0.10}, {5, 19, 0.11, 0.40}, {20, 39, 0.21, 0.60}, {40, 44, 0.51, 0.80},
          {45, 49, 0.80, 0.99}};
}

void SimConfig::validate() const {
  if (population < 1) throw ValidationError("population size must be positive");
  if (replicates < 1) throw ValidationError("replicates must be at least 1");
  if (L < 1 || F < 1) throw ValidationError("L and F must be at least 1");
  if (methods.empty()) throw ValidationError("no methods selected");
  if (!(grid_step > 0.0)) throw ValidationError("inclusion grid step must be positive");
  if (!(prior_scale > 0.0)) throw ValidationError("prior scale must be positive");
  if (T < 0.0) throw ValidationError("T must be nonnegative");
  if (sampler.iterations <= sampler.warmup || sampler.warmup < 1) {
    throw ValidationError("sampler needs iterations > warmup >= 1");
  }
  std::vector<int> covered(kZCells, 0);
  for (const auto& r : inclusion) {
    if (r.first > r.last || r.last >= kZCells) throw ValidationError("inclusion range cells out of range");
    if (!(r.lo > 0.0 && r.hi < 1.0 + 1e-12 && r.lo <= r.hi)) {
      throw ValidationError("inclusion range must lie within (0, 1]");
    }
    for (auto m = r.first; m <= r.last; ++m) ++covered[m];
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; })) {
    throw ValidationError("inclusion ranges must cover each Z-cell exactly once");
  }
}

SimConfig smoke_profile(SimConfig config) {
  config.replicates = 20;
  config.L = 200;
  config.sampler.iterations /= 2;
  config.sampler.warmup /= 2;
  return config;
}

double Population::overall_mean() const {
  double ones = 0.0;
  for (int v : y) ones += v;
  return ones / static_cast<double>(y.size());
}

double Population::subgroup_mean(std::span<const std::size_t> cells) const {
  double n = 0.0;
  double ones = 0.0;
  for (auto j : cells) {
    n += joint_counts.at(j);
    ones += joint_y1.at(j);
  }
  if (n == 0.0) throw EstimationError("subgroup has no population units");
  return ones / n;
}

namespace {

template <std::size_t K>
std::array<double, K> normalized_uniforms(Rng& rng) {
  std::array<double, K> p{};
  double s = 0.0;
  for (auto& v : p) {
    v = 0.25 + 0.75 * uniform01(rng);
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

template <std::size_t K>
std::size_t categorical(Rng& rng, const std::array<double, K>& p) {
  double u = uniform01(rng);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    if (u < p[k]) return k;
    u -= p[k];
  }
  return K - 1;
}

}  // namespace

Population generate_population(const SimConfig& config, Rng& rng) {
  const auto& k = config.coef;
  const auto pa = normalized_uniforms<kLevelsA>(rng);
  const auto pb = normalized_uniforms<kLevelsB>(rng);
  const auto pc = normalized_uniforms<kLevelsC>(rng);

  Population pop;
  pop.px.resize(kZCells);
  for (std::size_t m = 0; m < kZCells; ++m) {
    const auto a = za_of(m), b = zb_of(m), c = zc_of(m);
    double eta = k.beta0 + k.beta_a[a] + k.beta_b[b] + k.beta_c[c];
    if (c == 1) eta += k.beta_ac[a] + k.beta_bc[b];
    pop.px[m] = expit(eta);
  }

  const std::size_t N = config.population;
  pop.z.resize(N);
  pop.x.resize(N);
  pop.y.resize(N);
  std::vector<double> margins(kZCells, 0.0);
  pop.joint_counts.assign(kZCells * 2, 0.0);
  pop.joint_y1.assign(kZCells * 2, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto a = categorical(rng, pa);
    const auto b = categorical(rng, pb);
    const auto c = categorical(rng, pc);
    const auto m = z_cell_of(a, b, c);
    const std::size_t x = uniform01(rng) < pop.px[m] ? 1 : 0;
    const double eta = k.alpha0 + k.alpha_a[a] + k.alpha_b[b] + k.alpha_c[c] + k.alpha_x[x];
    const int y = uniform01(rng) < expit(eta) ? 1 : 0;
    pop.z[i] = m;
    pop.x[i] = x;
    pop.y[i] = y;
    margins[m] += 1.0;
    pop.joint_counts[m * 2 + x] += 1.0;
    pop.joint_y1[m * 2 + x] += y;
  }
  pop.frame = build_cell_frame(kZCells, 2, std::move(margins));
  return pop;
}

std::vector<double> assign_inclusion(const SimConfig& config, Rng& rng) {
  std::vector<double> out(kZCells, 0.0);
  for (const auto& r : config.inclusion) {
    const auto points = static_cast<std::size_t>(std::floor((r.hi - r.lo) / config.grid_step + 1e-9)) + 1;
    for (auto m = r.first; m <= r.last; ++m) {
      const auto idx = std::min(points - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(points)));
      out[m] = std::min(r.hi, r.lo + static_cast<double>(idx) * config.grid_step);
    }
  }
  return out;
}

WeightedSample draw_sample(const Population& pop, std::span<const double> inclusion, Rng& rng) {
  if (inclusion.size() != pop.frame.z_cells()) throw ValidationError("one inclusion probability per Z-cell");
  std::vector<SampleUnit> units;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (uniform01(rng) < inclusion[pop.z[i]]) units.push_back({pop.z[i], pop.x[i], pop.y[i], 1.0});
  }
  WeightedSample sample(pop.frame, std::move(units));
  sample.set_weights(construct_base_weights(sample, pop.frame));
  return sample;
}

std::vector<SubgroupDef> define_subgroups(std::span<const double> inclusion) {
  if (inclusion.size() != kZCells) throw ValidationError("subgroups need 50 Z-cells");
  std::vector<std::size_t> order(kZCells);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return inclusion[a] < inclusion[b]; });
  std::vector<SubgroupDef> out;
  for (std::size_t g = 0; g < 4; ++g) {
    std::vector<std::size_t> window(order.begin() + static_cast<std::ptrdiff_t>(10 * g),
                                    order.begin() + static_cast<std::ptrdiff_t>(10 * g + 20));
    std::sort(window.begin(), window.end());
    const std::size_t x0_cells = g == 2 ? 15 : 5;
    SubgroupDef def;
    def.name = "group" + std::to_string(g + 1);
    for (std::size_t k = 0; k < window.size(); ++k) def.cells.push_back(window[k] * 2 + (k < x0_cells ? 0 : 1));
    std::sort(def.cells.begin(), def.cells.end());
    out.push_back(std::move(def));
  }
  return out;
}

namespace {

glm::Term factor_term(const std::string& name, std::size_t levels, std::size_t rows,
                      const std::function<std::size_t(std::size_t)>& level_of) {
  glm::Term t;
  t.name = name;
  t.levels = levels;
  t.level_of_row.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) t.level_of_row[r] = level_of(r);
  return t;
}

}  // namespace

glm::ModelSpec outcome_spec(const CellFrame& frame, double prior_scale) {
  glm::ModelSpec s;
  s.rows = frame.joint_cells();
  s.prior_scale = prior_scale;
  s.terms.push_back(factor_term("za", kLevelsA, s.rows, [&](std::size_t j) { return za_of(frame.z_of(j)); }));
  s.terms.push_back(factor_term("zb", kLevelsB, s.rows, [&](std::size_t j) { return zb_of(frame.z_of(j)); }));
  s.terms.push_back(factor_term("zc", kLevelsC, s.rows, [&](std::size_t j) { return zc_of(frame.z_of(j)); }));
  s.terms.push_back(factor_term("x", frame.x_levels(), s.rows, [&](std::size_t j) { return frame.x_of(j); }));
  return s;
}

glm::ModelSpec z_only_spec(double prior_scale) {
  glm::ModelSpec s;
  s.rows = kZCells;
  s.prior_scale = prior_scale;
  s.terms.push_back(factor_term("za", kLevelsA, s.rows, za_of));
  s.terms.push_back(factor_term("zb", kLevelsB, s.rows, zb_of));
  s.terms.push_back(factor_term("zc", kLevelsC, s.rows, zc_of));
  return s;
}

void MetricAccumulator::add(double estimate, double lower, double upper, double truth) {
  ++n_;
  const double e = estimate - truth;
  err_ += e;
  sq_ += e * e;
  len_ += upper - lower;
  if (lower <= truth && truth <= upper) ++covered_;
  if (upper == lower) ++degenerate_;
}

double MetricAccumulator::bias() const { return err_ / static_cast<double>(n_); }
double MetricAccumulator::rmse() const { return std::sqrt(sq_ / static_cast<double>(n_)); }
double MetricAccumulator::ci_length() const { return len_ / static_cast<double>(n_); }
double MetricAccumulator::coverage() const {
  return static_cast<double>(covered_) / static_cast<double>(n_);
}

CountSummary summarize_counts(const CountDraws& draws) {
  CountSummary s;
  const auto J = draws.cells();
  s.mean.resize(J);
  s.lower.resize(J);
  s.upper.resize(J);
  std::vector<double> col(draws.draws());
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t l = 0; l < draws.draws(); ++l) col[l] = draws.row(l)[j];
    const auto d = summarize_draws(col);
    s.mean[j] = d.mean;
    s.lower[j] = d.lower;
    s.upper[j] = d.upper;
  }
  return s;
}

std::vector<CellMetricRow> score_counts(const std::string& method, std::span<const CountSummary> reps,
                                        std::span<const double> truth) {
  std::vector<MetricAccumulator> acc(truth.size());
  for (const auto& r : reps) {
    if (r.mean.size() != truth.size()) throw ValidationError("count summary does not match the truth");
    for (std::size_t j = 0; j < truth.size(); ++j) acc[j].add(r.mean[j], r.lower[j], r.upper[j], truth[j]);
  }
  std::vector<CellMetricRow> out;
  if (reps.empty()) return out;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    out.push_back({method, j, acc[j].bias(), acc[j].rmse(), acc[j].ci_length(), acc[j].coverage(),
                   acc[j].degenerate()});
  }
  return out;
}

namespace {

struct FitOutput {
  CellMeanDraws means;
  FitRecord record;
};

FitOutput fit_model(const std::string& name, const glm::ModelSpec& spec, const glm::BinomialData& data,
                    const glm::SamplerConfig& base, std::uint64_t seed) {
  auto cfg = base;
  cfg.seed = seed;
  cfg.threads = 1;
  const auto fit = glm::sample(spec, data, cfg);
  FitOutput out{glm::cell_means(fit, spec), {}};
  out.record.model = name;
  out.record.max_rhat = fit.diagnostics.max_rhat();
  out.record.min_ess = fit.diagnostics.min_ess();
  out.record.divergences = fit.diagnostics.divergences;
  out.record.warnings = fit.warnings;
  return out;
}

bool uses(const SimConfig& c, Method m) { return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end(); }

void append(std::vector<EstimateSummary>& out, std::vector<EstimateSummary> more) {
  out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

}  // namespace

ReplicateResult analyze_sample(const SimConfig& config, const Population& pop, const WeightedSample& sample,
                               std::span<const SubgroupDef> subgroups, std::uint64_t seed) {
  const auto& frame = pop.frame;
  ReplicateResult res;
  res.sample_size = sample.size();
  for (const auto& g : subgroups) {
    const auto mask = g.mask(frame.joint_cells());
    std::size_t n = 0;
    for (const auto& u : sample.units()) n += mask[frame.joint_index(u.z, u.x)] > 0.0;
    res.subgroup_sizes.push_back(n);
  }

  est::PairingOptions pairing;
  pairing.seed = stream_seed(seed, 1);

  const bool need_outcome =
      uses(config, Method::wfpbb_mrp) || uses(config, Method::multinomial_mrp) || uses(config, Method::twostage_mrp);
  std::optional<FitOutput> outcome;
  if (need_outcome) {
    const auto spec = outcome_spec(frame, config.prior_scale);
    outcome = fit_model("outcome", spec, glm::aggregate_outcome_by_joint_cell(sample, frame), config.sampler,
                        stream_seed(seed, 2));
    res.fits.push_back(outcome->record);
  }

  for (auto method : config.methods) {
    const auto name = method_name(method);
    switch (method) {
      case Method::wfpbb:
      case Method::wfpbb_mrp: {
        if (method == Method::wfpbb_mrp && uses(config, Method::wfpbb)) break;  // handled together
        synthpop::WfpbbOptions opts;
        opts.pops_per_draw = config.F;
        opts.clamp_nonnegative = config.clamp_nonnegative;
        if (config.T > 0.0) opts.pop_draw_size = std::round(config.T * static_cast<double>(sample.size()));
        const auto pops = synthpop::wfpbb_populations(sample, frame, config.L, opts, stream_seed(seed, 3));
        if (uses(config, Method::wfpbb)) {
          append(res.estimates, est::wfpbb_direct_estimate(method_name(Method::wfpbb), pops, subgroups));
        }
        if (uses(config, Method::wfpbb_mrp)) {
          const auto counts = synthpop::counts_from_populations(pops, frame);
          append(res.estimates, est::emrp_estimate(method_name(Method::wfpbb_mrp), counts, outcome->means,
                                                   subgroups, pairing));
          res.counts.emplace_back(method_name(Method::wfpbb_mrp), summarize_counts(counts));
        }
        break;
      }
      case Method::multinomial_mrp: {
        const auto counts = synthpop::counts_multinomial(sample, frame, config.L, stream_seed(seed, 4));
        append(res.estimates, est::emrp_estimate(name, counts, outcome->means, subgroups, pairing));
        res.counts.emplace_back(name, summarize_counts(counts));
        break;
      }
      case Method::twostage_mrp: {
        const auto spec = z_only_spec(config.prior_scale);
        auto stage1 = fit_model("stage1", spec, glm::aggregate_x_by_z_cell(sample, frame, 1), config.sampler,
                                stream_seed(seed, 5));
        res.fits.push_back(stage1.record);
        synthpop::Stage1Draws s1{stage1.means.draws(), kZCells,
                                 std::vector<double>(stage1.means.values().begin(), stage1.means.values().end())};
        const auto counts = synthpop::counts_twostage(frame, s1, {}, stream_seed(seed, 6));
        append(res.estimates, est::emrp_estimate(name, counts, outcome->means, subgroups, pairing));
        res.counts.emplace_back(name, summarize_counts(counts));
        break;
      }
      case Method::classical_mrp: {
        const auto spec = z_only_spec(config.prior_scale);
        auto fit = fit_model("classical", spec, glm::aggregate_outcome_by_z_cell(sample, frame), config.sampler,
                             stream_seed(seed, 7));
        res.fits.push_back(fit.record);
        // X is ignored: every joint cell inherits its Z-cell mean.
        CellMeanDraws expanded(fit.means.draws(), frame.joint_cells());
        for (std::size_t s = 0; s < fit.means.draws(); ++s) {
          for (std::size_t j = 0; j < frame.joint_cells(); ++j) expanded.row(s)[j] = fit.means.row(s)[frame.z_of(j)];
        }
        append(res.estimates, est::mrp_estimate(name, pop.joint_counts, expanded, subgroups));
        break;
      }
    }
  }
  return res;
}

const MetricRow* StudyResult::find(const std::string& method, const std::string& estimand) const {
  for (const auto& r : metrics) {
    if (r.method == method && r.estimand == estimand) return &r;
  }
  return nullptr;
}

StudyResult run_study(const SimConfig& config) {
  config.validate();
  StudyResult study;
  {
    Rng rng = make_stream(config.seed, 0);
    study.population = generate_population(config, rng);
  }
  {
    Rng rng = make_stream(config.seed, 1);
    study.inclusion = assign_inclusion(config, rng);
  }
  study.subgroups = define_subgroups(study.inclusion);
  const auto& pop = study.population;
  study.truths.push_back(pop.overall_mean());
  for (const auto& g : study.subgroups) study.truths.push_back(pop.subgroup_mean(g.cells));

  study.replicates.resize(config.replicates);
  parallel_for(config.replicates, config.threads, [&](std::size_t r) {
    auto& res = study.replicates[r];
    const std::uint64_t rep_seed = stream_seed(config.seed, 1000 + r);
    std::optional<WeightedSample> sample;
    std::size_t retries = 0;
    for (std::size_t attempt = 0; attempt <= config.max_retries && !sample; ++attempt) {
      Rng rng = make_stream(rep_seed, attempt);
      try {
        sample = draw_sample(pop, study.inclusion, rng);
      } catch (const EmptyCellError&) {
        ++retries;
      }
    }
    if (!sample) {
      res.failed = true;
      res.error = "every redraw left a Z-cell unsampled";
      res.retries = retries;
      return;
    }
    try {
      res = analyze_sample(config, pop, *sample, study.subgroups, stream_seed(rep_seed, 0x5eed));
    } catch (const std::exception& e) {
      res = ReplicateResult{};
      res.failed = true;
      res.error = e.what();
    }
    res.retries = retries;
  });

  std::vector<const ReplicateResult*> ok;
  for (const auto& r : study.replicates) {
    if (r.failed) {
      ++study.failures;
    } else {
      ok.push_back(&r);
    }
  }
  if (static_cast<double>(study.failures) > config.max_failure_fraction * static_cast<double>(config.replicates)) {
    std::string first;
    for (const auto& r : study.replicates) {
      if (r.failed) {
        first = r.error;
        break;
      }
    }
    throw EstimationError(std::to_string(study.failures) + " of " + std::to_string(config.replicates) +
                          " replicates failed; first error: " + first);
  }

  std::vector<std::string> estimands{est::kOverall};
  for (const auto& g : study.subgroups) estimands.push_back(g.name);
  for (auto method : config.methods) {
    const auto name = method_name(method);
    for (std::size_t e = 0; e < estimands.size(); ++e) {
      MetricAccumulator acc;
      for (const auto* r : ok) {
        for (const auto& s : r->estimates) {
          if (s.method == name && s.estimand == estimands[e]) acc.add(s.estimate, s.ci_lower, s.ci_upper, study.truths[e]);
        }
      }
      if (acc.count() == 0) continue;
      study.metrics.push_back({name, estimands[e], acc.bias(), acc.rmse(), acc.ci_length(), acc.coverage(), acc.count()});
    }
    std::vector<CountSummary> cs;
    for (const auto* r : ok) {
      for (const auto& [m, s] : r->counts) {
        if (m == name) cs.push_back(s);
      }
    }
    auto rows = score_counts(name, cs, pop.joint_counts);
    study.count_metrics.insert(study.count_metrics.end(), rows.begin(), rows.end());
  }

  study.mean_subgroup_sizes.assign(study.subgroups.size(), 0.0);
  for (const auto* r : ok) {
    study.mean_sample_size += static_cast<double>(r->sample_size);
    for (std::size_t g = 0; g < r->subgroup_sizes.size(); ++g) {
      study.mean_subgroup_sizes[g] += static_cast<double>(r->subgroup_sizes[g]);
    }
    for (const auto& f : r->fits) {
      ++study.fits;
      if (f.max_rhat) {
        study.max_rhat = std::max(study.max_rhat, *f.max_rhat);
        if (*f.max_rhat > 1.05) ++study.fits_rhat_above;
      }
    }
  }
  if (!ok.empty()) {
    study.mean_sample_size /= static_cast<double>(ok.size());
    for (auto& v : study.mean_subgroup_sizes) v /= static_cast<double>(ok.size());
  }
  return study;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void write_results_csv(std::span<const MetricRow> rows, const std::string& path) {
  std::ostringstream os;
  os << "method,estimand,bias,rmse,ci_length,coverage\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.estimand << ',' << fmt(r.bias) << ',' << fmt(r.rmse) << ',' << fmt(r.ci_length)
       << ',' << fmt(r.coverage) << '\n';
  }
  io::write_file_atomic(path, os.str());
}

void write_count_metrics_csv(std::span<const CellMetricRow> rows, const std::string& path) {
  std::ostringstream os;
  os << "method,cell,bias,rmse,ci_length,coverage,degenerate\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.cell + 1 << ',' << fmt(r.bias) << ',' << fmt(r.rmse) << ',' << fmt(r.ci_length)
       << ',' << fmt(r.coverage) << ',' << (r.degenerate ? 1 : 0) << '\n';
  }
  io::write_file_atomic(path, os.str());
}

void write_replicates_csv(const StudyResult& study, const std::string& path) {
  std::ostringstream os;
  os << "replicate,method,estimand,estimate,se,ci_lower,ci_upper,truth\n";
  for (std::size_t r = 0; r < study.replicates.size(); ++r) {
    for (const auto& s : study.replicates[r].estimates) {
      double truth = study.truths[0];
      for (std::size_t g = 0; g < study.subgroups.size(); ++g) {
        if (study.subgroups[g].name == s.estimand) truth = study.truths[g + 1];
      }
      os << r + 1 << ',' << s.method << ',' << s.estimand << ',' << fmt(s.estimate) << ',' << fmt(s.se) << ','
         << fmt(s.ci_lower) << ',' << fmt(s.ci_upper) << ',' << fmt(truth) << '\n';
    }
  }
  io::write_file_atomic(path, os.str());
}

}  // namespace emrp::sim
