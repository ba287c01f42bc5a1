#include "emrp/bayes_glm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>

#include "emrp/errors.hpp"
#include "emrp/random.hpp"
#include "emrp/simd/kernels.hpp"
#include "emrp/stats.hpp"

namespace emrp::glm {

void ModelSpec::validate() const {
  if (rows == 0) throw ValidationError("model needs at least one design row");
  if (!(prior_scale > 0.0)) throw ValidationError("prior scale must be positive");
  if (intercept && !(intercept_sd > 0.0)) throw ValidationError("intercept prior sd must be positive");
  for (const auto& t : terms) {
    if (t.levels == 0) throw ValidationError("term '" + t.name + "' has no levels");
    if (t.level_of_row.size() != rows) {
      throw ValidationError("term '" + t.name + "' does not cover every design row");
    }
    for (auto lev : t.level_of_row) {
      if (lev >= t.levels) throw ValidationError("term '" + t.name + "' has a level out of range");
    }
    if (t.kappa && !(*t.kappa >= 0.0 && *t.kappa <= 1.0)) {
      throw ValidationError("term '" + t.name + "' has a centering exponent outside [0, 1]");
    }
    if (t.fixed_sigma && !(*t.fixed_sigma > 0.0)) {
      throw ValidationError("term '" + t.name + "' has a non-positive fixed scale");
    }
  }
}

ParamLayout::ParamLayout(const ModelSpec& spec) {
  if (spec.intercept) intercept = dim++;
  for (const auto& t : spec.terms) {
    effect_offset.push_back(dim);
    dim += t.levels;
  }
  for (const auto& t : spec.terms) {
    log_sigma.push_back(t.fixed_sigma ? std::nullopt : std::optional<std::size_t>(dim));
    if (!t.fixed_sigma) ++dim;
  }
}

namespace {

// Orthonormal sum-to-zero basis Q (K x K-1). Column j has weight c_j on rows
// 0..j and -(j+1) c_j on row j+1, with c_j = 1 / sqrt((j+1)(j+2)).
double helmert_c(std::size_t j) {
  const double a = static_cast<double>(j + 1);
  return 1.0 / std::sqrt(a * (a + 1.0));
}

// out = Q v, with v of length K-1.
void helmert_apply(const double* v, std::size_t K, double* out) {
  double suffix = 0.0;
  for (std::size_t k = K; k-- > 0;) {
    if (k + 1 < K) suffix += helmert_c(k) * v[k];
    out[k] = suffix - (k > 0 ? static_cast<double>(k) * helmert_c(k - 1) * v[k - 1] : 0.0);
  }
}

// out = Q^T g, with g of length K.
void helmert_transpose(const double* g, std::size_t K, double* out) {
  double prefix = 0.0;
  for (std::size_t j = 0; j + 1 < K; ++j) {
    prefix += g[j];
    out[j] = helmert_c(j) * (prefix - static_cast<double>(j + 1) * g[j + 1]);
  }
}

double term_sigma(const Term& term, const ParamLayout& layout, std::span<const double> q, std::size_t t) {
  return term.fixed_sigma ? *term.fixed_sigma : std::exp(q[*layout.log_sigma[t]]);
}

}  // namespace

std::vector<std::string> ParamLayout::names(const ModelSpec& spec) const {
  std::vector<std::string> out(dim);
  const bool split = spec.parameterization == Parameterization::split;
  if (intercept) out[*intercept] = split ? "grand_mean" : "Intercept";
  const char* prefix = spec.parameterization == Parameterization::non_centered ? "z_" : "";
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const auto& name = spec.terms[t].name;
    for (std::size_t k = 0; k < spec.terms[t].levels; ++k) {
      if (split) {
        const char* dev = spec.terms[t].kappa.value_or(0.0) == 0.0 ? "_dev[" : "_dev_u[";
        out[effect_offset[t] + k] = k == 0 ? name + "_mean_z" : name + dev + std::to_string(k) + "]";
      } else {
        out[effect_offset[t] + k] = prefix + name + "[" + std::to_string(k + 1) + "]";
      }
    }
    if (log_sigma[t]) out[*log_sigma[t]] = "log_sigma_" + name;
  }
  return out;
}

void ParamLayout::to_natural(const ModelSpec& spec, std::span<const double> q, std::span<double> out) const {
  std::copy(q.begin(), q.end(), out.begin());
  if (spec.parameterization == Parameterization::centered) return;
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const auto& term = spec.terms[t];
    const double sigma = term_sigma(term, *this, q, t);
    const std::size_t off = effect_offset[t];
    if (spec.parameterization == Parameterization::non_centered) {
      for (std::size_t k = 0; k < term.levels; ++k) out[off + k] = sigma * q[off + k];
      continue;
    }
    const double mean = sigma * q[off] / std::sqrt(static_cast<double>(term.levels));
    const double dev_scale = std::pow(sigma, term.kappa.value_or(0.0));
    helmert_apply(q.data() + off + 1, term.levels, out.data() + off);
    for (std::size_t k = 0; k < term.levels; ++k) out[off + k] = dev_scale * out[off + k] + mean;
    if (intercept) out[*intercept] -= mean;
  }
}

LogPosterior::LogPosterior(const ModelSpec& spec, const BinomialData& data)
    : spec_(&spec), data_(&data), layout_(spec) {
  spec.validate();
  if (data.successes.size() != spec.rows || data.trials.size() != spec.rows) {
    throw ValidationError("data rows do not match the model design");
  }
  for (std::size_t r = 0; r < spec.rows; ++r) {
    if (data.trials[r] < 0.0 || data.successes[r] < 0.0 || data.successes[r] > data.trials[r]) {
      throw ValidationError("row " + std::to_string(r + 1) + " has invalid binomial counts");
    }
  }
  eta_.resize(spec.rows);
  resid_.resize(spec.rows);
  sigma_.resize(spec.terms.size());
  std::size_t max_levels = 0;
  for (const auto& t : spec.terms) max_levels = std::max(max_levels, t.levels);
  group_score_.resize(max_levels);
  work_.resize(max_levels);
  natural_.resize(layout_.dim);
}

namespace {

void eta_from_natural(const ModelSpec& spec, const ParamLayout& layout, std::span<const double> nat,
                      std::span<double> eta) {
  const double b0 = layout.intercept ? nat[*layout.intercept] : 0.0;
  std::fill(eta.begin(), eta.end(), b0);
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const auto& term = spec.terms[t];
    const double* eff = nat.data() + layout.effect_offset[t];
    for (std::size_t r = 0; r < spec.rows; ++r) eta[r] += eff[term.level_of_row[r]];
  }
}

}  // namespace

void LogPosterior::linear_predictor(std::span<const double> q, std::span<double> eta) const {
  std::vector<double> nat(layout_.dim);
  layout_.to_natural(*spec_, q, nat);
  eta_from_natural(*spec_, layout_, nat, eta);
}

double LogPosterior::operator()(std::span<const double> q, std::span<double> grad) {
  const auto& spec = *spec_;
  const auto param = spec.parameterization;
  for (std::size_t t = 0; t < spec.terms.size(); ++t) sigma_[t] = term_sigma(spec.terms[t], layout_, q, t);
  layout_.to_natural(spec, q, natural_);
  eta_from_natural(spec, layout_, natural_, eta_);
  double lp = simd::logistic_loglik(eta_, data_->successes, data_->trials, resid_);
  std::fill(grad.begin(), grad.end(), 0.0);

  double total = 0.0;
  for (double r : resid_) total += r;
  // Intercept prior acts on the natural intercept b0; in the split form b0
  // also depends on each term's level mean.
  double b0_score = 0.0;
  if (layout_.intercept) {
    const auto i = *layout_.intercept;
    const double v = spec.intercept_sd * spec.intercept_sd;
    const double b0 = natural_[i];
    lp -= 0.5 * b0 * b0 / v;
    b0_score = -b0 / v;
    grad[i] = total + b0_score;
  }

  const double a2 = spec.prior_scale * spec.prior_scale;
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const auto& term = spec.terms[t];
    const double sigma = sigma_[t];
    const double s2 = sigma * sigma;
    const std::size_t off = layout_.effect_offset[t];
    const std::size_t K = term.levels;
    const double Kd = static_cast<double>(K);
    std::fill(group_score_.begin(), group_score_.begin() + static_cast<std::ptrdiff_t>(K), 0.0);
    for (std::size_t r = 0; r < spec.rows; ++r) group_score_[term.level_of_row[r]] += resid_[r];

    double d_log_sigma = 0.0;
    if (param == Parameterization::split) {
      // alpha = sigma w / sqrt(K) + Q v; w ~ N(0, 1), v ~ N(0, sigma^2 I).
      const double w = q[off];
      const double dmean_dw = sigma / std::sqrt(Kd);
      double score_sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) score_sum += group_score_[k];
      // With an intercept the level mean cancels out of eta and enters only
      // through b0 = grand_mean - sum of level means.
      const double mean_score = layout_.intercept ? -b0_score : score_sum;
      grad[off] = dmean_dw * mean_score - w;
      d_log_sigma = dmean_dw * w * mean_score;
      helmert_transpose(group_score_.data(), K, work_.data());
      // v = sigma^kappa u, u ~ N(0, sigma^(2 - 2 kappa)).
      const double kappa = term.kappa.value_or(0.0);
      const double dev_scale = std::pow(sigma, kappa);
      const double u_var = s2 / (dev_scale * dev_scale);
      double sum_sq = 0.0, lik_sigma = 0.0;
      for (std::size_t j = 0; j + 1 < K; ++j) {
        const double u = q[off + 1 + j];
        sum_sq += u * u;
        lik_sigma += u * work_[j];
        grad[off + 1 + j] = dev_scale * work_[j] - u / u_var;
      }
      lp -= 0.5 * w * w + 0.5 * sum_sq / u_var + (Kd - 1.0) * (1.0 - kappa) * std::log(sigma);
      d_log_sigma += kappa * dev_scale * lik_sigma + (1.0 - kappa) * (sum_sq / u_var - (Kd - 1.0));
    } else if (param == Parameterization::non_centered) {
      // alpha = sigma z; z ~ N(0, 1).
      double sum_sq = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double z = q[off + k];
        sum_sq += z * z;
        grad[off + k] = sigma * group_score_[k] - z;
        d_log_sigma += sigma * z * group_score_[k];
      }
      lp -= 0.5 * sum_sq;
    } else {
      // alpha ~ N(0, sigma^2).
      double sum_sq = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double e = q[off + k];
        sum_sq += e * e;
        grad[off + k] = group_score_[k] - e / s2;
      }
      lp -= 0.5 * sum_sq / s2 + Kd * std::log(sigma);
      d_log_sigma = sum_sq / s2 - Kd;
    }
    if (layout_.log_sigma[t]) {
      // half-Cauchy(0, a) on sigma plus the log-transform Jacobian.
      lp += -std::log1p(s2 / a2) + std::log(sigma);
      grad[*layout_.log_sigma[t]] = d_log_sigma + 1.0 - 2.0 * s2 / (a2 + s2);
    }
  }
  return lp;
}

void choose_centering(ModelSpec& spec, const BinomialData& data, double threshold, double weak_kappa) {
  if (data.successes.size() != spec.rows || data.trials.size() != spec.rows) {
    throw ValidationError("data rows do not match the model design");
  }
  for (auto& term : spec.terms) {
    if (term.kappa) continue;
    std::vector<double> s(term.levels, 0.0), n(term.levels, 0.0);
    for (std::size_t r = 0; r < spec.rows; ++r) {
      s[term.level_of_row[r]] += data.successes[r];
      n[term.level_of_row[r]] += data.trials[r];
    }
    // Precision-weighted spread of smoothed empirical logits.
    std::vector<double> logit(term.levels), prec(term.levels);
    double wsum = 0.0, wmean = 0.0;
    for (std::size_t k = 0; k < term.levels; ++k) {
      const double a = s[k] + 0.5, b = n[k] - s[k] + 0.5;
      logit[k] = std::log(a / b);
      prec[k] = 1.0 / (1.0 / a + 1.0 / b);
      wsum += prec[k];
      wmean += prec[k] * logit[k];
    }
    wmean /= wsum;
    double q = 0.0;
    for (std::size_t k = 0; k < term.levels; ++k) q += prec[k] * (logit[k] - wmean) * (logit[k] - wmean);
    const double df = static_cast<double>(term.levels) - 1.0;
    term.kappa = df > 0.0 && q / df >= threshold ? 0.0 : weak_kappa;
  }
}

LogPosteriorValue log_posterior(const ModelSpec& spec, const BinomialData& data,
                                std::span<const double> params) {
  LogPosterior eval(spec, data);
  if (params.size() != eval.dim()) throw ValidationError("parameter vector has the wrong length");
  for (double v : params) {
    if (!std::isfinite(v)) throw ValidationError("non-finite parameter value");
  }
  LogPosteriorValue out;
  out.gradient.resize(eval.dim());
  out.value = eval(params, out.gradient);
  return out;
}

std::size_t PosteriorFit::total_draws() const {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.kept();
  return n;
}

std::vector<double> PosteriorFit::merged() const {
  std::vector<double> out;
  out.reserve(total_draws() * dim());
  for (const auto& c : chains) out.insert(out.end(), c.draws.begin(), c.draws.end());
  return out;
}

namespace {

ModelSpec with_fit_centering(const ModelSpec& spec, const PosteriorFit& fit) {
  ModelSpec out = spec;
  if (fit.kappa.size() == out.terms.size()) {
    for (std::size_t t = 0; t < out.terms.size(); ++t) out.terms[t].kappa = fit.kappa[t];
  }
  return out;
}

}  // namespace

PosteriorFit sample(const ModelSpec& spec_in, const BinomialData& data, const SamplerConfig& config) {
  spec_in.validate();
  {
    // Validate data once up front so chain construction cannot throw mid-run.
    LogPosterior check(spec_in, data);
  }
  ModelSpec spec = spec_in;
  if (spec.parameterization == Parameterization::split) choose_centering(spec, data);
  const ParamLayout layout(spec);
  hmc::Config hc;
  hc.chains = config.chains;
  hc.iterations = config.iterations;
  hc.warmup = config.warmup;
  hc.seed = config.seed;
  hc.target_accept = config.target_accept;
  hc.algorithm = config.algorithm;
  hc.max_depth = config.max_depth;
  hc.integration_time = config.integration_time;
  hc.threads = config.threads;
  hc.dense_metric = config.dense_metric;

  auto make_density = [&]() -> hmc::LogDensity {
    auto eval = std::make_shared<LogPosterior>(spec, data);
    return [eval](std::span<const double> q, std::span<double> g) { return (*eval)(q, g); };
  };

  PosteriorFit fit;
  fit.names = layout.names(spec);
  for (const auto& t : spec.terms) fit.kappa.push_back(t.kappa.value_or(0.0));
  fit.warmup = config.warmup;
  fit.iterations = config.iterations;
  fit.chains = hmc::run_chains(make_density, layout.dim, hc);
  fit.diagnostics = diagnose(fit.chains);

  const double div_rate =
      static_cast<double>(fit.diagnostics.divergences) / static_cast<double>(fit.total_draws());
  if (div_rate > 0.10) {
    fit.warnings.push_back("divergent transitions in " + std::to_string(fit.diagnostics.divergences) +
                           " of " + std::to_string(fit.total_draws()) + " kept iterations");
  }
  for (std::size_t k = 0; k < fit.dim(); ++k) {
    const auto& r = fit.diagnostics.rhat[k];
    if (r && std::isfinite(*r) && *r > 1.05) {
      fit.warnings.push_back("split R-hat " + std::to_string(*r) + " for " + fit.names[k]);
    }
    if (std::isfinite(fit.diagnostics.ess_bulk[k]) && fit.diagnostics.ess_bulk[k] < 100.0) {
      fit.warnings.push_back("bulk ESS " + std::to_string(fit.diagnostics.ess_bulk[k]) + " for " +
                             fit.names[k]);
    }
  }
  return fit;
}

CellMeanDraws cell_means(const PosteriorFit& fit, const ModelSpec& spec_in) {
  const ModelSpec spec = with_fit_centering(spec_in, fit);
  const ParamLayout layout(spec);
  if (layout.dim != fit.dim()) throw ValidationError("fit does not match the model");
  BinomialData empty{std::vector<double>(spec.rows, 0.0), std::vector<double>(spec.rows, 0.0)};
  LogPosterior eval(spec, empty);
  CellMeanDraws out(fit.total_draws(), spec.rows);
  // Saturated predictors would round to exactly 0 or 1.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  std::size_t s = 0;
  for (const auto& chain : fit.chains) {
    for (std::size_t i = 0; i < chain.kept(); ++i, ++s) {
      auto row = out.row(s);
      eval.linear_predictor(chain.draw(i), row);
      for (auto& v : row) v = std::clamp(expit(v), lo, hi);
    }
  }
  return out;
}

std::vector<PredictiveCheck> posterior_predictive_check(const PosteriorFit& fit, const ModelSpec& spec,
                                                        std::span<const std::size_t> row_of_unit,
                                                        std::span<const int> y,
                                                        std::span<const PredictiveSubgroup> subgroups,
                                                        std::uint64_t seed) {
  if (row_of_unit.size() != y.size()) throw ValidationError("unit rows and outcomes differ in length");
  for (auto r : row_of_unit) {
    if (r >= spec.rows) throw ValidationError("unit mapped to a design row out of range");
  }
  const auto means = cell_means(fit, spec);
  std::vector<PredictiveCheck> out;
  for (std::size_t g = 0; g < subgroups.size(); ++g) {
    const auto& sg = subgroups[g];
    PredictiveCheck pc;
    pc.name = sg.name;
    if (sg.units.empty()) {
      pc.skipped = true;
      out.push_back(std::move(pc));
      continue;
    }
    // Units in the same row share a fitted probability, so their predictive
    // sum is one binomial draw.
    std::vector<std::uint64_t> per_row(spec.rows, 0);
    double observed = 0.0;
    for (auto i : sg.units) {
      if (i >= row_of_unit.size()) throw ValidationError("subgroup references a unit out of range");
      ++per_row[row_of_unit[i]];
      observed += y[i];
    }
    const double n_k = static_cast<double>(sg.units.size());
    pc.observed = observed / n_k;
    pc.draws.resize(means.draws());
    Rng rng = make_stream(seed, g);
    for (std::size_t s = 0; s < means.draws(); ++s) {
      const auto theta = means.row(s);
      std::uint64_t total = 0;
      for (std::size_t r = 0; r < spec.rows; ++r) {
        if (per_row[r] > 0) total += binomial(rng, per_row[r], theta[r]);
      }
      pc.draws[s] = static_cast<double>(total) / n_k;
    }
    out.push_back(std::move(pc));
  }
  return out;
}

void write_draws_csv(const PosteriorFit& fit, const ModelSpec& spec_in, const std::string& path) {
  const ModelSpec spec = with_fit_centering(spec_in, fit);
  const ParamLayout layout(spec);
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  os.precision(17);
  std::vector<std::string> cols;
  if (layout.intercept) cols.push_back("Intercept");
  for (const auto& t : spec.terms) {
    for (std::size_t k = 0; k < t.levels; ++k) cols.push_back(t.name + "[" + std::to_string(k + 1) + "]");
  }
  for (const auto& t : spec.terms) cols.push_back("sigma_" + t.name);
  cols.push_back("lp__");
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
  std::vector<double> nat(layout.dim);
  for (const auto& chain : fit.chains) {
    for (std::size_t s = 0; s < chain.kept(); ++s) {
      const auto q = chain.draw(s);
      layout.to_natural(spec, q, nat);
      std::vector<double> row;
      if (layout.intercept) row.push_back(nat[*layout.intercept]);
      for (std::size_t t = 0; t < spec.terms.size(); ++t) {
        for (std::size_t k = 0; k < spec.terms[t].levels; ++k) row.push_back(nat[layout.effect_offset[t] + k]);
      }
      for (std::size_t t = 0; t < spec.terms.size(); ++t) row.push_back(term_sigma(spec.terms[t], layout, q, t));
      row.push_back(chain.lp[s]);
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
      os << '\n';
    }
  }
}

namespace {

BinomialData aggregate(const WeightedSample& sample, std::size_t rows, auto row_of, auto success) {
  BinomialData d{std::vector<double>(rows, 0.0), std::vector<double>(rows, 0.0)};
  for (const auto& u : sample.units()) {
    const auto r = row_of(u);
    d.trials[r] += 1.0;
    d.successes[r] += success(u);
  }
  return d;
}

}  // namespace

BinomialData aggregate_outcome_by_joint_cell(const WeightedSample& sample, const CellFrame& frame) {
  return aggregate(
      sample, frame.joint_cells(), [&](const SampleUnit& u) { return frame.joint_index(u.z, u.x); },
      [](const SampleUnit& u) { return static_cast<double>(u.y); });
}

BinomialData aggregate_outcome_by_z_cell(const WeightedSample& sample, const CellFrame& frame) {
  return aggregate(
      sample, frame.z_cells(), [](const SampleUnit& u) { return u.z; },
      [](const SampleUnit& u) { return static_cast<double>(u.y); });
}

BinomialData aggregate_x_by_z_cell(const WeightedSample& sample, const CellFrame& frame,
                                   std::size_t level) {
  if (level >= frame.x_levels()) throw ValidationError("X level out of range");
  return aggregate(
      sample, frame.z_cells(), [](const SampleUnit& u) { return u.z; },
      [level](const SampleUnit& u) { return u.x == level ? 1.0 : 0.0; });
}

}  // namespace emrp::glm
