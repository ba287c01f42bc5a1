#include "emrp/synthpop.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "emrp/errors.hpp"
#include "emrp/parallel.hpp"

namespace emrp::synthpop {
namespace {

// Numerators this close to zero are rounding noise from weight normalization.
constexpr double kUnderflowSlack = 1e-9;

double urn_excess(double w, std::size_t unit, bool clamp) {
  const double a = w - 1.0;
  if (a >= 0.0) return a;
  if (clamp || a > -kUnderflowSlack) return 0.0;
  throw UrnUnderflowError(unit, a);
}

std::uint64_t integral_size(double v, const char* what) {
  if (!(v > 0.0) || v != std::floor(v)) {
    throw ValidationError(std::string(what) + " must be a positive integer");
  }
  return static_cast<std::uint64_t>(v);
}

}  // namespace

BBReplicate bayesian_bootstrap(std::size_t n, Rng& rng) {
  if (n == 0) throw ValidationError("Bayesian bootstrap of an empty sample");
  std::vector<double> alpha(n, 1.0);
  std::vector<double> p(n);
  dirichlet(rng, alpha, p);
  BBReplicate out;
  out.counts.resize(n);
  multinomial_sorted(rng, n, p, out.counts);
  return out;
}

std::vector<double> recalibrate_weights(std::span<const double> base_weights,
                                        std::span<const std::uint64_t> replicate, double total) {
  if (base_weights.size() != replicate.size()) {
    throw ValidationError("recalibrate_weights: weight and replicate lengths differ");
  }
  double denom = 0.0;
  for (std::size_t i = 0; i < base_weights.size(); ++i) {
    if (!(base_weights[i] > 0.0)) throw ValidationError("recalibrate_weights: base weights must be positive");
    denom += base_weights[i] * static_cast<double>(replicate[i]);
  }
  if (denom <= 0.0) throw ValidationError("recalibrate_weights: replicate counts are all zero");
  std::vector<double> out(base_weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = total * base_weights[i] * static_cast<double>(replicate[i]) / denom;
  }
  return out;
}

PolyaUrn::PolyaUrn(std::vector<double> weights, double population, bool clamp_nonnegative)
    : weights_(std::move(weights)),
      tallies_(weights_.size(), 0),
      population_(population),
      clamp_(clamp_nonnegative) {
  if (weights_.empty()) throw ValidationError("Polya urn needs at least one unit");
  const auto N = integral_size(population, "urn population");
  if (N <= weights_.size()) throw ValidationError("urn population must exceed the number of units");
  total_draws_ = N - weights_.size();
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw ValidationError("Polya urn weights must be positive");
    total += w;
  }
  if (std::fabs(total - population) > 1e-9 * population) {
    throw ValidationError("Polya urn weights must sum to the population size");
  }
}

std::size_t PolyaUrn::remaining() const noexcept { return total_draws_ - drawn_; }

std::vector<double> PolyaUrn::probabilities() const {
  const double n = static_cast<double>(weights_.size());
  const double extra = static_cast<double>(total_draws_);  // N - n
  const double step = extra / n;
  std::vector<double> p(weights_.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = urn_excess(weights_[i], i, clamp_) + static_cast<double>(tallies_[i]) * step;
    denom += p[i];
  }
  if (!clamp_) {
    // Closed form; equals the sum above when the weights sum to N.
    denom = extra + static_cast<double>(drawn_) * step;
  }
  for (auto& v : p) v /= denom;
  return p;
}

std::size_t PolyaUrn::draw(Rng& rng) {
  if (remaining() == 0) throw ValidationError("Polya urn is exhausted");
  const auto p = probabilities();
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t pick = p.size() - 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) {
      pick = i;
      break;
    }
  }
  // Rounding can leave u above the final partial sum; fall back to the last
  // unit with positive probability.
  while (p[pick] <= 0.0 && pick > 0) --pick;
  ++tallies_[pick];
  ++drawn_;
  return pick;
}

SyntheticPopulation wfpbb_expand(const WeightedSample& sample, std::span<const double> recal_weights,
                                 const CellFrame& frame, const WfpbbOptions& options, Rng& rng) {
  if (recal_weights.size() != sample.size()) throw ValidationError("wfpbb_expand: weight length mismatch");
  if (options.pops_per_draw == 0) throw ValidationError("wfpbb_expand: F must be at least 1");
  const double draw_size = options.pop_draw_size > 0.0 ? options.pop_draw_size : frame.population();
  const auto P = integral_size(draw_size, "population draw size");
  if (P <= sample.size()) throw ValidationError("population draw size must exceed the sample size");

  const std::size_t J = frame.joint_cells();
  std::vector<std::size_t> urn_units;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (recal_weights[i] > 0.0) urn_units.push_back(i);
  }
  if (urn_units.empty()) throw ValidationError("wfpbb_expand: no unit has positive weight");
  const double n_urn = static_cast<double>(urn_units.size());
  const std::uint64_t extra = P - urn_units.size();

  SyntheticPopulation pop;
  pop.cells.assign(J, 0.0);
  pop.cells_y1.assign(J, 0.0);
  pop.size = static_cast<double>(options.pops_per_draw) * static_cast<double>(P);

  // Units already in the urn appear once in every constituent population.
  std::vector<double> base(2 * J, 0.0);  // key = 2 * j + y
  for (auto i : urn_units) {
    const auto& u = sample[i];
    base[2 * frame.joint_index(u.z, u.x) + static_cast<std::size_t>(u.y)] += 1.0;
  }
  auto accumulate_key_counts = [&](std::span<const double> key_counts) {
    for (std::size_t j = 0; j < J; ++j) {
      pop.cells[j] += key_counts[2 * j] + key_counts[2 * j + 1];
      pop.cells_y1[j] += key_counts[2 * j + 1];
    }
  };

  if (options.batched) {
    // The urn is a Dirichlet-multinomial with concentration (w_i - 1) / step,
    // step = (P - n) / n; grouping units by key sums their concentrations.
    const double step = static_cast<double>(extra) / n_urn;
    std::vector<double> alpha(2 * J, 0.0);
    for (auto i : urn_units) {
      const auto& u = sample[i];
      alpha[2 * frame.joint_index(u.z, u.x) + static_cast<std::size_t>(u.y)] +=
          urn_excess(recal_weights[i], i, options.clamp_nonnegative) / step;
    }
    if (std::accumulate(alpha.begin(), alpha.end(), 0.0) <= 0.0) {
      throw ValidationError("wfpbb_expand: every urn weight is at most 1");
    }
    std::vector<double> probs(2 * J);
    std::vector<std::uint64_t> drawn(2 * J);
    std::vector<double> key_counts(2 * J);
    for (std::size_t f = 0; f < options.pops_per_draw; ++f) {
      dirichlet(rng, alpha, probs);
      multinomial(rng, extra, probs, drawn);
      for (std::size_t k = 0; k < key_counts.size(); ++k) {
        key_counts[k] = base[k] + static_cast<double>(drawn[k]);
      }
      accumulate_key_counts(key_counts);
    }
    return pop;
  }

  std::vector<double> urn_weights;
  urn_weights.reserve(urn_units.size());
  for (auto i : urn_units) urn_weights.push_back(recal_weights[i]);
  std::vector<double> key_counts(2 * J);
  for (std::size_t f = 0; f < options.pops_per_draw; ++f) {
    PolyaUrn urn(urn_weights, static_cast<double>(P), options.clamp_nonnegative);
    while (urn.remaining() > 0) urn.draw(rng);
    key_counts = base;
    const auto tallies = urn.tallies();
    for (std::size_t k = 0; k < urn_units.size(); ++k) {
      const auto& u = sample[urn_units[k]];
      key_counts[2 * frame.joint_index(u.z, u.x) + static_cast<std::size_t>(u.y)] +=
          static_cast<double>(tallies[k]);
    }
    accumulate_key_counts(key_counts);
  }
  return pop;
}

std::vector<SyntheticPopulation> wfpbb_populations(const WeightedSample& sample,
                                                   const CellFrame& frame, std::size_t draws,
                                                   const WfpbbOptions& options, std::uint64_t seed,
                                                   std::size_t threads) {
  if (draws == 0) throw ValidationError("WFPBB needs at least one draw");
  if (sample.size() == 0) throw ValidationError("WFPBB of an empty sample");
  std::vector<double> base(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) base[i] = sample[i].w;
  const double draw_size = options.pop_draw_size > 0.0 ? options.pop_draw_size : frame.population();

  std::vector<SyntheticPopulation> out(draws);
  parallel_for(draws, threads, [&](std::size_t l) {
    Rng rng = make_stream(seed, l);
    const auto rep = bayesian_bootstrap(sample.size(), rng);
    const auto w = recalibrate_weights(base, rep.counts, draw_size);
    out[l] = wfpbb_expand(sample, w, frame, options, rng);
  });
  return out;
}

CountDraws counts_from_populations(std::span<const SyntheticPopulation> pops, const CellFrame& frame) {
  CountDraws out(pops.size(), frame.joint_cells(), frame.population());
  for (std::size_t l = 0; l < pops.size(); ++l) {
    if (pops[l].cells.size() != frame.joint_cells()) {
      throw ValidationError("synthetic population does not match the cell frame");
    }
    std::copy(pops[l].cells.begin(), pops[l].cells.end(), out.row(l).begin());
  }
  out.normalize();
  return out;
}

CountDraws counts_wfpbb(const WeightedSample& sample, const CellFrame& frame, std::size_t draws,
                        const WfpbbOptions& options, std::uint64_t seed, std::size_t threads) {
  const auto pops = wfpbb_populations(sample, frame, draws, options, seed, threads);
  return counts_from_populations(pops, frame);
}

CountDraws counts_multinomial(const WeightedSample& sample, const CellFrame& frame, std::size_t draws,
                              std::uint64_t seed) {
  if (draws == 0) throw ValidationError("multinomial counts need at least one draw");
  const auto nz = sample.z_counts(frame);
  const auto nzx = sample.joint_counts(frame);
  for (std::size_t m = 0; m < frame.z_cells(); ++m) {
    if (frame.margin(m) > 0.0 && nz[m] == 0) throw EmptyCellError(m);
  }
  const std::size_t C = frame.x_levels();
  CountDraws out(draws, frame.joint_cells(), frame.population());
  Rng rng(seed);
  std::vector<double> p(C);
  std::vector<std::uint64_t> k(C);
  for (std::size_t l = 0; l < draws; ++l) {
    auto row = out.row(l);
    for (std::size_t m = 0; m < frame.z_cells(); ++m) {
      if (frame.margin(m) == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        p[c] = static_cast<double>(nzx[frame.joint_index(m, c)]) / static_cast<double>(nz[m]);
      }
      multinomial(rng, static_cast<std::uint64_t>(frame.margin(m)), p, k);
      for (std::size_t c = 0; c < C; ++c) row[frame.joint_index(m, c)] = static_cast<double>(k[c]);
    }
  }
  return out;
}

CountDraws counts_twostage(const CellFrame& frame, const Stage1Draws& stage1,
                           const TwoStageOptions& options, std::uint64_t seed) {
  if (frame.x_levels() != 2) {
    throw UnsupportedError("two-stage counts are implemented for binary X only");
  }
  if (stage1.z_cells != frame.z_cells() || stage1.p.size() != stage1.draws * stage1.z_cells) {
    throw ValidationError("stage-1 draws do not match the cell frame");
  }
  if (stage1.draws == 0) throw ValidationError("two-stage counts need at least one stage-1 draw");
  CountDraws out(stage1.draws, frame.joint_cells(), frame.population());
  Rng rng(seed);
  for (std::size_t s = 0; s < stage1.draws; ++s) {
    auto row = out.row(s);
    const auto p = stage1.row(s);
    for (std::size_t m = 0; m < frame.z_cells(); ++m) {
      const double Nm = frame.margin(m);
      if (!(p[m] >= 0.0 && p[m] <= 1.0)) throw ValidationError("stage-1 probability outside [0, 1]");
      const double x1 = options.binomial_allocation
                            ? static_cast<double>(binomial(rng, static_cast<std::uint64_t>(Nm), p[m]))
                            : Nm * p[m];
      row[frame.joint_index(m, 1)] = x1;
      row[frame.joint_index(m, 0)] = Nm - x1;
    }
  }
  return out;
}

void write_count_draws_csv(const CountDraws& draws, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  os.precision(17);
  for (std::size_t j = 0; j < draws.cells(); ++j) os << (j ? "," : "") << 'j' << (j + 1);
  os << '\n';
  for (std::size_t l = 0; l < draws.draws(); ++l) {
    const auto r = draws.row(l);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << r[j];
    os << '\n';
  }
}

}  // namespace emrp::synthpop
