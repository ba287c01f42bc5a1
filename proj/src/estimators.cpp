#include "emrp/estimators.hpp"

#include <cmath>
#include <json.hpp>

#include "emrp/errors.hpp"
#include "emrp/random.hpp"
#include "emrp/simd/kernels.hpp"
#include "emrp/stats.hpp"

namespace emrp::est {
namespace {

std::vector<std::vector<double>> subgroup_masks(std::span<const SubgroupDef> subgroups,
                                                std::size_t cells) {
  std::vector<std::vector<double>> masks;
  masks.reserve(subgroups.size());
  for (const auto& g : subgroups) masks.push_back(g.mask(cells));
  return masks;
}

std::vector<EstimandDraws> empty_draws(std::span<const SubgroupDef> subgroups, std::size_t reserve) {
  std::vector<EstimandDraws> out(subgroups.size() + 1);
  out[0].estimand = kOverall;
  for (std::size_t g = 0; g < subgroups.size(); ++g) out[g + 1].estimand = subgroups[g].name;
  for (auto& d : out) d.values.reserve(reserve);
  return out;
}

// Appends one draw's overall and subgroup values.
void accumulate(std::span<const double> n_hat, std::span<const double> theta, double population,
                const std::vector<std::vector<double>>& masks, std::vector<EstimandDraws>& out) {
  out[0].values.push_back(simd::dot(n_hat, theta) / population);
  for (std::size_t g = 0; g < masks.size(); ++g) {
    const auto s = simd::masked_dot2(n_hat, theta, masks[g]);
    if (s.weight > 0.0) {
      out[g + 1].values.push_back(s.weighted / s.weight);
    } else {
      ++out[g + 1].skipped;
    }
  }
}

void check_cells(std::size_t count_cells, std::size_t mean_cells) {
  if (count_cells != mean_cells) {
    throw ValidationError("count draws have " + std::to_string(count_cells) +
                          " cells but mean draws have " + std::to_string(mean_cells));
  }
}

}  // namespace

std::vector<EstimandDraws> emrp_draws(const CountDraws& counts, const CellMeanDraws& means,
                                      std::span<const SubgroupDef> subgroups,
                                      const PairingOptions& options) {
  check_cells(counts.cells(), means.cells());
  const std::size_t K = std::min(counts.draws(), means.draws());
  if (K == 0) throw ValidationError("no draws to pair");
  std::vector<std::size_t> count_order(counts.draws());
  std::vector<std::size_t> mean_order(means.draws());
  if (options.shuffle) {
    Rng a = make_stream(options.seed, 0);
    Rng b = make_stream(options.seed, 1);
    count_order = permutation(a, counts.draws());
    mean_order = permutation(b, means.draws());
  } else {
    for (std::size_t i = 0; i < count_order.size(); ++i) count_order[i] = i;
    for (std::size_t i = 0; i < mean_order.size(); ++i) mean_order[i] = i;
  }
  const auto masks = subgroup_masks(subgroups, counts.cells());
  auto out = empty_draws(subgroups, K);
  for (std::size_t k = 0; k < K; ++k) {
    accumulate(counts.row(count_order[k]), means.row(mean_order[k]), counts.population(), masks, out);
  }
  return out;
}

std::vector<EstimandDraws> mrp_draws(std::span<const double> counts, const CellMeanDraws& means,
                                     std::span<const SubgroupDef> subgroups) {
  check_cells(counts.size(), means.cells());
  if (means.draws() == 0) throw ValidationError("no cell-mean draws");
  double population = 0.0;
  for (double v : counts) {
    if (!(v >= 0.0)) throw ValidationError("known cell counts must be nonnegative");
    population += v;
  }
  if (!(population > 0.0)) throw ValidationError("known cell counts sum to zero");
  const auto masks = subgroup_masks(subgroups, counts.size());
  auto out = empty_draws(subgroups, means.draws());
  for (std::size_t s = 0; s < means.draws(); ++s) accumulate(counts, means.row(s), population, masks, out);
  return out;
}

EstimateSummary summarize(const std::string& method, const EstimandDraws& draws,
                          double max_skip_fraction) {
  const std::size_t total = draws.values.size() + draws.skipped;
  if (draws.values.empty() ||
      static_cast<double>(draws.skipped) > max_skip_fraction * static_cast<double>(total)) {
    throw EstimationError("estimand '" + draws.estimand + "' is undefined in " +
                          std::to_string(draws.skipped) + " of " + std::to_string(total) +
                          " draws (zero population mass)");
  }
  const auto s = summarize_draws(draws.values);
  EstimateSummary out;
  out.method = method;
  out.estimand = draws.estimand;
  out.estimate = s.mean;
  out.se = s.sd;
  out.ci_lower = s.lower;
  out.ci_upper = s.upper;
  out.n_draws = draws.values.size();
  out.skipped_draws = draws.skipped;
  return out;
}

namespace {

std::vector<EstimateSummary> summarize_all(const std::string& method,
                                           const std::vector<EstimandDraws>& draws,
                                           double max_skip_fraction) {
  std::vector<EstimateSummary> out;
  out.reserve(draws.size());
  for (const auto& d : draws) out.push_back(summarize(method, d, max_skip_fraction));
  return out;
}

}  // namespace

std::vector<EstimateSummary> emrp_estimate(const std::string& method, const CountDraws& counts,
                                           const CellMeanDraws& means,
                                           std::span<const SubgroupDef> subgroups,
                                           const PairingOptions& options) {
  return summarize_all(method, emrp_draws(counts, means, subgroups, options), options.max_skip_fraction);
}

std::vector<EstimateSummary> mrp_estimate(const std::string& method, std::span<const double> counts,
                                          const CellMeanDraws& means,
                                          std::span<const SubgroupDef> subgroups) {
  return summarize_all(method, mrp_draws(counts, means, subgroups), 0.01);
}

VarianceDecomposition decompose_variance(std::span<const double> grid, std::size_t groups,
                                         std::size_t per_group) {
  if (groups < 2) throw ValidationError("variance decomposition needs at least two count draws");
  if (per_group < 1) throw ValidationError("variance decomposition needs mean draws per group");
  if (grid.size() != groups * per_group) throw ValidationError("grid size does not match G x R");
  const double R = static_cast<double>(per_group);
  const double G = static_cast<double>(groups);
  double grand = 0.0;
  for (double v : grid) grand += v;
  grand /= G * R;

  VarianceDecomposition d;
  for (std::size_t g = 0; g < groups; ++g) {
    const auto row = grid.subspan(g * per_group, per_group);
    double m = 0.0;
    for (double v : row) m += v;
    m /= R;
    double ss = 0.0;
    for (double v : row) ss += (v - m) * (v - m);
    d.within += ss / R;
    d.between += (m - grand) * (m - grand);
  }
  d.within /= G;
  d.between /= G;
  for (double v : grid) d.total += (v - grand) * (v - grand);
  d.total /= G * R;
  return d;
}

VarianceDecomposition emrp_variance_decomposition(const CountDraws& counts, const CellMeanDraws& means,
                                                  std::span<const double> mask, std::size_t groups,
                                                  std::size_t per_group) {
  check_cells(counts.cells(), means.cells());
  if (groups > counts.draws()) throw ValidationError("more groups requested than count draws");
  if (means.draws() == 0) throw ValidationError("no cell-mean draws");
  std::vector<double> all;
  if (mask.empty()) {
    all.assign(counts.cells(), 1.0);
    mask = all;
  }
  if (mask.size() != counts.cells()) throw ValidationError("mask length does not match the cells");
  std::vector<double> grid(groups * per_group);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t r = 0; r < per_group; ++r) {
      const auto s = simd::masked_dot2(counts.row(g), means.row((g * per_group + r) % means.draws()), mask);
      if (!(s.weight > 0.0)) throw EstimationError("estimand has zero mass in a count draw");
      grid[g * per_group + r] = s.weighted / s.weight;
    }
  }
  return decompose_variance(grid, groups, per_group);
}

std::vector<EstimandDraws> wfpbb_direct_draws(std::span<const synthpop::SyntheticPopulation> pops,
                                              std::span<const SubgroupDef> subgroups) {
  if (pops.empty()) throw ValidationError("no synthetic populations");
  const std::size_t J = pops.front().cells.size();
  const auto masks = subgroup_masks(subgroups, J);
  auto out = empty_draws(subgroups, pops.size());
  const std::vector<double> ones(J, 1.0);
  for (const auto& p : pops) {
    if (p.cells.size() != J || p.cells_y1.size() != J) {
      throw ValidationError("synthetic populations differ in cell layout");
    }
    const auto all = simd::masked_dot2(p.cells_y1, ones, ones);
    const auto size = simd::masked_dot2(p.cells, ones, ones);
    out[0].values.push_back(all.weighted / size.weighted);
    for (std::size_t g = 0; g < masks.size(); ++g) {
      const auto y1 = simd::masked_dot2(p.cells_y1, ones, masks[g]);
      const auto n = simd::masked_dot2(p.cells, ones, masks[g]);
      if (n.weighted > 0.0) {
        out[g + 1].values.push_back(y1.weighted / n.weighted);
      } else {
        ++out[g + 1].skipped;
      }
    }
  }
  return out;
}

std::vector<EstimateSummary> wfpbb_direct_estimate(const std::string& method,
                                                   std::span<const synthpop::SyntheticPopulation> pops,
                                                   std::span<const SubgroupDef> subgroups,
                                                   double max_skip_fraction) {
  return summarize_all(method, wfpbb_direct_draws(pops, subgroups), max_skip_fraction);
}

std::vector<EstimateSummary> unweighted_estimate(const WeightedSample& sample, const CellFrame& frame,
                                                 std::span<const SubgroupDef> subgroups) {
  const auto masks = subgroup_masks(subgroups, frame.joint_cells());
  std::vector<double> n(subgroups.size() + 1, 0.0);
  std::vector<double> ones(subgroups.size() + 1, 0.0);
  for (const auto& u : sample.units()) {
    const auto j = frame.joint_index(u.z, u.x);
    n[0] += 1.0;
    ones[0] += u.y;
    for (std::size_t g = 0; g < masks.size(); ++g) {
      if (masks[g][j] > 0.0) {
        n[g + 1] += 1.0;
        ones[g + 1] += u.y;
      }
    }
  }
  std::vector<EstimateSummary> out;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const std::string name = k == 0 ? std::string(kOverall) : subgroups[k - 1].name;
    if (n[k] < 1.0) throw EstimationError("subgroup '" + name + "' has no sampled units");
    const double p = ones[k] / n[k];
    const double se = std::sqrt(p * (1.0 - p) / n[k]);
    EstimateSummary s;
    s.method = "unweighted";
    s.estimand = name;
    s.estimate = p;
    s.se = se;
    s.ci_lower = p - 1.96 * se;
    s.ci_upper = p + 1.96 * se;
    s.n_draws = static_cast<std::size_t>(n[k]);
    out.push_back(s);
  }
  return out;
}

std::string to_json(std::span<const EstimateSummary> summaries) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : summaries) {
    arr.push_back({{"method", s.method},
                   {"estimand", s.estimand},
                   {"estimate", s.estimate},
                   {"se", s.se},
                   {"ci_lower", s.ci_lower},
                   {"ci_upper", s.ci_upper},
                   {"n_draws", s.n_draws},
                   {"skipped_draws", s.skipped_draws}});
  }
  return arr.dump(2) + "\n";
}

std::vector<EstimateSummary> from_json(const std::string& text) {
  std::vector<EstimateSummary> out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed estimate JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ValidationError("estimate JSON must be an array");
  try {
    for (const auto& o : doc) {
      EstimateSummary s;
      s.method = o.at("method").get<std::string>();
      s.estimand = o.at("estimand").get<std::string>();
      s.estimate = o.at("estimate").get<double>();
      s.se = o.at("se").get<double>();
      s.ci_lower = o.at("ci_lower").get<double>();
      s.ci_upper = o.at("ci_upper").get<double>();
      s.n_draws = o.value("n_draws", std::size_t{0});
      s.skipped_draws = o.value("skipped_draws", std::size_t{0});
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed estimate record: ") + e.what());
  }
  return out;
}

}  // namespace emrp::est
