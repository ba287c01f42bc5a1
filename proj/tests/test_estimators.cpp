#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "emrp/errors.hpp"
#include "emrp/estimators.hpp"
#include "emrp/random.hpp"
#include "emrp/stats.hpp"

using namespace emrp;
using namespace emrp::est;

namespace {

struct Draws {
  CountDraws counts;
  CellMeanDraws means;
};

Draws random_draws(std::size_t L, std::size_t S, std::size_t J, double N, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  Draws d{CountDraws(L, J, N), CellMeanDraws(S, J)};
  for (std::size_t l = 0; l < L; ++l) {
    auto row = d.counts.row(l);
    for (auto& v : row) v = 1.0 + 50.0 * uniform01(rng);
  }
  d.counts.normalize();
  for (std::size_t s = 0; s < S; ++s) {
    for (auto& v : d.means.row(s)) v = uniform01(rng);
  }
  return d;
}

}  // namespace

TEST_CASE("pairing uses min(L, S) draws") {
  const auto d = random_draws(30, 50, 6, 1000, 1);
  const std::vector<SubgroupDef> groups = {{"g", {0, 1}}};
  const auto out = emrp_draws(d.counts, d.means, groups);
  CHECK(out[0].values.size() == 30);
  CHECK(out[0].estimand == "overall");
  CHECK(out[1].estimand == "g");
  const auto again = emrp_draws(d.counts, d.means, groups);
  CHECK(out[0].values == again[0].values);
}

TEST_CASE("subgroup estimates are convex combinations and partitions add up") {
  const std::size_t J = 8;
  const auto d = random_draws(40, 40, J, 5000, 2);
  const std::vector<SubgroupDef> parts = {{"a", {0, 2, 4}}, {"b", {1, 3, 5, 6, 7}}};
  PairingOptions po;
  po.shuffle = false;
  const auto out = emrp_draws(d.counts, d.means, parts, po);
  for (std::size_t k = 0; k < 40; ++k) {
    const auto n = d.counts.row(k);
    const auto th = d.means.row(k);
    double na = 0.0, nb = 0.0;
    for (auto j : parts[0].cells) na += n[j];
    for (auto j : parts[1].cells) nb += n[j];
    const double recombined = (na * out[1].values[k] + nb * out[2].values[k]) / (na + nb);
    CHECK(std::abs(recombined - out[0].values[k]) <= 1e-12);
    double lo = 1.0, hi = 0.0;
    for (auto j : parts[0].cells) {
      lo = std::min(lo, th[j]);
      hi = std::max(hi, th[j]);
    }
    CHECK(out[1].values[k] >= lo - 1e-12);
    CHECK(out[1].values[k] <= hi + 1e-12);
  }
}

TEST_CASE("known-count estimator matches direct arithmetic") {
  CellMeanDraws m(2, 3);
  m.row(0)[0] = 0.1, m.row(0)[1] = 0.5, m.row(0)[2] = 0.9;
  m.row(1)[0] = 0.2, m.row(1)[1] = 0.4, m.row(1)[2] = 0.6;
  const std::vector<double> counts = {10, 30, 60};
  const std::vector<SubgroupDef> g = {{"first_two", {0, 1}}};
  const auto out = mrp_draws(counts, m, g);
  CHECK(out[0].values[0] == doctest::Approx((1 + 15 + 54) / 100.0));
  CHECK(out[1].values[1] == doctest::Approx((2 + 12) / 40.0));
  CHECK_THROWS_AS(mrp_draws(std::vector<double>{0, 0, 0}, m, g), ValidationError);
}

TEST_CASE("summaries report mean, sd and type-7 bounds") {
  EstimandDraws d{"x", {}, 0};
  for (int i = 1; i <= 10; ++i) d.values.push_back(i);
  const auto s = summarize("m", d);
  CHECK(s.estimate == 5.5);
  CHECK(s.se == doctest::Approx(sample_sd(d.values)));
  CHECK(s.ci_lower == doctest::Approx(1.225));
  CHECK(s.ci_upper == doctest::Approx(9.775));
  CHECK(s.n_draws == 10);
}

TEST_CASE("skipped draws are counted and too many fail") {
  EstimandDraws d{"g", std::vector<double>(990, 0.5), 10};
  CHECK(summarize("m", d).skipped_draws == 10);
  d.skipped = 11;
  CHECK_THROWS_AS(summarize("m", d), EstimationError);

  // A subgroup whose only cell has zero count in every draw.
  CountDraws c(5, 2, 10);
  for (std::size_t l = 0; l < 5; ++l) c.row(l)[0] = 10.0;
  const auto m = random_draws(1, 5, 2, 10, 3).means;
  const std::vector<SubgroupDef> g = {{"empty", {1}}};
  const auto out = emrp_draws(c, m, g);
  CHECK(out[1].skipped == 5);
  CHECK_THROWS_AS(emrp_estimate("m", c, m, g), EstimationError);
}

TEST_CASE("variance decomposition adds up and matches brute force") {
  Rng rng = make_stream(8, 0);
  const std::size_t G = 7, R = 5;
  std::vector<double> grid(G * R);
  for (auto& v : grid) v = standard_normal(rng) + 3.0;
  const auto d = decompose_variance(grid, G, R);
  CHECK(std::abs(d.between + d.within - d.total) <= 1e-9 * d.total);
  // Total with the 1/n convention.
  const double m = mean(grid);
  double ss = 0.0;
  for (double v : grid) ss += (v - m) * (v - m);
  CHECK(d.total == doctest::Approx(ss / grid.size()).epsilon(1e-12));
  CHECK_THROWS_AS(decompose_variance(grid, 1, G * R), ValidationError);

  const auto draws = random_draws(60, 200, 5, 800, 9);
  const auto e = emrp_variance_decomposition(draws.counts, draws.means, {}, 50, 4);
  CHECK(std::abs(e.between + e.within - e.total) <= 1e-9 * e.total);
}

TEST_CASE("direct estimates from synthetic populations") {
  std::vector<synthpop::SyntheticPopulation> pops(2);
  pops[0].cells = {10, 20, 30};
  pops[0].cells_y1 = {5, 5, 0};
  pops[1].cells = {10, 0, 30};
  pops[1].cells_y1 = {10, 0, 3};
  const std::vector<SubgroupDef> g = {{"mid", {1}}};
  const auto out = wfpbb_direct_draws(pops, g);
  CHECK(out[0].values[0] == doctest::Approx(10.0 / 60.0));
  CHECK(out[0].values[1] == doctest::Approx(13.0 / 40.0));
  CHECK(out[1].values.size() == 1);
  CHECK(out[1].skipped == 1);
}

TEST_CASE("unweighted proportions use Wald intervals") {
  const auto frame = build_cell_frame(2, 2, {50, 50});
  std::vector<SampleUnit> units;
  for (int i = 0; i < 10; ++i) units.push_back({static_cast<std::size_t>(i % 2), 0, i < 3 ? 1 : 0, 1.0});
  const WeightedSample sample(frame, units);
  const std::vector<SubgroupDef> g = {{"z1", {frame.joint_index(0, 0)}}};
  const auto out = unweighted_estimate(sample, frame, g);
  CHECK(out[0].estimate == doctest::Approx(0.3));
  CHECK(out[0].se == doctest::Approx(std::sqrt(0.21 / 10)));
  CHECK(out[0].ci_lower == doctest::Approx(0.3 - 1.96 * std::sqrt(0.021)));
  CHECK(out[1].estimate == doctest::Approx(0.4));  // units 0, 2, 4, 6, 8
  const std::vector<SubgroupDef> none = {{"x2", {frame.joint_index(0, 1)}}};
  CHECK_THROWS_AS(unweighted_estimate(sample, frame, none), EstimationError);
}

TEST_CASE("estimate JSON round trip") {
  std::vector<EstimateSummary> s(2);
  s[0] = {"wfpbb", "overall", 0.123456789012345, 0.01, 0.1, 0.15, 1000, 0};
  s[1] = {"mrp", "g1", 0.5, 0.02, 0.46, 0.54, 999, 1};
  const auto back = from_json(to_json(s));
  REQUIRE(back.size() == 2);
  CHECK(back[0].estimate == s[0].estimate);
  CHECK(back[1].skipped_draws == 1);
  CHECK(back[1].method == "mrp");
  CHECK_THROWS_AS(from_json("{"), ValidationError);
  CHECK_THROWS_AS(from_json("[{\"method\": 1}]"), ValidationError);
}
