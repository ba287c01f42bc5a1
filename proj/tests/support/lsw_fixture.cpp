#include "lsw_fixture.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "emrp/app.hpp"
#include "emrp/io.hpp"
#include "emrp/random.hpp"

namespace emrp::testing {

namespace {

struct Respondent {
  std::array<std::size_t, 5> f{};  // age, sex, race, educ, income (0-based)
  bool visitor = false;
  int y = 0;
};

std::size_t pick(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// Marks the first `k` entries of a shuffled index list.
void mark_random(Rng& rng, std::vector<Respondent*>& group, std::size_t k, auto&& set) {
  const auto order = permutation(rng, group.size());
  for (std::size_t i = 0; i < group.size(); ++i) set(*group[order[i]], i < k);
}

}  // namespace

std::string write_lsw_fixture(const std::string& dir, std::uint64_t seed, const std::string& extra_config) {
  using L = LswLayout;
  Rng rng = make_stream(seed, 0);
  const auto layout = app::parse_factors(L::kFactors, L::kZCells);

  std::vector<Respondent> people;
  people.reserve(L::kRespondents);
  for (std::size_t inc = 0; inc < 4; ++inc) {
    const std::size_t visitors = L::kVisitorN[inc];
    for (std::size_t i = 0; i < L::kIncomeN[inc]; ++i) {
      Respondent r;
      r.visitor = i < visitors;
      if (!r.visitor && i - visitors < 72) {
        // The first 72 non-visitors of each income level cover every
        // age x sex x race x educ combination, so no Z-cell is empty.
        std::size_t k = i - visitors;
        r.f[3] = k % 4, k /= 4;
        r.f[2] = k % 3, k /= 3;
        r.f[1] = k % 2, k /= 2;
        r.f[0] = k;
      } else {
        r.f = {pick(rng, 3), pick(rng, 2), pick(rng, 3), pick(rng, 3), 0};
      }
      r.f[4] = inc;
      people.push_back(r);
    }
  }

  // Outcomes within each income x visitor group.
  for (std::size_t inc = 0; inc < 4; ++inc) {
    std::vector<Respondent*> vis, non;
    for (auto& r : people) {
      if (r.f[4] == inc) (r.visitor ? vis : non).push_back(&r);
    }
    mark_random(rng, vis, L::kVisitorY[inc], [](Respondent& r, bool on) { r.y = on; });
    mark_random(rng, non, L::kIncomeY[inc] - L::kVisitorY[inc], [](Respondent& r, bool on) { r.y = on; });
  }

  // Visitor sex and education totals.
  std::vector<Respondent*> visitors;
  for (auto& r : people) {
    if (r.visitor) visitors.push_back(&r);
  }
  mark_random(rng, visitors, L::kMaleVisitors, [](Respondent& r, bool on) { r.f[1] = on ? 0 : 1; });
  mark_random(rng, visitors, L::kEducatedVisitors, [&](Respondent& r, bool on) {
    r.f[3] = on ? 3 : pick(rng, 3);
  });

  std::vector<std::size_t> n_z(L::kZCells, 0), n_joint(2 * L::kZCells, 0);
  std::ostringstream sample;
  sample << "z_cat,x,y\n";
  for (const auto& r : people) {
    const std::size_t m = layout.z_cell(r.f);
    ++n_z[m];
    ++n_joint[2 * m + (r.visitor ? 1 : 0)];
    sample << m + 1 << ',' << (r.visitor ? 2 : 1) << ',' << r.y << '\n';
  }

  // Population margins: each sampled respondent stands for 400 to 4000 people.
  std::ostringstream margins, joint;
  margins << "m,count\n";
  joint << "j,count\n";
  for (std::size_t m = 0; m < L::kZCells; ++m) {
    if (n_z[m] == 0) throw std::logic_error("fixture left a Z-cell empty");
    const double w = std::round(400.0 + 3600.0 * uniform01(rng));
    const double total = w * static_cast<double>(n_z[m]);
    const double visitors_m = std::round(total * static_cast<double>(n_joint[2 * m + 1]) / static_cast<double>(n_z[m]));
    margins << m + 1 << ',' << total << '\n';
    joint << 2 * m + 1 << ',' << total - visitors_m << '\n' << 2 * m + 2 << ',' << visitors_m << '\n';
  }

  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  io::write_file_atomic((base / "sample.csv").string(), sample.str());
  io::write_file_atomic((base / "margins.csv").string(), margins.str());
  io::write_file_atomic((base / "joint.csv").string(), joint.str());
  const std::string cfg =
      "sample = sample.csv\n"
      "margins = margins.csv\n"
      "joint_counts = joint.csv\n"
      "z_factors = " + std::string(L::kFactors) + "\n"
      "outcome_terms = age,sex,race,educ,income,x,x:income\n"
      "mrp_terms = age,sex,race,educ,income\n"
      "L = 1000\nF = 20\nT = 30\n"
      "subgroup.income1 = income==1\n"
      "subgroup.income2 = income==2\n"
      "subgroup.income3 = income==3\n"
      "subgroup.income4 = income==4\n"
      "subgroup.visitor = x==2\n"
      "subgroup.poor_nonvisitor = x==1 & income==1\n"
      "subgroup.male_visitor = x==2 & sex==1\n"
      "subgroup.educated_visitor = x==2 & educ==4\n" +
      extra_config;
  const auto cfg_path = (base / "run.cfg").string();
  io::write_file_atomic(cfg_path, cfg);
  return cfg_path;
}

}  // namespace emrp::testing
