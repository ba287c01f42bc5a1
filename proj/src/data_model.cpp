#include "emrp/data_model.hpp"

#include <cmath>
#include <numeric>

#include "emrp/errors.hpp"

namespace emrp {

CellFrame build_cell_frame(std::size_t z_cells, std::size_t x_levels, std::vector<double> margins) {
  if (z_cells == 0 || x_levels == 0) {
    throw ValidationError("cell frame needs at least one Z-cell and one X level");
  }
  if (margins.size() != z_cells) {
    throw ValidationError("expected " + std::to_string(z_cells) + " margins, got " +
                          std::to_string(margins.size()));
  }
  double total = 0.0;
  for (std::size_t m = 0; m < margins.size(); ++m) {
    const double v = margins[m];
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError("margin for Z-cell " + std::to_string(m + 1) + " is negative or non-finite");
    }
    if (v != std::floor(v)) {
      throw ValidationError("margin for Z-cell " + std::to_string(m + 1) + " is not an integer count");
    }
    total += v;
  }
  CellFrame f;
  f.z_cells_ = z_cells;
  f.x_levels_ = x_levels;
  f.margins_ = std::move(margins);
  f.population_ = total;
  return f;
}

WeightedSample::WeightedSample(const CellFrame& frame, std::vector<SampleUnit> units)
    : units_(std::move(units)) {
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const auto& u = units_[i];
    if (u.z >= frame.z_cells()) {
      throw ValidationError("unit " + std::to_string(i + 1) + ": z_cat out of range");
    }
    if (u.x >= frame.x_levels()) {
      throw ValidationError("unit " + std::to_string(i + 1) + ": x out of range");
    }
    if (u.y != 0 && u.y != 1) {
      throw ValidationError("unit " + std::to_string(i + 1) + ": y must be 0 or 1");
    }
    if (!(u.w > 0.0) || !std::isfinite(u.w)) {
      throw ValidationError("unit " + std::to_string(i + 1) + ": weight must be positive");
    }
  }
}

void WeightedSample::set_weights(std::span<const double> w) {
  if (w.size() != units_.size()) throw ValidationError("weight vector length mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) units_[i].w = w[i];
}

std::vector<std::size_t> WeightedSample::z_counts(const CellFrame& frame) const {
  std::vector<std::size_t> out(frame.z_cells(), 0);
  for (const auto& u : units_) ++out[u.z];
  return out;
}

std::vector<std::size_t> WeightedSample::joint_counts(const CellFrame& frame) const {
  std::vector<std::size_t> out(frame.joint_cells(), 0);
  for (const auto& u : units_) ++out[frame.joint_index(u.z, u.x)];
  return out;
}

std::vector<double> construct_base_weights(const WeightedSample& sample, const CellFrame& frame) {
  const auto nz = sample.z_counts(frame);
  for (std::size_t m = 0; m < frame.z_cells(); ++m) {
    if (frame.margin(m) > 0.0 && nz[m] == 0) throw EmptyCellError(m);
    if (frame.margin(m) == 0.0 && nz[m] > 0) {
      throw ValidationError("Z-cell " + std::to_string(m + 1) +
                            " has sampled units but a zero population margin");
    }
  }
  std::vector<double> w(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto m = sample[i].z;
    w[i] = frame.margin(m) / static_cast<double>(nz[m]);
  }
  return w;
}

CellFrame collapse_empty_cells(const CellFrame& frame, const WeightedSample& sample,
                               std::vector<CollapseRecord>* log) {
  const auto nz = sample.z_counts(frame);
  if (std::accumulate(nz.begin(), nz.end(), std::size_t{0}) == 0) {
    throw ValidationError("cannot collapse empty cells of an empty sample");
  }
  std::vector<double> margins(frame.margins().begin(), frame.margins().end());
  const auto M = frame.z_cells();
  for (std::size_t m = 0; m < M; ++m) {
    if (nz[m] > 0 || frame.margin(m) == 0.0) continue;
    std::size_t target = M;
    for (std::size_t d = 1; d < M && target == M; ++d) {
      if (m >= d && nz[m - d] > 0) {
        target = m - d;
      } else if (m + d < M && nz[m + d] > 0) {
        target = m + d;
      }
    }
    margins[target] += frame.margin(m);
    margins[m] = 0.0;
    if (log) log->push_back({m, target});
  }
  return build_cell_frame(M, frame.x_levels(), std::move(margins));
}

CountDraws::CountDraws(std::size_t draws, std::size_t cells, double population)
    : draws_(draws), cells_(cells), population_(population), values_(draws * cells, 0.0) {}

void CountDraws::normalize() {
  for (std::size_t l = 0; l < draws_; ++l) {
    auto r = row(l);
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    if (s <= 0.0) throw ValidationError("count draw " + std::to_string(l + 1) + " has zero total");
    const double k = population_ / s;
    for (auto& v : r) v *= k;
  }
}

CellMeanDraws::CellMeanDraws(std::size_t draws, std::size_t cells)
    : draws_(draws), cells_(cells), values_(draws * cells, 0.0) {}

std::vector<double> SubgroupDef::mask(std::size_t joint_cells) const {
  std::vector<double> out(joint_cells, 0.0);
  for (auto j : cells) {
    if (j >= joint_cells) throw ValidationError("subgroup '" + name + "' references cell out of range");
    out[j] = 1.0;
  }
  return out;
}

}  // namespace emrp
