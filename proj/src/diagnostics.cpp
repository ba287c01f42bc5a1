#include "emrp/diagnostics.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "emrp/errors.hpp"

namespace emrp {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ChainSeries split_chains(const ChainSeries& chains) {
  ChainSeries out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half == 0) throw ValidationError("diagnostics need at least two draws per chain");
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

bool all_identical(const ChainSeries& chains) {
  const double first = chains.front().front();
  return std::all_of(chains.begin(), chains.end(), [&](const auto& c) {
    return std::all_of(c.begin(), c.end(), [&](double v) { return v == first; });
  });
}

double series_mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double series_var(const std::vector<double>& x) {
  const double mu = series_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return ss / static_cast<double>(x.size() - 1);
}

// Autocovariance (1/n normalization) at a given lag.
double autocov(const std::vector<double>& x, double mu, std::size_t lag) {
  double s = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) s += (x[i] - mu) * (x[i + lag] - mu);
  return s / static_cast<double>(x.size());
}

// Multi-chain ESS with Geyer's initial monotone sequence estimator, following
// the formulation used by Stan. Chains must share a length.
double ess_of(const ChainSeries& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw ValidationError("diagnostics need equal-length chains");
  }
  if (n < 4) return kNaN;
  std::vector<double> mu(m);
  std::vector<double> chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    mu[c] = series_mean(chains[c]);
    chain_var[c] = autocov(chains[c], mu[c], 0) * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  const double mean_var = std::accumulate(chain_var.begin(), chain_var.end(), 0.0) / static_cast<double>(m);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += series_var(mu);
  if (!(var_plus > 0.0)) return kNaN;

  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocov(chains[c], mu[c], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (mean_var - acov) / var_plus;
  };

  std::vector<double> rho_hat(n, 0.0);
  double rho_even = 1.0;
  double rho_odd = rho(1);
  rho_hat[0] = rho_even;
  rho_hat[1] = rho_odd;
  std::size_t s = 1;
  while (s + 4 < n && rho_even + rho_odd > 0.0) {
    rho_even = rho(s + 1);
    rho_odd = rho(s + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho_hat[s + 1] = rho_even;
      rho_hat[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0.0 && max_s + 1 < n) rho_hat[max_s + 1] = rho_even;

  for (std::size_t k = 1; k + 3 <= max_s; k += 2) {
    if (rho_hat[k + 1] + rho_hat[k + 2] > rho_hat[k - 1] + rho_hat[k]) {
      rho_hat[k + 1] = 0.5 * (rho_hat[k - 1] + rho_hat[k]);
      rho_hat[k + 2] = rho_hat[k + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_s && k < n; ++k) tau += 2.0 * rho_hat[k];
  if (max_s + 1 < n) tau += rho_hat[max_s + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

ChainSeries rank_normalize(const ChainSeries& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].size(); ++i) pooled.emplace_back(chains[c][i], pooled.size());
  }
  const std::size_t S = pooled.size();
  std::vector<double> ranks(S);
  std::sort(pooled.begin(), pooled.end());
  for (std::size_t i = 0; i < S;) {
    std::size_t j = i;
    while (j + 1 < S && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[pooled[k].second] = avg;
    i = j + 1;
  }
  ChainSeries out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    std::vector<double> z(c.size());
    for (auto& v : z) {
      const double p = (ranks[pos++] - 0.375) / (static_cast<double>(S) + 0.25);
      v = std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
    }
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace

std::optional<double> split_rhat(const ChainSeries& chains) {
  if (chains.size() < 2) return std::nullopt;
  const auto split = split_chains(chains);
  if (all_identical(split)) return kNaN;
  const double n = static_cast<double>(split.front().size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : split) {
    means.push_back(series_mean(c));
    w += series_var(c);
  }
  w /= static_cast<double>(split.size());
  const double b = n * series_var(means);
  if (!(w > 0.0)) return kNaN;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double ess_bulk(const ChainSeries& chains) {
  if (chains.empty()) throw ValidationError("diagnostics need at least one chain");
  const auto split = split_chains(chains);
  if (all_identical(split)) return kNaN;
  return ess_of(rank_normalize(split));
}

double ess_raw(const ChainSeries& chains) {
  if (chains.empty()) throw ValidationError("diagnostics need at least one chain");
  const auto split = split_chains(chains);
  if (all_identical(split)) return kNaN;
  return ess_of(split);
}

std::optional<double> Diagnostics::max_rhat() const {
  std::optional<double> out;
  for (const auto& r : rhat) {
    if (r && std::isfinite(*r)) out = out ? std::max(*out, *r) : *r;
  }
  return out;
}

double Diagnostics::min_ess() const {
  double out = std::numeric_limits<double>::infinity();
  for (double e : ess_bulk) {
    if (std::isfinite(e)) out = std::min(out, e);
  }
  return out;
}

Diagnostics diagnose(std::span<const hmc::Chain> chains) {
  Diagnostics d;
  if (chains.empty()) return d;
  const std::size_t dim = chains.front().dim;
  for (const auto& c : chains) {
    d.divergences += c.divergences;
    d.total_draws += c.kept();
  }
  ChainSeries series(chains.size());
  for (std::size_t k = 0; k < dim; ++k) {
    for (std::size_t c = 0; c < chains.size(); ++c) {
      series[c].resize(chains[c].kept());
      for (std::size_t s = 0; s < chains[c].kept(); ++s) series[c][s] = chains[c].draws[s * dim + k];
    }
    d.rhat.push_back(split_rhat(series));
    d.ess_bulk.push_back(ess_bulk(series));
  }
  return d;
}

}  // namespace emrp
