#include "emrp/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emrp/errors.hpp"
#include "emrp/parallel.hpp"
#include "emrp/random.hpp"

namespace emrp::hmc {
namespace {

constexpr double kDivergenceThreshold = 1000.0;

class DualAveraging {
 public:
  explicit DualAveraging(double target) : target_(target) {}

  void restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double update(double accept_stat) {
    ++counter_;
    const double t = static_cast<double>(counter_);
    const double eta = 1.0 / (t + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
    const double x = mu_ - std::sqrt(t) / kGamma * s_bar_;
    const double x_eta = std::pow(t, -kKappa);
    x_bar_ = x_eta * x + (1.0 - x_eta) * x_bar_;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double target_;
  double mu_ = 0.0;
  std::size_t counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Stan-style warmup: a fast initial buffer, doubling slow windows that
// estimate the metric, and a fast terminal buffer.
struct WarmupSchedule {
  std::size_t init_buffer = 75;
  std::size_t term_buffer = 50;
  std::size_t base_window = 25;
  std::vector<std::size_t> window_ends;  // iteration index after which the metric updates

  explicit WarmupSchedule(std::size_t warmup) {
    if (warmup < 20) return;
    if (warmup < init_buffer + term_buffer + base_window) {
      init_buffer = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
      term_buffer = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
      base_window = warmup - init_buffer - term_buffer;
    }
    const std::size_t slow_end = warmup - term_buffer;
    std::size_t start = init_buffer;
    std::size_t size = base_window;
    while (start < slow_end) {
      std::size_t end = start + size;
      if (end + 2 * size > slow_end) end = slow_end;
      window_ends.push_back(end);
      start = end;
      size *= 2;
    }
  }

  bool in_slow_window(std::size_t it) const {
    return !window_ends.empty() && it >= init_buffer && it < window_ends.back();
  }
};

// Inverse mass matrix Sigma: diagonal, or dense through its lower Cholesky
// factor L (Sigma = L L^T). Momentum is N(0, Sigma^-1).
struct Metric {
  std::size_t dim = 0;
  bool dense = false;
  std::vector<double> diag;
  std::vector<double> chol;

  static Metric from_diagonal(std::span<const double> d) {
    Metric m;
    m.dim = d.size();
    m.diag.assign(d.begin(), d.end());
    return m;
  }

  void set_dense(const std::vector<double>& cov) {
    dense = true;
    chol.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t k = 0; k <= i; ++k) {
        double v = cov[i * dim + k];
        for (std::size_t t = 0; t < k; ++t) v -= chol[i * dim + t] * chol[k * dim + t];
        if (i == k) {
          if (!(v > 0.0)) throw ValidationError("warmup covariance is not positive definite");
          chol[i * dim + i] = std::sqrt(v);
        } else {
          chol[i * dim + k] = v / chol[k * dim + k];
        }
      }
    }
    for (std::size_t i = 0; i < dim; ++i) diag[i] = cov[i * dim + i];
  }

  // v = Sigma p
  void velocity(std::span<const double> p, std::span<double> v) const {
    if (!dense) {
      for (std::size_t i = 0; i < dim; ++i) v[i] = diag[i] * p[i];
      return;
    }
    std::vector<double> t(dim, 0.0);  // L^T p
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t k = i; k < dim; ++k) t[i] += chol[k * dim + i] * p[k];
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= i; ++k) acc += chol[i * dim + k] * t[k];
      v[i] = acc;
    }
  }

  double kinetic(std::span<const double> p) const {
    double k = 0.0;
    if (!dense) {
      for (std::size_t i = 0; i < dim; ++i) k += p[i] * p[i] * diag[i];
      return 0.5 * k;
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double t = 0.0;
      for (std::size_t r = i; r < dim; ++r) t += chol[r * dim + i] * p[r];
      k += t * t;
    }
    return 0.5 * k;
  }

  // Turns a standard normal vector z into momentum p with L^T p = z.
  void momentum_from_normal(std::span<double> z) const {
    if (!dense) {
      for (std::size_t i = 0; i < dim; ++i) z[i] /= std::sqrt(diag[i]);
      return;
    }
    for (std::size_t i = dim; i-- > 0;) {
      double v = z[i];
      for (std::size_t r = i + 1; r < dim; ++r) v -= chol[r * dim + i] * z[r];
      z[i] = v / chol[i * dim + i];
    }
  }
};

// Running mean and covariance of warmup draws.
class Welford {
 public:
  Welford(std::size_t dim, bool dense) : dim_(dim), dense_(dense), mean_(dim, 0.0), m2_(dense ? dim * dim : dim, 0.0) {}
  void add(std::span<const double> x) {
    ++n_;
    std::vector<double> delta(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      delta[i] = x[i] - mean_[i];
      mean_[i] += delta[i] / static_cast<double>(n_);
    }
    for (std::size_t i = 0; i < dim_; ++i) {
      const double after = x[i] - mean_[i];
      if (dense_) {
        for (std::size_t k = 0; k < dim_; ++k) m2_[i * dim_ + k] += delta[k] * after;
      } else {
        m2_[i] += delta[i] * after;
      }
    }
  }
  // Covariance shrunk toward 1e-3 * I, as Stan regularizes its metric.
  void regularized(Metric& metric) const {
    const double n = static_cast<double>(n_);
    const double a = n / (n + 5.0);
    const double b = 1e-3 * (5.0 / (n + 5.0));
    if (!dense_) {
      for (std::size_t i = 0; i < dim_; ++i) metric.diag[i] = a * (n > 1 ? m2_[i] / (n - 1.0) : 1.0) + b;
      return;
    }
    std::vector<double> cov(dim_ * dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t k = 0; k < dim_; ++k) {
        cov[i * dim_ + k] = a * (n > 1 ? m2_[i * dim_ + k] / (n - 1.0) : (i == k ? 1.0 : 0.0)) + (i == k ? b : 0.0);
      }
    }
    metric.set_dense(cov);
  }
  void reset() {
    n_ = 0;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    std::fill(m2_.begin(), m2_.end(), 0.0);
  }

 private:
  std::size_t dim_;
  bool dense_;
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

double kinetic(std::span<const double> p, const Metric& metric) { return metric.kinetic(p); }

void draw_momentum(Rng& rng, std::span<double> p, const Metric& metric) {
  for (auto& v : p) v = standard_normal(rng);
  metric.momentum_from_normal(p);
}

struct State {
  std::vector<double> q;
  std::vector<double> grad;
  double lp = 0.0;
};

// Leapfrog from `s` (gradient cached); returns false on a non-finite density.
bool integrate(const LogDensity& density, State& s, std::span<double> p,
               const Metric& metric, double eps, std::size_t steps) {
  const std::size_t d = s.q.size();
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) p[i] += 0.5 * eps * s.grad[i];
  for (std::size_t step = 0; step < steps; ++step) {
    metric.velocity(p, v);
    for (std::size_t i = 0; i < d; ++i) s.q[i] += eps * v[i];
    s.lp = density(s.q, s.grad);
    if (!std::isfinite(s.lp)) return false;
    const double scale = step + 1 == steps ? 0.5 : 1.0;
    for (std::size_t i = 0; i < d; ++i) p[i] += scale * eps * s.grad[i];
  }
  return true;
}

double find_reasonable_step(const LogDensity& density, const State& start,
                            const Metric& inv_metric, double eps, Rng& rng) {
  const std::size_t d = start.q.size();
  std::vector<double> p(d);
  std::vector<double> p0(d);
  draw_momentum(rng, p0, inv_metric);
  const double h0 = -start.lp + kinetic(p0, inv_metric);
  auto log_accept = [&](double e) {
    State s = start;
    std::copy(p0.begin(), p0.end(), p.begin());
    if (!integrate(density, s, p, inv_metric, e, 1)) return -std::numeric_limits<double>::infinity();
    const double h = -s.lp + kinetic(p, inv_metric);
    return std::isfinite(h) ? h0 - h : -std::numeric_limits<double>::infinity();
  };
  double la = log_accept(eps);
  const int direction = la > std::log(0.8) ? 1 : -1;
  for (int k = 0; k < 60; ++k) {
    if (direction == 1 && !(la > std::log(0.8))) break;
    if (direction == -1 && la > std::log(0.8)) break;
    eps = direction == 1 ? eps * 2.0 : eps * 0.5;
    la = log_accept(eps);
  }
  return eps;
}


double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// No-U-turn transition with multinomial sampling along the trajectory and the
// generalized U-turn criterion checked across every subtree merge.
class Nuts {
 public:
  struct Result {
    double accept_stat = 0.0;
    std::size_t leapfrogs = 0;
    std::size_t depth = 0;
    bool divergent = false;
  };

  Nuts(const LogDensity& density, std::size_t dim, std::size_t max_depth)
      : density_(density), dim_(dim), max_depth_(max_depth), v_(dim) {}

  Result transition(State& cur, const Metric& metric, double eps, Rng& rng) {
    metric_ = &metric;
    eps_ = eps;
    rng_ = &rng;
    result_ = {};
    sum_metro_ = 0.0;

    Point z{cur, std::vector<double>(dim_)};
    draw_momentum(rng, z.p, metric);
    h0_ = -z.s.lp + kinetic(z.p, metric);

    Point fwd = z, bck = z;
    std::vector<double> sharp(dim_);
    metric.velocity(z.p, sharp);
    std::vector<double> p_fwd_bck = z.p, p_fwd_fwd = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    std::vector<double> s_fwd_bck = sharp, s_fwd_fwd = sharp, s_bck_fwd = sharp, s_bck_bck = sharp;
    std::vector<double> rho = z.p;
    double log_sum_weight = 0.0;
    State sample = cur;

    while (result_.depth < max_depth_) {
      std::vector<double> rho_fwd(dim_, 0.0), rho_bck(dim_, 0.0);
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      State propose;
      bool valid = false;
      if (uniform01(rng) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        s_bck_fwd = s_fwd_bck;
        valid = build(result_.depth, fwd, 1.0, propose, s_fwd_bck, s_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                      lsw_subtree);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        s_fwd_bck = s_bck_fwd;
        valid = build(result_.depth, bck, -1.0, propose, s_bck_fwd, s_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                      lsw_subtree);
      }
      if (!valid) break;
      ++result_.depth;
      if (lsw_subtree > log_sum_weight || uniform01(rng) < std::exp(lsw_subtree - log_sum_weight)) {
        sample = std::move(propose);
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      for (std::size_t i = 0; i < dim_; ++i) rho[i] = rho_bck[i] + rho_fwd[i];
      bool persist = no_uturn(s_bck_bck, s_fwd_fwd, rho);
      std::vector<double> ext(dim_);
      for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_bck[i] + p_fwd_bck[i];
      persist = persist && no_uturn(s_bck_bck, s_fwd_bck, ext);
      for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_fwd[i] + p_bck_fwd[i];
      persist = persist && no_uturn(s_bck_fwd, s_fwd_fwd, ext);
      if (!persist) break;
    }
    cur = std::move(sample);
    result_.accept_stat = result_.leapfrogs > 0 ? sum_metro_ / static_cast<double>(result_.leapfrogs) : 0.0;
    return result_;
  }

 private:
  struct Point {
    State s;
    std::vector<double> p;
  };

  static bool no_uturn(std::span<const double> sharp_minus, std::span<const double> sharp_plus,
                       std::span<const double> rho) {
    return dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0;
  }

  // Extends `z` by 2^depth leapfrog steps in direction `sign`. Returns false
  // on a divergence or a U-turn inside the new subtree.
  bool build(std::size_t depth, Point& z, double sign, State& propose, std::vector<double>& sharp_beg,
             std::vector<double>& sharp_end, std::vector<double>& rho, std::vector<double>& p_beg,
             std::vector<double>& p_end, double& log_sum_weight) {
    if (depth == 0) {
      const bool finite = integrate(density_, z.s, z.p, *metric_, sign * eps_, 1);
      ++result_.leapfrogs;
      double h = finite ? -z.s.lp + kinetic(z.p, *metric_) : std::numeric_limits<double>::infinity();
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0_ > kDivergenceThreshold) result_.divergent = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0_ - h);
      sum_metro_ += h0_ - h > 0.0 ? 1.0 : std::exp(h0_ - h);
      if (result_.divergent) return false;
      propose = z.s;
      metric_->velocity(z.p, v_);
      sharp_beg = v_;
      sharp_end = v_;
      for (std::size_t i = 0; i < dim_; ++i) rho[i] += z.p[i];
      p_beg = z.p;
      p_end = z.p;
      return true;
    }

    std::vector<double> sharp_left_end(dim_), p_left_end(dim_), rho_left(dim_, 0.0);
    double lsw_left = -std::numeric_limits<double>::infinity();
    if (!build(depth - 1, z, sign, propose, sharp_beg, sharp_left_end, rho_left, p_beg, p_left_end, lsw_left)) {
      return false;
    }
    State propose_right;
    std::vector<double> sharp_right_beg(dim_), p_right_beg(dim_), rho_right(dim_, 0.0);
    double lsw_right = -std::numeric_limits<double>::infinity();
    if (!build(depth - 1, z, sign, propose_right, sharp_right_beg, sharp_end, rho_right, p_right_beg, p_end,
               lsw_right)) {
      return false;
    }

    const double lsw_subtree = log_sum_exp(lsw_left, lsw_right);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_right > lsw_subtree || uniform01(*rng_) < std::exp(lsw_right - lsw_subtree)) {
      propose = std::move(propose_right);
    }

    std::vector<double> rho_subtree(dim_), ext(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      rho_subtree[i] = rho_left[i] + rho_right[i];
      rho[i] += rho_subtree[i];
    }
    bool persist = no_uturn(sharp_beg, sharp_end, rho_subtree);
    for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_left[i] + p_right_beg[i];
    persist = persist && no_uturn(sharp_beg, sharp_right_beg, ext);
    for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_right[i] + p_left_end[i];
    persist = persist && no_uturn(sharp_left_end, sharp_end, ext);
    return persist;
  }

  const LogDensity& density_;
  std::size_t dim_;
  std::size_t max_depth_;
  const Metric* metric_ = nullptr;
  Rng* rng_ = nullptr;
  double eps_ = 0.0;
  double h0_ = 0.0;
  double sum_metro_ = 0.0;
  Result result_;
  std::vector<double> v_;
};

}  // namespace

double hamiltonian(const LogDensity& density, std::span<const double> q, std::span<const double> p,
                   std::span<const double> inv_metric) {
  std::vector<double> grad(q.size());
  return -density(q, grad) + kinetic(p, Metric::from_diagonal(inv_metric));
}

double leapfrog(const LogDensity& density, std::span<double> q, std::span<double> p,
                std::span<const double> inv_metric, double step_size, std::size_t steps) {
  State s;
  s.q.assign(q.begin(), q.end());
  s.grad.resize(q.size());
  s.lp = density(s.q, s.grad);
  const auto metric = Metric::from_diagonal(inv_metric);
  if (!std::isfinite(s.lp) || !integrate(density, s, p, metric, step_size, steps)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::copy(s.q.begin(), s.q.end(), q.begin());
  return -s.lp + kinetic(p, metric);
}

Chain run_chain(const LogDensity& density, std::size_t dim, const Config& config,
                std::size_t chain_index) {
  if (config.iterations <= config.warmup || config.warmup < 1) {
    throw ValidationError("sampler needs iterations > warmup >= 1");
  }
  if (dim == 0) throw ValidationError("sampler needs at least one parameter");
  if (config.algorithm == Algorithm::nuts && config.max_depth < 1) throw ValidationError("NUTS needs max_depth >= 1");
  Rng rng = make_stream(config.seed, chain_index);

  State cur;
  cur.q.resize(dim);
  cur.grad.resize(dim);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    for (auto& v : cur.q) v = config.init_radius * (2.0 * uniform01(rng) - 1.0);
    cur.lp = density(cur.q, cur.grad);
    ok = std::isfinite(cur.lp) &&
         std::all_of(cur.grad.begin(), cur.grad.end(), [](double g) { return std::isfinite(g); });
  }
  if (!ok) throw ValidationError("log posterior is not finite at any initial value");

  Chain chain;
  chain.dim = dim;
  chain.inv_metric.assign(dim, 1.0);
  Metric metric = Metric::from_diagonal(chain.inv_metric);
  const std::size_t kept = config.iterations - config.warmup;
  chain.draws.reserve(kept * dim);
  chain.lp.reserve(kept);

  double eps = find_reasonable_step(density, cur, metric, 1.0, rng);
  DualAveraging adapt(config.target_accept);
  adapt.restart(eps);
  const WarmupSchedule schedule(config.warmup);
  std::size_t next_window = 0;
  Welford window(dim, config.dense_metric);

  std::vector<double> p(dim);
  State prop;
  Nuts nuts(density, dim, config.max_depth);
  double accept_total = 0.0;
  double leapfrog_total = 0.0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const bool warming = it < config.warmup;
    double accept_stat = 0.0;
    bool divergent = false;
    if (config.algorithm == Algorithm::nuts) {
      const auto r = nuts.transition(cur, metric, eps, rng);
      accept_stat = r.accept_stat;
      divergent = r.divergent;
      if (!warming) {
        leapfrog_total += static_cast<double>(r.leapfrogs);
        if (r.depth >= config.max_depth) ++chain.max_depth_hits;
      }
    } else {
      draw_momentum(rng, p, metric);
      const double h0 = -cur.lp + kinetic(p, metric);
      const double jitter = 0.8 + 0.4 * uniform01(rng);
      const auto steps = static_cast<std::size_t>(
          std::clamp(std::ceil(config.integration_time * jitter / eps), 1.0,
                     static_cast<double>(config.max_leapfrog)));
      prop = cur;
      const bool finite = integrate(density, prop, p, metric, eps, steps);
      const double h1 = finite ? -prop.lp + kinetic(p, metric) : std::numeric_limits<double>::infinity();
      if (!std::isfinite(h1) || h1 - h0 > kDivergenceThreshold) {
        divergent = true;
      } else {
        accept_stat = std::min(1.0, std::exp(h0 - h1));
        if (uniform01(rng) < accept_stat) std::swap(cur, prop);
      }
      if (!warming) leapfrog_total += static_cast<double>(steps);
    }
    if (divergent) {
      if (warming) {
        ++chain.warmup_divergences;
      } else {
        ++chain.divergences;
      }
    }

    if (warming) {
      eps = adapt.update(accept_stat);
      if (schedule.in_slow_window(it)) window.add(cur.q);
      if (next_window < schedule.window_ends.size() && it + 1 == schedule.window_ends[next_window]) {
        window.regularized(metric);
        window.reset();
        ++next_window;
        eps = find_reasonable_step(density, cur, metric, eps, rng);
        adapt.restart(eps);
      }
      if (it + 1 == config.warmup) eps = adapt.final_step_size();
    } else {
      accept_total += accept_stat;
      chain.draws.insert(chain.draws.end(), cur.q.begin(), cur.q.end());
      chain.lp.push_back(cur.lp);
    }
  }
  chain.step_size = eps;
  chain.inv_metric = metric.diag;
  chain.metric_cholesky = metric.chol;
  chain.mean_accept = accept_total / static_cast<double>(kept);
  chain.mean_leapfrog = leapfrog_total / static_cast<double>(kept);
  return chain;
}

std::vector<Chain> run_chains(const std::function<LogDensity()>& make_density, std::size_t dim,
                              const Config& config) {
  if (config.chains == 0) throw ValidationError("sampler needs at least one chain");
  std::vector<Chain> chains(config.chains);
  parallel_for(config.chains, config.threads, [&](std::size_t c) {
    const LogDensity density = make_density();
    chains[c] = run_chain(density, dim, config, c);
  });
  return chains;
}

}  // namespace emrp::hmc
