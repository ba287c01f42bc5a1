#include "emrp/app.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "emrp/errors.hpp"
#include "emrp/estimators.hpp"
#include "emrp/parallel.hpp"
#include "emrp/plot.hpp"
#include "emrp/simulation.hpp"
#include "emrp/synthpop.hpp"

namespace emrp::app {

std::size_t FactorLayout::cells() const {
  std::size_t n = 1;
  for (auto l : levels) n *= l;
  return n;
}

std::size_t FactorLayout::level(std::size_t f, std::size_t m) const {
  std::size_t stride = 1;
  for (std::size_t k = f + 1; k < levels.size(); ++k) stride *= levels[k];
  return (m / stride) % levels[f];
}

std::size_t FactorLayout::z_cell(std::span<const std::size_t> factor_levels) const {
  std::size_t m = 0;
  for (std::size_t f = 0; f < levels.size(); ++f) m = m * levels[f] + factor_levels[f];
  return m;
}

std::size_t FactorLayout::find(const std::string& name) const {
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

FactorLayout parse_factors(const std::string& spec, std::size_t z_cells) {
  FactorLayout layout;
  if (trim(spec).empty()) {
    layout.names = {"z_cat"};
    layout.levels = {z_cells};
    return layout;
  }
  for (const auto& item : split(spec, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("z_factors entry '" + item + "' must be name:levels");
    const auto name = trim(item.substr(0, colon));
    const auto n = io::parse_integer(trim(item.substr(colon + 1)), "levels of factor " + name);
    if (name.empty() || n < 1) throw ValidationError("z_factors entry '" + item + "' is invalid");
    if (name == "x" || name == "z_cat" || layout.find(name) < layout.names.size()) {
      throw ValidationError("factor name '" + name + "' is reserved or repeated");
    }
    layout.names.push_back(name);
    layout.levels.push_back(static_cast<std::size_t>(n));
  }
  if (layout.cells() != z_cells) {
    throw ValidationError("z_factors span " + std::to_string(layout.cells()) + " cells but the margins have " +
                          std::to_string(z_cells));
  }
  return layout;
}

glm::Term make_term(const std::string& term, const FactorLayout& layout, const CellFrame& frame, bool joint_rows) {
  const auto parts = split(term, ':');
  if (parts.empty()) throw ValidationError("empty model term");
  const std::size_t rows = joint_rows ? frame.joint_cells() : frame.z_cells();
  glm::Term t;
  t.name = term;
  t.levels = 1;
  t.level_of_row.assign(rows, 0);
  for (const auto& p : parts) {
    std::size_t n = 0;
    std::function<std::size_t(std::size_t, std::size_t)> level;
    if (p == "x") {
      if (!joint_rows) throw ValidationError("term '" + term + "': x is not available in a Z-cell model");
      n = frame.x_levels();
      level = [](std::size_t, std::size_t c) { return c; };
    } else if (p == "z_cat") {
      n = frame.z_cells();
      level = [](std::size_t m, std::size_t) { return m; };
    } else {
      const auto f = layout.find(p);
      if (f >= layout.names.size()) throw ValidationError("term '" + term + "': unknown column '" + p + "'");
      n = layout.levels[f];
      level = [&layout, f](std::size_t m, std::size_t) { return layout.level(f, m); };
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t m = joint_rows ? frame.z_of(r) : r;
      const std::size_t c = joint_rows ? frame.x_of(r) : 0;
      t.level_of_row[r] = t.level_of_row[r] * n + level(m, c);
    }
    t.levels *= n;
  }
  return t;
}

glm::ModelSpec make_spec(const std::string& terms, const FactorLayout& layout, const CellFrame& frame,
                         bool joint_rows, double prior_scale) {
  glm::ModelSpec spec;
  spec.rows = joint_rows ? frame.joint_cells() : frame.z_cells();
  spec.prior_scale = prior_scale;
  for (const auto& t : split(terms, ',')) spec.terms.push_back(make_term(t, layout, frame, joint_rows));
  if (spec.terms.empty()) throw ValidationError("model has no terms");
  spec.validate();
  return spec;
}

SubgroupDef parse_subgroup(const std::string& name, const std::string& predicate, const FactorLayout& layout,
                           const CellFrame& frame) {
  struct Clause {
    std::size_t column;  // factor index, or names.size() for x, +1 for z_cat
    bool equal;
    std::size_t value;   // 0-based
  };
  const std::size_t kX = layout.names.size(), kZ = kX + 1;
  std::vector<Clause> clauses;
  for (const auto& text : split(predicate, '&')) {
    auto op = text.find("==");
    bool equal = true;
    if (op == std::string::npos) {
      op = text.find("!=");
      equal = false;
    }
    if (op == std::string::npos) {
      throw ValidationError("subgroup '" + name + "': clause '" + text + "' needs == or !=");
    }
    const auto col = trim(text.substr(0, op));
    const auto v = io::parse_integer(trim(text.substr(op + 2)), "subgroup '" + name + "'");
    std::size_t column = 0, levels = 0;
    if (col == "x") {
      column = kX;
      levels = frame.x_levels();
    } else if (col == "z_cat") {
      column = kZ;
      levels = frame.z_cells();
    } else {
      column = layout.find(col);
      if (column >= layout.names.size()) {
        throw ValidationError("subgroup '" + name + "': unknown column '" + col + "'");
      }
      levels = layout.levels[column];
    }
    if (v < 1 || static_cast<std::size_t>(v) > levels) {
      throw ValidationError("subgroup '" + name + "': value " + std::to_string(v) + " out of range for '" + col + "'");
    }
    clauses.push_back({column, equal, static_cast<std::size_t>(v - 1)});
  }
  if (clauses.empty()) throw ValidationError("subgroup '" + name + "' has an empty predicate");

  SubgroupDef g;
  g.name = name;
  for (std::size_t j = 0; j < frame.joint_cells(); ++j) {
    const std::size_t m = frame.z_of(j), c = frame.x_of(j);
    bool keep = true;
    for (const auto& cl : clauses) {
      const std::size_t have = cl.column == kX ? c : cl.column == kZ ? m : layout.level(cl.column, m);
      keep = keep && ((have == cl.value) == cl.equal);
    }
    if (keep) g.cells.push_back(j);
  }
  if (g.cells.empty()) throw ValidationError("subgroup '" + name + "' matches no cells");
  return g;
}

void impute_hotdeck(io::CsvTable& table, std::span<const std::string> columns, Rng& rng) {
  auto missing = [](const std::string& v) { return v.empty() || v == "NA"; };
  for (const auto& name : columns) {
    const auto col = table.column(name);
    if (!col) throw ValidationError("--impute-hotdeck: no column '" + name + "'");
    std::vector<std::string> observed;
    for (const auto& row : table.rows) {
      if (!missing(row[*col])) observed.push_back(row[*col]);
    }
    if (observed.empty()) throw ValidationError("--impute-hotdeck: column '" + name + "' has no observed values");
    for (auto& row : table.rows) {
      if (!missing(row[*col])) continue;
      auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(observed.size()));
      row[*col] = observed[std::min(k, observed.size() - 1)];
    }
  }
}

namespace {

using Json = nlohmann::ordered_json;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started = utc_now();
  std::vector<std::pair<std::string, double>> stages;
  std::vector<std::string> warnings;
  std::string status = "ok";
  std::string error;

  template <typename Fn>
  auto timed(const std::string& stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      Manifest* m;
      std::string stage;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        m->stages.emplace_back(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
    } record{this, stage, t0};
    return fn();
  }

  void write(const std::string& path) const {
    Json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["started"] = started;
    j["finished"] = utc_now();
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    Json st = Json::object();
    for (const auto& [name, secs] : stages) st[name] = secs;
    j["stage_seconds"] = st;
    j["warnings"] = warnings;
    io::write_file_atomic(path, j.dump(2) + "\n");
  }
};

// Keys that do not change results are left out of the hash.
std::string results_hash(io::Config cfg) {
  cfg.values.erase("threads");
  return cfg.hash();
}

void check_keys(const io::Config& cfg, const std::set<std::string>& allowed, const std::string& prefix = "") {
  for (const auto& [key, value] : cfg.values) {
    if (allowed.count(key) || (!prefix.empty() && key.rfind(prefix, 0) == 0)) continue;
    const auto line = cfg.lines.find(key);
    throw ValidationError((line == cfg.lines.end() ? std::string() : "line " + std::to_string(line->second) + ": ") +
                          "unknown config key '" + key + "'");
  }
}

template <typename T>
void override(io::Config& cfg, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) {
    cfg.values[key] = *v;
  } else {
    std::ostringstream os;
    os.precision(17);
    os << *v;
    cfg.values[key] = os.str();
  }
  cfg.lines.erase(key);
}

std::size_t thread_count(const io::Config& cfg) {
  return cfg.has("threads") ? std::max<std::size_t>(1, cfg.count("threads")) : default_threads();
}

std::uint64_t seed_of(const io::Config& cfg, std::uint64_t fallback) {
  if (!cfg.has("seed")) return fallback;
  const auto v = io::parse_integer(cfg.get("seed"), "seed");
  if (v < 0) throw ValidationError("seed must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

void apply_sampler(const io::Config& cfg, glm::SamplerConfig& s) {
  if (cfg.has("chains")) s.chains = cfg.count("chains");
  if (cfg.has("iters")) s.iterations = cfg.count("iters");
  if (cfg.has("warmup")) s.warmup = cfg.count("warmup");
  if (s.chains < 1 || s.iterations <= s.warmup || s.warmup < 1) {
    throw ValidationError("sampler needs chains >= 1 and iters > warmup >= 1");
  }
}

// Options shared by the subcommands that run models.
struct CommonArgs {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, chains, iters, warmup, L, F;
  std::optional<double> T, prior_scale;

  void add(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--threads", threads, "Worker threads (default: EMRP_THREADS, else all cores)");
    cmd->add_option("--chains", chains, "MCMC chains");
    cmd->add_option("--iters", iters, "MCMC iterations per chain, warmup included");
    cmd->add_option("--warmup", warmup, "MCMC warmup iterations per chain");
    cmd->add_option("--L", L, "Count draws");
    cmd->add_option("--F", F, "Synthetic populations pooled per WFPBB draw");
    cmd->add_option("--T", T, "WFPBB draw size multiplier (T * n); 0 uses N");
    cmd->add_option("--prior-scale", prior_scale, "Half-Cauchy scale for group standard deviations");
  }

  void apply(io::Config& cfg) const {
    override(cfg, "seed", seed);
    override(cfg, "threads", threads);
    override(cfg, "chains", chains);
    override(cfg, "iters", iters);
    override(cfg, "warmup", warmup);
    override(cfg, "L", L);
    override(cfg, "F", F);
    override(cfg, "T", T);
    override(cfg, "prior_scale", prior_scale);
  }
};

// ---- simulate ----

struct SimulateArgs {
  CommonArgs common;
  std::optional<std::string> design;
  std::optional<std::size_t> replicates;
  std::string out_dir = "results";
  bool smoke = false;
  bool dump_replicates = false;
};

sim::Case parse_case(const std::string& text) {
  const auto v = lower(text);
  if (v == "main") return sim::Case::main;
  if (v == "int" || v == "interaction") return sim::Case::interaction;
  throw ValidationError("case must be main or int, got '" + text + "'");
}

std::vector<sim::Method> parse_sim_methods(const std::string& text) {
  if (lower(trim(text)) == "all") return {sim::kAllMethods.begin(), sim::kAllMethods.end()};
  std::vector<sim::Method> out;
  for (const auto& item : split(text, ',')) {
    std::optional<sim::Method> m;
    for (auto candidate : sim::kAllMethods) {
      if (lower(sim::method_name(candidate)) == lower(item)) m = candidate;
    }
    if (!m) throw ValidationError("unknown method '" + item + "'");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  return out;
}

sim::SimConfig build_sim_config(const io::Config& cfg) {
  if (!cfg.has("case")) throw ValidationError("missing config key 'case' (or pass --case)");
  sim::SimConfig c;
  c.design = parse_case(cfg.get("case"));
  c.coef = sim::default_coefficients(c.design);
  if (cfg.has("smoke") && cfg.flag("smoke")) c = sim::smoke_profile(c);
  if (cfg.has("population")) c.population = cfg.count("population");
  if (cfg.has("replicates")) c.replicates = cfg.count("replicates");
  if (cfg.has("L")) c.L = cfg.count("L");
  if (cfg.has("F")) c.F = cfg.count("F");
  if (cfg.has("T")) c.T = cfg.number("T");
  if (cfg.has("prior_scale")) c.prior_scale = cfg.number("prior_scale");
  if (cfg.has("grid_step")) c.grid_step = cfg.number("grid_step");
  if (cfg.has("clamp_nonnegative")) c.clamp_nonnegative = cfg.flag("clamp_nonnegative");
  if (cfg.has("methods")) c.methods = parse_sim_methods(cfg.get("methods"));
  if (cfg.has("alpha_x")) {
    const auto parts = split(cfg.get("alpha_x"), ',');
    if (parts.size() != 2) throw ValidationError("alpha_x needs two comma-separated values");
    for (std::size_t k = 0; k < 2; ++k) c.coef.alpha_x[k] = io::parse_double(parts[k], "alpha_x");
  }
  c.seed = seed_of(cfg, c.seed);
  if (cfg.has("chains") || cfg.has("iters") || cfg.has("warmup")) {
    c.sampler = sim::SimConfig{}.sampler;
    if (cfg.has("smoke") && cfg.flag("smoke")) c.sampler = sim::smoke_profile(sim::SimConfig{}).sampler;
    apply_sampler(cfg, c.sampler);
  }
  c.threads = thread_count(cfg);
  c.validate();
  return c;
}

int cmd_simulate(const SimulateArgs& a, Manifest& man, std::ostream& out) {
  io::Config cfg;
  if (a.common.config) cfg = io::read_config(*a.common.config);
  check_keys(cfg, {"case", "population", "replicates", "seed", "L", "F", "T", "chains", "iters", "warmup",
                   "prior_scale", "methods", "alpha_x", "clamp_nonnegative", "threads", "grid_step", "smoke"});
  a.common.apply(cfg);
  override(cfg, "case", a.design);
  override(cfg, "replicates", a.replicates);
  if (a.smoke) cfg.values["smoke"] = "true";
  man.config_hash = results_hash(cfg);

  const auto config = build_sim_config(cfg);
  man.seed = config.seed;
  std::filesystem::create_directories(a.out_dir);
  const auto study = man.timed("study", [&] { return sim::run_study(config); });

  if (study.failures > 0) {
    man.warnings.push_back(std::to_string(study.failures) + " of " + std::to_string(config.replicates) +
                           " replicates failed and were excluded");
  }
  if (study.fits_rhat_above > 0) {
    man.warnings.push_back(std::to_string(study.fits_rhat_above) + " of " + std::to_string(study.fits) +
                           " model fits had split R-hat above 1.05 (max " + std::to_string(study.max_rhat) + ")");
  }
  // One line per (model, kind), counting fits rather than parameters.
  std::map<std::string, std::size_t> fit_warnings;
  for (const auto& r : study.replicates) {
    for (const auto& f : r.fits) {
      std::set<std::string> kinds;
      for (const auto& w : f.warnings) {
        if (w.starts_with("divergent")) kinds.insert("divergent transitions above 10%");
        else if (w.starts_with("split R-hat")) kinds.insert("split R-hat above 1.05");
        else if (w.starts_with("bulk ESS")) kinds.insert("bulk ESS below 100");
        else kinds.insert(w);
      }
      for (const auto& k : kinds) ++fit_warnings[f.model + " model: " + k];
    }
  }
  for (const auto& [w, n] : fit_warnings) man.warnings.push_back(w + " in " + std::to_string(n) + " fits");

  const std::filesystem::path dir(a.out_dir);
  man.timed("write", [&] {
    sim::write_results_csv(study.metrics, (dir / "results.csv").string());
    sim::write_count_metrics_csv(study.count_metrics, (dir / "counts_metrics.csv").string());
    if (a.dump_replicates) sim::write_replicates_csv(study, (dir / "replicates.csv").string());
    return 0;
  });

  out << "case " << (config.design == sim::Case::main ? "main" : "int") << ", " << config.replicates
      << " replicates, mean sample size " << study.mean_sample_size << "\n";
  for (const auto& m : study.metrics) {
    out << m.method << "\t" << m.estimand << "\tbias " << m.bias << "\trmse " << m.rmse << "\tci " << m.ci_length
        << "\tcoverage " << m.coverage << "\n";
  }
  return kOk;
}

// ---- estimate ----

struct EstimateArgs {
  CommonArgs common;
  std::optional<std::string> method;
  std::string out;
  bool collapse_empty = false;
  std::optional<std::string> impute;
  std::optional<std::string> dump_dir;
};

const std::vector<std::string> kEstimateMethods = {"wfpbb",        "wfpbb-mrp", "multinomial-mrp",
                                                   "twostage-mrp", "mrp",       "unweighted"};

std::vector<std::string> parse_estimate_methods(const std::string& text, bool have_joint) {
  std::vector<std::string> out;
  if (lower(trim(text)) == "all") {
    for (const auto& m : kEstimateMethods) {
      if (m != "mrp" || have_joint) out.push_back(m);
    }
    return out;
  }
  for (auto item : split(text, ',')) {
    item = lower(item);
    if (std::find(kEstimateMethods.begin(), kEstimateMethods.end(), item) == kEstimateMethods.end()) {
      throw ValidationError("unknown method '" + item + "'");
    }
    if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
  }
  if (out.empty()) throw ValidationError("no method given");
  return out;
}

std::string default_terms(const FactorLayout& layout, bool with_x) {
  std::string s;
  for (const auto& n : layout.names) s += (s.empty() ? "" : ",") + n;
  if (with_x) s += ",x";
  return s;
}

WeightedSample read_sample(const io::CsvTable& table, const CellFrame& frame, bool* has_weights) {
  const auto zc = table.column("z_cat"), xc = table.column("x"), yc = table.column("y"), wc = table.column("weight");
  if (!zc || !xc || !yc) throw ValidationError("sample CSV needs columns z_cat, x and y");
  *has_weights = wc.has_value();
  std::vector<SampleUnit> units;
  units.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string ctx = "sample row " + std::to_string(r + 2);
    const auto z = io::parse_integer(row[*zc], ctx + " z_cat");
    const auto x = io::parse_integer(row[*xc], ctx + " x");
    const auto y = io::parse_integer(row[*yc], ctx + " y");
    if (z < 1 || x < 1) throw ValidationError(ctx + ": z_cat and x are 1-based");
    SampleUnit u;
    u.z = static_cast<std::size_t>(z - 1);
    u.x = static_cast<std::size_t>(x - 1);
    u.y = static_cast<int>(y);
    if (wc) u.w = io::parse_double(row[*wc], ctx + " weight");
    units.push_back(u);
  }
  return WeightedSample(frame, std::move(units));
}

struct Fit {
  glm::ModelSpec spec;
  CellMeanDraws means;
  glm::PosteriorFit posterior;
};

void append(std::vector<EstimateSummary>& out, std::vector<EstimateSummary> more) {
  out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

int cmd_estimate(const EstimateArgs& a, Manifest& man, std::ostream& out) {
  if (!a.common.config) throw ValidationError("estimate needs --config");
  io::Config cfg = io::read_config(*a.common.config);
  check_keys(cfg,
             {"sample", "margins", "joint_counts", "x_levels", "z_factors", "outcome_terms", "stage1_terms",
              "mrp_terms", "method", "L", "F", "T", "clamp_nonnegative", "seed", "chains", "iters", "warmup",
              "prior_scale", "threads", "collapse_empty", "impute_hotdeck"},
             "subgroup.");
  a.common.apply(cfg);
  override(cfg, "method", a.method);
  override(cfg, "impute_hotdeck", a.impute);
  if (a.collapse_empty) cfg.values["collapse_empty"] = "true";
  man.config_hash = results_hash(cfg);
  const std::uint64_t seed = seed_of(cfg, 1);
  man.seed = seed;
  const std::size_t threads = thread_count(cfg);

  const auto base = std::filesystem::path(*a.common.config).parent_path();
  auto resolve = [&](const std::string& key) {
    const std::filesystem::path p(cfg.get(key));
    return (p.is_absolute() ? p : base / p).string();
  };

  const bool have_joint = cfg.has("joint_counts");
  const auto methods = parse_estimate_methods(cfg.get_or("method", "all"), have_joint);
  auto uses = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  if (uses("mrp") && !have_joint) throw ValidationError("method mrp needs a joint_counts file");

  // Inputs.
  const std::size_t x_levels = cfg.has("x_levels") ? cfg.count("x_levels") : 2;
  CellFrame frame = man.timed("read", [&] { return io::read_margins(resolve("margins"), x_levels); });
  const auto layout = parse_factors(cfg.get_or("z_factors", ""), frame.z_cells());
  auto table = io::read_csv(resolve("sample"));
  if (cfg.has("impute_hotdeck")) {
    const auto cols = split(cfg.get("impute_hotdeck"), ',');
    Rng rng = make_stream(seed, 8);
    impute_hotdeck(table, cols, rng);
  }
  bool has_weights = false;
  WeightedSample sample = read_sample(table, frame, &has_weights);
  if (sample.size() == 0) throw ValidationError("sample is empty");

  std::vector<double> weights;
  try {
    weights = construct_base_weights(sample, frame);
  } catch (const EmptyCellError& e) {
    if (!(cfg.has("collapse_empty") && cfg.flag("collapse_empty"))) throw;
    std::vector<CollapseRecord> log;
    frame = collapse_empty_cells(frame, sample, &log);
    for (const auto& r : log) {
      man.warnings.push_back("collapsed empty Z-cell " + std::to_string(r.from + 1) + " into " +
                             std::to_string(r.to + 1));
    }
    weights = construct_base_weights(sample, frame);
  }
  if (!has_weights) sample.set_weights(weights);

  std::vector<SubgroupDef> subgroups;
  for (const auto& key : cfg.keys_with_prefix("subgroup.")) {
    const auto name = key.substr(std::string("subgroup.").size());
    if (name.empty() || name == est::kOverall) throw ValidationError("invalid subgroup name in '" + key + "'");
    subgroups.push_back(parse_subgroup(name, cfg.get(key), layout, frame));
  }

  if (uses("twostage-mrp") && frame.x_levels() != 2) {
    throw UnsupportedError("twostage-mrp supports binary X only (x_levels = " + std::to_string(frame.x_levels()) + ")");
  }

  glm::SamplerConfig sampler;
  apply_sampler(cfg, sampler);
  sampler.threads = threads;
  const double prior_scale = cfg.has("prior_scale") ? cfg.number("prior_scale") : 1.0;
  if (!(prior_scale > 0.0)) throw ValidationError("prior_scale must be positive");
  const std::size_t L = cfg.has("L") ? cfg.count("L") : 1000;
  const std::size_t F = cfg.has("F") ? cfg.count("F") : 20;
  const double T = cfg.has("T") ? cfg.number("T") : 0.0;
  if (L < 1 || F < 1 || T < 0.0) throw ValidationError("L and F must be positive and T nonnegative");

  est::PairingOptions pairing;
  pairing.seed = stream_seed(seed, 1);

  std::optional<std::filesystem::path> dump;
  if (a.dump_dir) {
    dump = *a.dump_dir;
    std::filesystem::create_directories(*dump);
  }

  auto fit = [&](const std::string& name, const std::string& terms, bool joint_rows, const glm::BinomialData& data,
                 std::uint64_t stream) {
    Fit f;
    f.spec = make_spec(terms, layout, frame, joint_rows, prior_scale);
    auto s = sampler;
    s.seed = stream_seed(seed, stream);
    f.posterior = man.timed("fit_" + name, [&] { return glm::sample(f.spec, data, s); });
    f.means = glm::cell_means(f.posterior, f.spec);
    for (const auto& w : f.posterior.warnings) man.warnings.push_back(name + " model: " + w);
    if (dump) glm::write_draws_csv(f.posterior, f.spec, (*dump / ("draws_" + name + ".csv")).string());
    return f;
  };
  auto dump_counts = [&](const std::string& method, const CountDraws& counts) {
    if (dump) synthpop::write_count_draws_csv(counts, (*dump / ("counts_" + method + ".csv")).string());
  };

  const std::string outcome_terms = cfg.get_or("outcome_terms", default_terms(layout, frame.x_levels() > 1));
  std::optional<Fit> outcome;
  if (uses("wfpbb-mrp") || uses("multinomial-mrp") || uses("twostage-mrp")) {
    outcome = fit("outcome", outcome_terms, true, glm::aggregate_outcome_by_joint_cell(sample, frame), 2);
  }

  std::vector<EstimateSummary> results;
  for (const auto& method : methods) {
    if (method == "unweighted") {
      append(results, est::unweighted_estimate(sample, frame, subgroups));
    } else if (method == "wfpbb" || method == "wfpbb-mrp") {
      if (method == "wfpbb-mrp" && uses("wfpbb")) continue;  // shares the populations drawn for wfpbb
      synthpop::WfpbbOptions opts;
      opts.pops_per_draw = F;
      opts.clamp_nonnegative = cfg.has("clamp_nonnegative") ? cfg.flag("clamp_nonnegative") : true;
      if (T > 0.0) opts.pop_draw_size = std::round(T * static_cast<double>(sample.size()));
      const auto pops = man.timed("wfpbb", [&] {
        return synthpop::wfpbb_populations(sample, frame, L, opts, stream_seed(seed, 3), threads);
      });
      if (uses("wfpbb")) append(results, est::wfpbb_direct_estimate("wfpbb", pops, subgroups));
      if (uses("wfpbb-mrp")) {
        const auto counts = synthpop::counts_from_populations(pops, frame);
        dump_counts("wfpbb-mrp", counts);
        append(results, est::emrp_estimate("wfpbb-mrp", counts, outcome->means, subgroups, pairing));
      }
    } else if (method == "multinomial-mrp") {
      const auto counts = synthpop::counts_multinomial(sample, frame, L, stream_seed(seed, 4));
      dump_counts(method, counts);
      append(results, est::emrp_estimate(method, counts, outcome->means, subgroups, pairing));
    } else if (method == "twostage-mrp") {
      const auto stage1 = fit("stage1", cfg.get_or("stage1_terms", default_terms(layout, false)), false,
                              glm::aggregate_x_by_z_cell(sample, frame, 1), 5);
      synthpop::Stage1Draws s1{stage1.means.draws(), frame.z_cells(),
                               std::vector<double>(stage1.means.values().begin(), stage1.means.values().end())};
      const auto counts = synthpop::counts_twostage(frame, s1, {}, stream_seed(seed, 6));
      dump_counts(method, counts);
      append(results, est::emrp_estimate(method, counts, outcome->means, subgroups, pairing));
    } else if (method == "mrp") {
      const auto joint = io::read_joint_counts(resolve("joint_counts"), frame.joint_cells());
      const auto terms = cfg.get_or("mrp_terms", outcome_terms);
      const Fit* model = nullptr;
      std::optional<Fit> own;
      if (outcome && terms == outcome_terms) {
        model = &*outcome;
      } else {
        own = fit("mrp", terms, true, glm::aggregate_outcome_by_joint_cell(sample, frame), 9);
        model = &*own;
      }
      append(results, est::mrp_estimate(method, joint, model->means, subgroups));
    }
  }

  for (const auto& s : results) {
    if (s.skipped_draws > 0) {
      man.warnings.push_back(s.method + "/" + s.estimand + ": " + std::to_string(s.skipped_draws) +
                             " draws skipped for zero subgroup mass");
    }
  }
  man.timed("write", [&] {
    io::write_file_atomic(a.out, est::to_json(results) + "\n");
    return 0;
  });
  for (const auto& s : results) {
    out << s.method << "\t" << s.estimand << "\t" << s.estimate << "\t[" << s.ci_lower << ", " << s.ci_upper << "]\n";
  }
  return kOk;
}

// ---- plot ----

struct PlotArgs {
  std::optional<std::string> results;
  std::optional<std::string> estimates;
  std::string out_dir = "figures";
};

int cmd_plot(const PlotArgs& a, Manifest& man, std::ostream& out) {
  if (!a.results && !a.estimates) throw ValidationError("plot needs --results and/or --estimates");
  io::Config inputs;
  if (a.results) inputs.values["results"] = io::read_file(*a.results);
  if (a.estimates) inputs.values["estimates"] = io::read_file(*a.estimates);
  man.config_hash = inputs.hash();
  std::vector<std::string> written;
  if (a.results) {
    const auto rows = plot::read_results_csv(*a.results);
    written = man.timed("heatmaps", [&] { return plot::metric_heatmaps(rows, a.out_dir); });
  }
  if (a.estimates) {
    const auto est = est::from_json(io::read_file(*a.estimates));
    const auto path = (std::filesystem::path(a.out_dir) / "intervals.svg").string();
    man.timed("intervals", [&] {
      plot::interval_plot(est, path);
      return 0;
    });
    written.push_back(path);
  }
  for (const auto& p : written) out << p << "\n";
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const EmptyCellError*>(&e) || dynamic_cast<const UrnUnderflowError*>(&e) ||
      dynamic_cast<const EstimationError*>(&e)) {
    return kDataError;
  }
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const UnsupportedError*>(&e)) return kUserError;
  return kInternalError;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Embedded multilevel regression and poststratification"};
  cli.set_version_flag("--version", kVersion);
  cli.require_subcommand(1);

  SimulateArgs sa;
  auto* simulate = cli.add_subcommand("simulate", "Repeated-sampling study under the MAIN or INT design");
  simulate->add_option("--config", sa.common.config, "Key = value config file");
  simulate->add_option("--case", sa.design, "Design: main or int");
  simulate->add_option("--replicates", sa.replicates, "Number of repeated samples");
  simulate->add_option("--out", sa.out_dir, "Output directory");
  simulate->add_flag("--smoke", sa.smoke, "20 replicates, L = 200 and half the MCMC iterations");
  simulate->add_flag("--dump-replicates", sa.dump_replicates, "Also write per-replicate estimates");
  sa.common.add(simulate);

  EstimateArgs ea;
  auto* estimate = cli.add_subcommand("estimate", "Population and subgroup estimates from a sample CSV");
  estimate->add_option("--config", ea.common.config, "Key = value config file")->required();
  estimate->add_option("--method", ea.method, "Comma-separated methods, or all");
  estimate->add_option("--out", ea.out, "Output JSON path")->required();
  estimate->add_flag("--collapse-empty", ea.collapse_empty, "Merge unsampled Z-cells into the nearest sampled cell");
  estimate->add_option("--impute-hotdeck", ea.impute, "Comma-separated columns to fill from observed values");
  estimate->add_option("--dump", ea.dump_dir, "Directory for count and posterior draw CSVs");
  ea.common.add(estimate);

  PlotArgs pa;
  auto* plot_cmd = cli.add_subcommand("plot", "SVG figures from results.csv or estimate JSON");
  plot_cmd->add_option("--results", pa.results, "results.csv from simulate");
  plot_cmd->add_option("--estimates", pa.estimates, "JSON from estimate");
  plot_cmd->add_option("--out", pa.out_dir, "Output directory");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e, out, err);
    return code == 0 ? kOk : kUserError;
  }

  Manifest man;
  std::string manifest_path;
  int code = kOk;
  try {
    if (simulate->parsed()) {
      man.command = "simulate";
      manifest_path = (std::filesystem::path(sa.out_dir) / "manifest.json").string();
      code = cmd_simulate(sa, man, out);
    } else if (estimate->parsed()) {
      man.command = "estimate";
      manifest_path = ea.out + ".manifest.json";
      code = cmd_estimate(ea, man, out);
    } else {
      man.command = "plot";
      manifest_path = (std::filesystem::path(pa.out_dir) / "manifest.json").string();
      code = cmd_plot(pa, man, out);
    }
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    man.status = "failed";
    man.error = e.what();
    err << "error: " << e.what() << "\n";
  }
  for (const auto& w : man.warnings) err << "warning: " << w << "\n";
  try {
    const auto parent = std::filesystem::path(manifest_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    man.write(manifest_path);
  } catch (const std::exception& e) {
    err << "error: could not write manifest: " << e.what() << "\n";
    if (code == kOk) code = kUserError;
  }
  return code;
}

}  // namespace emrp::app
