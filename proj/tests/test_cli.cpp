#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "emrp/app.hpp"
#include "emrp/errors.hpp"
#include "emrp/estimators.hpp"
#include "emrp/io.hpp"

using namespace emrp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "emrp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = app::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("emrp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Four Z-cells (factors a and b with two levels each), binary X.
// `skip_cell` leaves one 1-based Z-cell unsampled.
fs::path estimate_fixture(const std::string& name, int skip_cell = 0, const std::string& extra = "") {
  const auto dir = fresh_dir(name);
  std::string sample = "z_cat,x,y\n";
  for (int m = 1; m <= 4; ++m) {
    if (m == skip_cell) continue;
    for (int i = 0; i < 20; ++i) {
      sample += std::to_string(m) + "," + std::to_string(1 + i % 2) + "," + ((i * m) % 3 == 0 ? "1" : "0") + "\n";
    }
  }
  write(dir / "sample.csv", sample);
  write(dir / "margins.csv", "m,count\n1,100\n2,150\n3,120\n4,130\n");
  write(dir / "joint.csv", "j,count\n1,50\n2,50\n3,70\n4,80\n5,60\n6,60\n7,65\n8,65\n");
  write(dir / "run.cfg",
        "sample = sample.csv\nmargins = margins.csv\njoint_counts = joint.csv\nz_factors = a:2,b:2\n"
        "L = 40\nF = 2\niters = 200\nwarmup = 100\nseed = 3\n"
        "subgroup.a1 = a==1\nsubgroup.x2b2 = x==2 & b==2\n" +
            extra);
  return dir;
}

std::size_t data_rows(const fs::path& csv) { return io::read_csv(csv.string()).rows.size(); }

}  // namespace

TEST_CASE("factor layouts and model terms") {
  const auto layout = app::parse_factors("age:3, sex:2", 6);
  CHECK(layout.names == std::vector<std::string>{"age", "sex"});
  CHECK(layout.level(0, 5) == 2);
  CHECK(layout.level(1, 5) == 1);
  const std::vector<std::size_t> lv = {1, 0};
  CHECK(layout.z_cell(lv) == 2);
  CHECK(app::parse_factors("", 7).names == std::vector<std::string>{"z_cat"});
  CHECK_THROWS_AS(app::parse_factors("age:3", 6), ValidationError);
  CHECK_THROWS_AS(app::parse_factors("x:6", 6), ValidationError);
  CHECK_THROWS_AS(app::parse_factors("age", 6), ValidationError);

  const auto frame = build_cell_frame(6, 2, std::vector<double>(6, 10.0));
  const auto t = app::make_term("x:sex", layout, frame, true);
  CHECK(t.levels == 4);
  // Joint cell j = m * 2 + c; level = c * 2 + sex(m).
  CHECK(t.level_of_row[frame.joint_index(1, 1)] == 3);
  CHECK(t.level_of_row[frame.joint_index(2, 0)] == 0);
  CHECK_THROWS_AS(app::make_term("x", layout, frame, false), ValidationError);
  CHECK_THROWS_AS(app::make_term("income", layout, frame, true), ValidationError);
}

TEST_CASE("subgroup predicates") {
  const auto layout = app::parse_factors("age:3,sex:2", 6);
  const auto frame = build_cell_frame(6, 2, std::vector<double>(6, 10.0));
  const auto g = app::parse_subgroup("old_women", "age==3 & sex==2", layout, frame);
  CHECK(g.cells == std::vector<std::size_t>{10, 11});
  const auto h = app::parse_subgroup("not_x1", "x!=1", layout, frame);
  CHECK(h.cells.size() == 6);
  CHECK_THROWS_AS(app::parse_subgroup("bad", "income==1", layout, frame), ValidationError);
  CHECK_THROWS_AS(app::parse_subgroup("bad", "age==4", layout, frame), ValidationError);
  CHECK_THROWS_AS(app::parse_subgroup("bad", "age>1", layout, frame), ValidationError);
  CHECK_THROWS_AS(app::parse_subgroup("none", "sex==1 & sex==2", layout, frame), ValidationError);
}

TEST_CASE("hot-deck imputation fills only missing cells from observed values") {
  auto t = io::parse_csv("x,y\n1,NA\n2,0\n,1\n2,1\n");
  Rng rng = make_stream(1, 8);
  const std::vector<std::string> cols = {"x", "y"};
  app::impute_hotdeck(t, cols, rng);
  CHECK((t.rows[0][1] == "0" || t.rows[0][1] == "1"));
  CHECK((t.rows[2][0] == "1" || t.rows[2][0] == "2"));
  CHECK(t.rows[1][1] == "0");
  const std::vector<std::string> missing = {"w"};
  CHECK_THROWS_AS(app::impute_hotdeck(t, missing, rng), ValidationError);
}

TEST_CASE("usage errors exit with 2") {
  const auto out = fresh_dir("usage").string();
  CHECK(run({}).code == 2);
  CHECK(run({"simulate", "--out", out}).code == 2);
  CHECK(run({"simulate", "--case", "other", "--out", out}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("estimate runs every method and writes a manifest") {
  const auto dir = estimate_fixture("all");
  const auto out = (dir / "est.json").string();
  const auto r = run({"estimate", "--config", (dir / "run.cfg").string(), "--out", out});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto est = est::from_json(io::read_file(out));
  std::set<std::string> methods;
  for (const auto& s : est) methods.insert(s.method);
  CHECK(methods == std::set<std::string>{"wfpbb", "wfpbb-mrp", "multinomial-mrp", "twostage-mrp", "mrp",
                                         "unweighted"});
  CHECK(est.size() == 6 * 3);
  CHECK(fs::exists(out + ".manifest.json"));

  // Large draw settings are accepted.
  const auto big = run({"estimate", "--config", (dir / "run.cfg").string(), "--out", out, "--method", "unweighted",
                        "--L", "5000", "--F", "20", "--T", "30"});
  CHECK(big.code == 0);
}

TEST_CASE("estimate exit codes") {
  const auto dir = estimate_fixture("codes", 4);
  const auto cfg = (dir / "run.cfg").string();
  const auto out = (dir / "est.json").string();
  CHECK(run({"estimate", "--config", cfg, "--out", out, "--method", "wfpbb"}).code == 3);
  CHECK(run({"estimate", "--config", cfg, "--out", out, "--method", "wfpbb", "--collapse-empty"}).code == 0);
  CHECK(run({"estimate", "--config", cfg, "--out", out, "--method", "magic"}).code == 2);
  CHECK(run({"estimate", "--config", (dir / "missing.cfg").string(), "--out", out}).code == 2);

  const auto typo = estimate_fixture("typo", 0, "chians = 2\n");
  CHECK(run({"estimate", "--config", (typo / "run.cfg").string(), "--out", out}).code == 2);
}

TEST_CASE("estimate imputes missing sample values on request") {
  const auto dir = estimate_fixture("impute");
  auto text = io::read_file((dir / "sample.csv").string());
  text.replace(text.find("\n1,1,"), 5, "\n1,NA,");
  write(dir / "sample.csv", text);
  const auto cfg = (dir / "run.cfg").string();
  const auto out = (dir / "est.json").string();
  CHECK(run({"estimate", "--config", cfg, "--out", out, "--method", "unweighted"}).code == 2);
  CHECK(run({"estimate", "--config", cfg, "--out", out, "--method", "unweighted", "--impute-hotdeck", "x"}).code == 0);
}

TEST_CASE("plot validates input and writes heatmaps") {
  const auto dir = fresh_dir("plot");
  write(dir / "empty.csv", "method,estimand,bias,rmse,ci_length,coverage\n");
  write(dir / "bad.csv", "method,estimand\nA,overall\n");
  write(dir / "ok.csv",
        "method,estimand,bias,rmse,ci_length,coverage\nA,overall,0.01,0.02,0.05,0.95\nB,overall,-0.02,0.03,0.04,0.9\n");
  CHECK(run({"plot", "--results", (dir / "empty.csv").string(), "--out", (dir / "f1").string()}).code == 2);
  CHECK(run({"plot", "--results", (dir / "bad.csv").string(), "--out", (dir / "f2").string()}).code == 2);
  CHECK(run({"plot", "--out", (dir / "f3").string()}).code == 2);
  REQUIRE(run({"plot", "--results", (dir / "ok.csv").string(), "--out", (dir / "figs").string()}).code == 0);
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(dir / "figs")) svgs += e.path().extension() == ".svg" ? 1 : 0;
  CHECK(svgs >= 3);
}

TEST_CASE("a small simulate run writes 25 rows and repeats byte for byte") {
  const auto dir = fresh_dir("sim");
  const std::vector<std::string> common = {"simulate", "--case", "main", "--smoke", "--replicates", "1",
                                           "--iters", "200", "--warmup", "100", "--L", "20", "--F", "2"};
  auto a = common, b = common;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string(), "--threads", "2"});
  const auto ra = run(a);
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  REQUIRE(run(b).code == 0);
  CHECK(data_rows(dir / "a" / "results.csv") == 25);
  CHECK(io::read_file((dir / "a" / "results.csv").string()) == io::read_file((dir / "b" / "results.csv").string()));
  CHECK(fs::exists(dir / "a" / "manifest.json"));
}
