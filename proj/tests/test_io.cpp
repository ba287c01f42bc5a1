#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "emrp/errors.hpp"
#include "emrp/io.hpp"

using namespace emrp;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("emrp_io_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config hash ignores line order and comments") {
  const auto a = io::parse_config("seed = 3\ncase = main\n# note\n");
  const auto b = io::parse_config("case=main\n\nseed=3");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(io::parse_config("seed = 4\ncase = main").hash() != a.hash());
  CHECK(a.get("case") == "main");
  CHECK(a.count("seed") == 3);
  CHECK(a.lines.at("case") == 2);
}

TEST_CASE("config errors name the line") {
  CHECK(error_of([] { io::parse_config("a = 1\nb = 2\na = 3\n"); }).find("line 3") != std::string::npos);
  CHECK(error_of([] { io::parse_config("a = 1\njunk\n"); }).find("line 2") != std::string::npos);
  const auto c = io::parse_config("n = abc\nflag = yes\n");
  CHECK_THROWS_AS(c.number("n"), ValidationError);
  CHECK(c.flag("flag"));
  CHECK_THROWS_AS(c.get("missing"), ValidationError);
}

TEST_CASE("csv parsing checks shape") {
  const auto t = io::parse_csv("a, b\n1,2\n 3 ,4\n");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  CHECK(t.rows[1][0] == "3");
  CHECK(*t.column("b") == 1);
  CHECK(!t.column("c"));
  CHECK(error_of([] { io::parse_csv("a,b\n1,2\n3\n"); }).find("line 3") != std::string::npos);
  CHECK_THROWS_AS(io::parse_csv(""), ValidationError);
}

TEST_CASE("atomic write replaces content and leaves no temporaries") {
  const auto dir = scratch_dir("atomic");
  const auto path = (dir / "out.txt").string();
  io::write_file_atomic(path, "first");
  io::write_file_atomic(path, "second");
  CHECK(io::read_file(path) == "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("margins and joint counts use 1-based indices") {
  const auto dir = scratch_dir("margins");
  {
    std::ofstream(dir / "m.csv") << "m,count\n2,30\n1,20\n";
    std::ofstream(dir / "j.csv") << "j,count\n1,5\n4,7\n2,0\n3,0\n";
    std::ofstream(dir / "gap.csv") << "j,count\n1,5\n2,7\n";
    std::ofstream(dir / "bad.csv") << "m,count\n3,30\n";
  }
  const auto frame = io::read_margins((dir / "m.csv").string(), 2);
  CHECK(frame.z_cells() == 2);
  CHECK(frame.margin(0) == 20);
  CHECK(frame.population() == 50);
  const auto j = io::read_joint_counts((dir / "j.csv").string(), 4);
  CHECK(j == std::vector<double>{5, 0, 0, 7});
  CHECK_THROWS_AS(io::read_joint_counts((dir / "j.csv").string(), 3), ValidationError);
  CHECK_THROWS_AS(io::read_joint_counts((dir / "gap.csv").string(), 4), ValidationError);
  CHECK_THROWS_AS(io::read_margins((dir / "bad.csv").string(), 2), ValidationError);
  std::filesystem::remove_all(dir);
}
