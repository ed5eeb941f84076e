#include "doctest.h"

#include "fixtures.hpp"
#include "vidfm/io.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace vidfm;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vidfm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VIDFM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

SavedModel sample_model() {
  Rng rng(7);
  const ModelDims d(3, 6, 1, 1);
  SavedModel m;
  m.dims = d;
  m.prior = PriorSpec::defaults(d, 0.3);
  m.scaling = {Vector::Random(3), Vector::Constant(3, 1.0 / 3.0)};
  m.state = fixture::random_state(rng, d);
  m.state.g = Matrix::Random(3, 2);
  ElboBreakdown e;
  e.total = -1.0 / 7.0;
  e.f_terms = 0.1;
  m.trace = {e, e};
  m.names = {"a", "b,c", "d"};
  return m;
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("panel CSV round-trip is bit-exact") {
  Rng rng(2);
  Panel p = fixture::random_panel(rng, 4, 12, 0.2);
  Matrix y = p.y();
  y(0, 0) = 1.0 / 3.0;
  y(1, 1) = -1e-300;
  p = Panel(y, p.mask());
  const std::string text = format_panel_csv(p, {"x1", "x2", "x3", "x4"});
  const CsvPanel back = parse_panel_csv(text);
  CHECK(back.panel == p);
  CHECK(back.names == std::vector<std::string>{"x1", "x2", "x3", "x4"});
  CHECK(format_panel_csv(back.panel, back.names, back.time_index) == text);
}

TEST_CASE("one empty cell gives exactly one missing entry") {
  const CsvPanel c = parse_panel_csv("time,a,b\n1,1.5,2\n2,,3\n3,4,5\n");
  CHECK(c.panel.n() == 2);
  CHECK(c.panel.T() == 3);
  CHECK(c.panel.mask().count() == 5);
  CHECK_FALSE(c.panel.available(0, 1));
  CHECK(c.panel.y(1, 2) == 5.0);
  CHECK(c.time_index == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("malformed CSV input is rejected with its location") {
  CHECK_THROWS_WITH_AS(parse_panel_csv("time,a,b\n1,1,2\n2,NA,3\n"), doctest::Contains("row 3"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_panel_csv("time,a,b\n1,1,2\n2,NA,3\n"), doctest::Contains("column 'a'"), ConfigError);
  CHECK_THROWS_AS(parse_panel_csv("time,a,b\n1,1,2\n2,3\n"), ConfigError);
  CHECK_THROWS_AS(parse_panel_csv("time,a,b\n1,1,2\n1,3,4\n"), ConfigError);
  CHECK_THROWS_AS(parse_panel_csv(""), ConfigError);
  CHECK_NOTHROW(parse_panel_csv("time,a,b\n1,,2\n2,,3\n"));
}

TEST_CASE("model save, load, save gives identical bytes") {
  const fs::path dir = scratch_dir("model");
  const SavedModel m = sample_model();
  save_model((dir / "m.json").string(), m);
  const SavedModel back = load_model((dir / "m.json").string());
  CHECK(back.state.mu_lambda == m.state.mu_lambda);
  CHECK(back.state.b == m.state.b);
  CHECK(back.trace[1].total == m.trace[1].total);
  CHECK(back.names == m.names);
  CHECK(back.prior.beta == m.prior.beta);
  save_model((dir / "m2.json").string(), back);
  CHECK(read_file((dir / "m.json").string()) == read_file((dir / "m2.json").string()));
}

TEST_CASE("truncated or mismatched model files are rejected") {
  const std::string text = serialize_model(sample_model());
  CHECK_THROWS_AS(deserialize_model(text.substr(0, text.size() / 2)), ConfigError);
  std::string bumped = text;
  const auto pos = bumped.find("\"version\": 1");
  REQUIRE(pos != std::string::npos);
  bumped.replace(pos, 12, "\"version\": 9");
  CHECK_THROWS_WITH_AS(deserialize_model(bumped), doctest::Contains("version"), ConfigError);
}

TEST_CASE("prior file: scalars then overrides") {
  const ModelDims d(2, 5, 1, 0);
  const PriorSpec p = parse_prior(R"({"beta": 0.4, "nu": 3, "tau2_eps": [2.0, 0.5]})", d);
  CHECK(p.beta(1, 0) == 0.4);
  CHECK(p.nu_eps(0) == 3.0);
  CHECK(p.tau2_eps(1) == 0.5);
  CHECK(p.tau2_u(0) == 1.0);
  CHECK_THROWS_AS(parse_prior(R"({"tau2_eps": [1.0]})", d), ConfigError);
  CHECK_THROWS_AS(parse_prior("{", d), ConfigError);
}

TEST_CASE("inclusion long format") {
  Matrix b(1, 2);
  b << 0.25, 1.0;
  Matrix z(1, 2);
  z << 0, 1;
  CHECK(format_inclusion_long(b, &z) == "i,k,b,z_true\n1,1,0.25,0\n1,2,1,1\n");
}

TEST_CASE("command line: outputs and exit codes") {
  const fs::path dir = scratch_dir("cli");
  const std::string d = dir.string();
  REQUIRE(run_cli("simulate --n 12 --T 30 --r 1 --omega 0.5 --seed 3 --out " + d + "/sim") == 0);
  CHECK(fs::exists(dir / "sim" / "panel.csv"));
  CHECK(fs::exists(dir / "sim" / "truth.json"));
  REQUIRE(run_cli("fit --input " + d + "/sim/panel.csv --r 1 --out " + d + "/fit --threads 1") == 0);
  for (const char* f : {"state.json", "elbo_trace.csv", "factors.csv", "loadings.csv"}) CHECK(fs::exists(dir / "fit" / f));
  CHECK(run_cli("export --state " + d + "/fit/state.json --truth " + d + "/sim/truth.json --out " + d + "/exp") == 0);
  CHECK(fs::exists(dir / "exp" / "inclusion_long.csv"));
  CHECK(run_cli("em --input " + d + "/sim/panel.csv --r 1 --out " + d + "/em") == 0);
  CHECK(fs::exists(dir / "em" / "em_loglik.csv"));

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "time,a\n1,NA\n";
  }
  CHECK(run_cli("fit --input " + d + "/bad.csv --out " + d + "/x") == 2);
  CHECK(run_cli("fit --input " + d + "/sim/panel.csv --r 20 --out " + d + "/x") == 2);
  CHECK(run_cli("fit --bogus") == 2);
  CHECK(run_cli("fit --input " + d + "/missing.csv --out " + d + "/x") != 0);
}
