// Runs the built command-line tool in a scratch directory.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "catch_amalgamated.hpp"
#include "histmix/io.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("histmix_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(HISTMIX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return histmix::read_file(p); }

}  // namespace

TEST_CASE("simulate writes an n x 3 CSV and is reproducible") {
  const auto dir = scratch("simulate");
  REQUIRE(run("simulate --scenario sim1 --n 100 --seed 7 --out " + dir.string()) == 0);
  const auto pts = histmix::points_from_csv(slurp(dir / "data.csv"));
  CHECK(pts.size() == 100);
  CHECK(fs::exists(dir / "labels.csv"));
  CHECK(fs::exists(dir / "data.csv.meta.json"));
  const auto first = slurp(dir / "data.csv");
  REQUIRE(run("simulate --scenario sim1 --n 100 --seed 7 --out " + dir.string()) == 0);
  CHECK(slurp(dir / "data.csv") == first);
  const auto meta = nlohmann::json::parse(slurp(dir / "data.csv.meta.json"));
  CHECK(meta["seed"] == 7);
  CHECK(meta["config"]["scenario"] == "sim1");
}

TEST_CASE("exit codes name the error class") {
  const auto dir = scratch("errors");
  CHECK(run("simulate --scenario sim1 --n 10 --out " + dir.string()) == 2);  // no seed
  CHECK(run("simulate --scenario nope --n 10 --seed 1 --out " + dir.string()) == 5);
  CHECK(run("fit --data " + (dir / "missing.csv").string() + " --seed 1 --out " + dir.string()) == 6);
  CHECK(run("bogus") == 2);
  histmix::write_file(dir / "bad.csv", "x1,x2,x3\n0.1,0.2,1.7\n");
  CHECK(run("fit --data " + (dir / "bad.csv").string() + " --seed 1 --out " + dir.string()) == 3);
}

TEST_CASE("fit and select outputs") {
  const auto dir = scratch("fit");
  REQUIRE(run("simulate --scenario sim1 --n 100 --seed 3 --out " + dir.string()) == 0);
  const auto data = (dir / "data.csv").string();
  REQUIRE(run("fit --data " + data + " --k 1 --p 2 --seed 1 --out " + dir.string()) == 0);
  auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  CHECK(fit["theta"] == std::vector<double>{1.0});
  REQUIRE(run("fit --data " + data + " --k 2 --p 3 --repeated --seed 1 --out " + dir.string()) == 0);
  fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  CHECK(fit["theta"][0].get<double>() <= fit["theta"][1].get<double>());

  REQUIRE(run("select --data " + data + " --k 2 --scheme D1 --repeated --seed 1 --out " + dir.string()) == 0);
  const auto sel = nlohmann::json::parse(slurp(dir / "selection.json"));
  CHECK(sel["scheme"]["b_n"] == 5);
  CHECK(sel["scheme"]["a_n"] == 10);
  const auto csv = slurp(dir / "criteria.csv");
  CHECK(csv.rfind("P,c_cv,c_cv1\n", 0) == 0);
  REQUIRE(run("select --data " + data + " --k 2 --pmin 3 --pmax 3 --seed 1 --out " + dir.string()) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "selection.json"))["chosen_p"] == 3);
}

TEST_CASE("sidecars reproduce their files and worker count does not matter") {
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  const std::string args = "risk --scenario sim2 --n 60 --reps 12 --pmax 4 --restarts 3 --seed 5";
  REQUIRE(run(args + " --workers 1 --out " + a.string()) == 0);
  REQUIRE(run(args + " --workers 4 --out " + b.string()) == 0);
  CHECK(slurp(a / "risk_curve.csv") == slurp(b / "risk_curve.csv"));
  CHECK(slurp(a / "risk_curve.csv.meta.json") == slurp(b / "risk_curve.csv.meta.json"));
  // Flags are overridden by the recorded configuration.
  REQUIRE(run("risk --n 999 --seed 1 --run-config " + (a / "risk_curve.csv.meta.json").string() + " --out " +
              c.string()) == 0);
  CHECK(slurp(c / "risk_curve.csv") == slurp(a / "risk_curve.csv"));
}

TEST_CASE("table2 and efficiency outputs") {
  const auto dir = scratch("tables");
  REQUIRE(run("table2 --scenario sim1 --n 60 --reps 4 --scheme D1,V2 --restarts 2 --seed 2 --out " + dir.string()) == 0);
  const auto t2 = slurp(dir / "table2.csv");
  CHECK(t2.rfind("scenario,n,row,sqrt_risk,se,p\n", 0) == 0);
  CHECK(t2.find("sim1,60,V2,") != std::string::npos);
  REQUIRE(run("efficiency --scenario sim1 --p 2 --n-list 100,200 --reps 10 --restarts 2 --seed 2 --out " + dir.string()) == 0);
  const auto eff = slurp(dir / "efficiency.csv");
  CHECK(eff.rfind("n,i,j,empirical,predicted,discrepancy,failures\n", 0) == 0);
  CHECK(std::count(eff.begin(), eff.end(), '\n') == 3);
}
