#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kfplab/verify.hpp"

using namespace kfp;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = KFPLAB_SOURCE_DIR;

Json small_scenario() {
  return Json::parse(R"({
    "name": "small",
    "seed": 5,
    "structure": {"m": [1, 1]},
    "coefficients": {"type": "piecewise", "switch_times": [0.5], "a0": [[[1.0]], [[2.0]]]},
    "domain": {"x_box": [[-1, 1], [-1, 1]], "tau": 0.0, "T": 1.0},
    "manufactured": [{"center": [0.1, 0.2], "W": [[2.0, 0.5], [0.5, 2.0]], "lambda": 0.25}],
    "sources": [],
    "grid": {"x_points": [5, 9], "t_points": [4, 8], "radii": 8},
    "checks": []
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("scenario parsing") {
  auto sc = scenario_from_json(small_scenario(), kRoot);
  CHECK(sc.structure.dim() == 2);
  CHECK(sc.coefficients.kind() == CoefficientModel::Kind::piecewise);
  CHECK(sc.grid.x_coarse == 5);
  CHECK(sc.grid.x_fine == 9);
  CHECK(sc.manufactured.size() == 1);
}

TEST_CASE("bad block sizes name the field") {
  auto j = small_scenario();
  j["structure"]["m"] = {1, 2};
  try {
    scenario_from_json(j, kRoot);
    FAIL("no throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("m") != std::string::npos);
    CHECK(e.field().find("m") != std::string::npos);
  }
  CHECK_THROWS_AS(load_scenario(kRoot + "/tests/data/bad_m.json"), ConfigError);
}

TEST_CASE("schema errors") {
  auto j = small_scenario();
  j["checks"] = {"no_such_check"};
  CHECK_THROWS_AS(scenario_from_json(j, kRoot), ConfigError);
  j = small_scenario();
  j["alpha"] = 1.5;
  CHECK_THROWS_AS(scenario_from_json(j, kRoot), ConfigError);
  j = small_scenario();
  j["coefficients"]["a0"] = {{{1.0}}};
  CHECK_THROWS_AS(scenario_from_json(j, kRoot), ConfigError);
  j = small_scenario();
  j["sources"] = Json::parse(R"([{"name": "g", "expression": "x1 +", "modulus": {"family": "zero"}}])");
  CHECK_THROWS_AS(scenario_from_json(j, kRoot), ConfigError);
}

TEST_CASE("every shipped scenario loads") {
  for (const auto& e : fs::directory_iterator(kRoot + "/scenarios")) {
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_scenario(e.path().string()));
  }
}

TEST_CASE("empty check list writes a header-only summary") {
  auto sc = scenario_from_json(small_scenario(), kRoot);
  auto bundle = run_scenario(sc);
  CHECK(bundle.reports.empty());
  CHECK(bundle.all_pass());
  fs::path out = fs::temp_directory_path() / "kfplab_test_empty";
  fs::remove_all(out);
  report_write(bundle, out.string());
  std::string csv = slurp(out / "summary.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
  CHECK(csv.rfind("inequality_id", 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("zero solution gives zero constants") {
  auto j = small_scenario();
  j["manufactured"][0]["amplitude"] = 0.0;
  auto sc = scenario_from_json(j, kRoot);
  auto sp = schauder_space_check(sc);
  auto tm = schauder_time_check(sc);
  CHECK(sp.c_star == 0.0);
  CHECK(tm.c_star == 0.0);
  CHECK(sp.pass);
  CHECK(tm.pass);
}

TEST_CASE("Schauder constants for a smooth bump") {
  auto sc = scenario_from_json(small_scenario(), kRoot);
  auto sp = schauder_space_check(sc);
  CHECK(std::isfinite(sp.c_star));
  CHECK(sp.c_star > 0.0);
  // doubling the amplitude leaves the constant unchanged
  auto j = small_scenario();
  j["manufactured"][0]["amplitude"] = 2.0;
  auto sp2 = schauder_space_check(scenario_from_json(j, kRoot));
  CHECK(sp2.c_star == doctest::Approx(sp.c_star).epsilon(1e-9));
}

TEST_CASE("SDE oracle") {
  auto s = ModelStructure::build({1, 1});
  auto model = CoefficientModel::piecewise(s, {0.5}, {Mat::Identity(1, 1), 2.0 * Mat::Identity(1, 1)});
  Vec y(2);
  y << 1.0, 0.0;
  SdeOptions opt;
  opt.n_paths = 100000;
  auto r = sde_density_oracle(model, y, 0.0, 1.0, opt);
  CHECK(r.pass);
  CHECK(r.details.at("mean_z_max") <= 4.0);
  CHECK(r.details.at("cov_rel_frobenius") <= 0.05);
  // four times fewer paths: the standard error doubles
  SdeOptions quarter = opt;
  quarter.n_paths = 25000;
  auto q = sde_density_oracle(model, y, 0.0, 1.0, quarter);
  for (int i = 0; i < 2; ++i) {
    double ratio = q.details.at("se_" + std::to_string(i)) / r.details.at("se_" + std::to_string(i));
    CHECK(ratio >= 1.5);
    CHECK(ratio <= 2.5);
  }
  // the spread of the sample mean over seeds follows the standard error
  double sq = 0.0;
  const int reps = 12;
  for (int k = 0; k < reps; ++k) {
    SdeOptions o = quarter;
    o.seed = 100 + k;
    auto rr = sde_density_oracle(model, y, 0.0, 1.0, o);
    double d = rr.details.at("mean_0") - rr.details.at("mean_exact_0");
    sq += d * d;
  }
  double spread = std::sqrt(sq / reps) / q.details.at("se_0");
  CHECK(spread >= 0.5);
  CHECK(spread <= 1.6);
}

TEST_CASE("best-constant helpers") {
  CHECK(ratio_max({1.0, 4.0, 3.0}, {1.0, 2.0, 0.0}) == 2.0);
  CHECK(ratio_max({}, {}) == 0.0);
  CHECK(relative_change(1.1, 1.0) == doctest::Approx(0.1 / 1.1));
  std::vector<double> lhs{1, 2, 3, 4}, rhs{1, 1, 1, 1};
  trim_samples(lhs, rhs, 2);
  CHECK(lhs == std::vector<double>{3, 4});
  auto fit = fit_two_level({1.0, 2.0}, [](double c) { return std::vector<double>{c, c}; }, -2, 3);
  CHECK(std::isfinite(fit.c_star));
  CHECK(fit.c_star <= 2.0 + 1e-12);
}

TEST_CASE("compass search finds an interior maximum") {
  auto f = [](const Eigen::VectorXd& z) { return -std::pow(z(0) - 0.3, 2) - std::pow(z(1) + 0.2, 2); };
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -1.0), hi = Eigen::VectorXd::Constant(2, 1.0);
  auto r = compass_maximize(f, Eigen::VectorXd::Zero(2), lo, hi, 0.1, 1e-7, 2000);
  CHECK(r.z(0) == doctest::Approx(0.3).epsilon(1e-5));
  CHECK(r.z(1) == doctest::Approx(-0.2).epsilon(1e-5));
  CHECK(r.evaluations <= 2000);
}

TEST_CASE("curves interpolate monotone data") {
  Curve c([](double r) { return std::sqrt(r); }, 1e-4, 10.0, 40);
  CHECK(c.finite());
  CHECK(c(0.37) == doctest::Approx(std::sqrt(0.37)).epsilon(1e-9));
  CHECK(c(1e-6) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("reports are reproducible and thread independent") {
  auto j = small_scenario();
  j["checks"] = {"gamma_normalization", "structure_constants", "schauder_space"};
  auto sc = scenario_from_json(j, kRoot);
  sc.threads = 1;
  auto a = run_scenario(sc);
  sc.threads = 3;
  auto b = run_scenario(sc);
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i)
    CHECK(report_to_json(a.reports[i]).dump() == report_to_json(b.reports[i]).dump());
}
