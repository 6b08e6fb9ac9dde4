// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <boost/math/quadrature/exp_sinh.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "kfplab/verify.hpp"

using namespace kfp;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = KFPLAB_SOURCE_DIR;
const std::string kFlagship = kRoot + "/scenarios/kolmogorov_1934.json";
const std::string kRough = kRoot + "/scenarios/rough_sources.json";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double rel(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

CoefficientModel unit_kolmogorov() {
  return CoefficientModel::constant(ModelStructure::build({1, 1}), Mat::Identity(1, 1));
}

// shared flagship runs (criteria 10 and 12)
struct FlagshipRuns {
  ReportBundle one, two;
  fs::path dir_one, dir_two;
};

const FlagshipRuns& flagship_runs() {
  static FlagshipRuns runs = [] {
    FlagshipRuns r;
    Scenario sc = load_scenario(kFlagship);
    fs::path base = fs::temp_directory_path() / "kfplab_acceptance";
    fs::remove_all(base);
    r.dir_one = base / "threads1";
    r.dir_two = base / "threads2";
    sc.threads = 1;
    r.one = run_scenario(sc);
    report_write(r.one, r.dir_one.string());
    sc.threads = 2;
    r.two = run_scenario(sc);
    report_write(r.two, r.dir_two.string());
    return r;
  }();
  return runs;
}

Outcome c1_normalization() {
  Scenario sc = load_scenario(kFlagship);
  if (sc.coefficients.breakpoints().size() != 1) return {false, "flagship needs exactly one switch"};
  double worst = 0.0;
  for (double a : linspace(-1.0, 1.0, 5))
    for (double t : linspace(0.2, 1.0, 5)) {
      auto r = gamma_normalization_check(sc.coefficients, v2(a, -0.7 * a), t, 0.0);
      worst = std::max(worst, r.lhs_max);
    }
  return {worst <= 1e-8, fmt("max |int Gamma - 1| = %.3e over 25 points", worst)};
}

Outcome c2_covariance() {
  auto model = unit_kolmogorov();
  const auto& s = model.structure();
  Mat C1 = covariance_matrix(model, 1.0, 0.0);
  double worst_closed = 0.0, worst_hom = 0.0;
  for (double tau : {0.1, 1.0, 10.0}) {
    Mat want(2, 2);
    want << tau, -tau * tau / 2, -tau * tau / 2, tau * tau * tau / 3;
    Mat C = covariance_matrix(model, tau, 0.0);
    worst_closed = std::max(worst_closed, (C - want).norm() / want.norm());
    Mat D = dilation_matrix(s, std::sqrt(tau)).toDenseMatrix();
    worst_hom = std::max(worst_hom, (C - D * C1 * D).norm() / C.norm());
  }
  bool ok = worst_closed <= 1e-12 && worst_hom <= 1e-12;
  return {ok, fmt("closed form %.2e", worst_closed) + fmt(", homogeneity %.2e", worst_hom)};
}

Outcome c3_heat() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(-2.0, 2.0), T(0.02, 3.0), A(0.3, 3.0);
  double worst = 0.0;
  for (int n : {1, 2, 3}) {
    auto s = ModelStructure::build({n});
    for (int k = 0; k < 200; ++k) {
      double a = A(rng), tau = T(rng), s0 = U(rng);
      auto model = CoefficientModel::constant(s, a * Mat::Identity(n, n));
      Vec x(n), y(n);
      for (int i = 0; i < n; ++i) {
        x(i) = U(rng);
        y(i) = U(rng);
      }
      double want = std::pow(4.0 * std::numbers::pi * a * tau, -0.5 * n) *
                    std::exp(-(x - y).squaredNorm() / (4.0 * a * tau));
      worst = std::max(worst, rel(gamma(model, x, s0 + tau, y, s0), want));
    }
  }
  return {worst <= 1e-12, fmt("max relative error %.2e over 600 samples", worst)};
}

Outcome c4_residual() {
  Scenario sc = load_scenario(kFlagship);
  auto heat = CoefficientModel::constant(ModelStructure::build({1}), Mat::Identity(1, 1));
  auto r1 = lgamma_residual_check(sc.coefficients, v2(0.0, 0.0), 0.0);
  auto r2 = lgamma_residual_check(unit_kolmogorov(), v2(0.2, -0.1), 0.0);
  auto r3 = lgamma_residual_check(heat, Vec::Zero(1), 0.0);
  double order = std::min({r1.details.at("order"), r2.details.at("order"), r3.details.at("order")});
  double pair = std::min({r1.details.at("min_pairwise_order"), r2.details.at("min_pairwise_order"),
                          r3.details.at("min_pairwise_order")});
  bool ok = order >= 1.9 && pair >= 1.9 && r1.details.at("excluded_switch_points") > 0;
  return {ok, fmt("observed order %.3f", order) + fmt(" (worst halving %.3f)", pair) +
                  fmt(", %.0f switch points excluded", r1.details.at("excluded_switch_points"))};
}

Outcome c5_chapman() {
  Scenario sc = load_scenario(kFlagship);
  double worst = 0.0;
  for (const auto& model : {unit_kolmogorov(), sc.coefficients.without_perturbation()})
    for (Vec x : {v2(0.0, 0.0), v2(0.4, -0.3)})
      for (Vec y : {v2(0.0, 0.0), v2(-0.5, 0.2)})
        worst = std::max(worst, chapman_kolmogorov_check(model, x, 1.0, 0.5, y, 0.0).lhs_max);
  return {worst <= 1e-6, fmt("max relative deviation %.2e", worst)};
}

// u = det(I + S P)^{-1/2} exp(-1/2 m^T (P^{-1} + S)^{-1} m), m = E(s-t) x, S = 2 E(s-t) C E(s-t)^T
double gaussian_datum(const CoefficientModel& model, const Mat& P, const Vec& x, double t) {
  KernelWorkspace ws(model, t, 0.0);
  Vec m = ws.E_st() * x;
  Mat S = 2.0 * ws.E_st() * ws.C() * ws.E_st().transpose();
  Mat K = P.inverse() + S;
  return std::exp(-0.5 * m.dot(K.ldlt().solve(m))) / std::sqrt((Mat::Identity(2, 2) + S * P).determinant());
}

Outcome c6_cauchy() {
  Scenario sc = load_scenario(kFlagship);
  Mat P(2, 2);
  P << 1.5, 0.4, 0.4, 0.8;
  auto f = [&](const Vec& y) { return std::exp(-0.5 * y.dot(P * y)); };
  double worst = 0.0;
  for (const auto& model : {unit_kolmogorov(), sc.coefficients.without_perturbation()})
    for (double t : linspace(0.1, 1.0, 4))
      for (double a : linspace(-1.0, 1.0, 5))
        for (double b : linspace(-1.0, 1.0, 5)) {
          Vec x = v2(a, b);
          worst = std::max(worst, std::abs(cauchy_solve(model, f, 0.0, x, t).value - gaussian_datum(model, P, x, t)));
        }
  bool monotone = true;
  double prev = INFINITY, last = 0.0;
  auto model = sc.coefficients.without_perturbation();
  for (int j = 1; j <= 6; ++j) {
    double dt = std::pow(4.0, -j), sup = 0.0;
    for (double a : linspace(-1.0, 1.0, 9))
      for (double b : linspace(-1.0, 1.0, 9)) {
        Vec x = v2(a, b);
        sup = std::max(sup, std::abs(cauchy_solve(model, f, 0.0, x, dt).value - f(x)));
      }
    if (!(sup < prev)) monotone = false;
    prev = last = sup;
  }
  return {worst <= 1e-8 && monotone,
          fmt("sup error %.2e", worst) + (monotone ? ", monotone" : ", NOT monotone") + fmt(" to %.2e at 4^-6", last)};
}

Outcome c7_hessian() {
  Scenario sc = load_scenario(kFlagship);
  const auto& s = sc.structure;
  std::vector<ManufacturedSolution> bank = sc.manufactured;
  bank.push_back(ManufacturedSolution::bump(s, 0.0));
  auto constant = unit_kolmogorov();
  double worst_const = 0.0, worst_frozen = 0.0;
  const std::vector<Vec> pts{v2(0.2, -0.1), v2(-0.3, 0.25), v2(0.0, 0.0)};
  for (const auto& u : bank) {
    auto src = u.source(constant, 1.0);
    for (const Vec& x : pts)
      for (double t : {0.6, 0.9}) {
        double want = u.d2u(x, t, 0, 0);
        worst_const = std::max(worst_const, rel(t_ij(constant, src, 0, 0, x, t).value, want));
      }
  }
  // frozen split: constant base plus the scenario's eps = 0.1 spatial perturbation
  if (!sc.coefficients.has_perturbation()) return {false, "flagship lacks a spatial perturbation"};
  auto perturbed = unit_kolmogorov().with_perturbation(
      [](const Vec& x, double) { return Mat::Constant(1, 1, 0.1 * std::sin(x(0)) * std::cos(x(1))); }, true,
      *sc.coefficients.perturbation_modulus());
  for (const auto& u : bank)
    for (const Vec& xbar : pts) {
      auto src = frozen_source(perturbed, u, xbar, 1.0);
      auto frozen = perturbed.frozen_at(xbar);
      double want = u.d2u(xbar, 0.8, 0, 0);
      worst_frozen = std::max(worst_frozen, rel(t_ij(frozen, src, 0, 0, xbar, 0.8).value, want));
    }
  bool ok = worst_const <= 1e-4 && worst_frozen <= 1e-3;
  return {ok, fmt("constant %.2e", worst_const) + fmt(", frozen split %.2e", worst_frozen)};
}

double gaussian_norm_moment_11(double mu, double alpha) {
  boost::math::quadrature::exp_sinh<double> es;
  auto outer = [&](double b) {
    auto inner = [&](double a) { return std::exp(-mu * a * a) * std::pow(a + std::cbrt(b), alpha); };
    return std::exp(-mu * b * b) * es.integrate(inner, 1e-13);
  };
  return 4.0 * es.integrate(outer, 1e-12);
}

Outcome c8_moduli() {
  const double mu = 0.25;
  auto heat = ModelStructure::build({1});
  auto kol = ModelStructure::build({1, 1});
  double worst = 0.0;
  for (double a : {0.25, 0.5, 0.75}) {
    Modulus w = Modulus::power(a);
    double k = 1.0 + 1.0 / a + 1.0 / (1.0 - a);
    double I1 = std::tgamma((a + 1) / 2) * std::pow(mu, -(a + 1) / 2);
    double I2 = gaussian_norm_moment_11(mu, a);
    for (double r : {1e-4, 0.01, 0.5, 1.0, 4.0}) {
      double p = std::pow(r, a);
      worst = std::max(worst, rel(m_transform(w, r), k * p));
      worst = std::max(worst, rel(n_transform(w, r), k * k * p));
      worst = std::max(worst, rel(u_mu_transform(w, mu, r, heat), p / a * I1));
      worst = std::max(worst, rel(u_mu_transform(w, mu, r, kol), p / a * I2));
    }
  }
  Modulus lw = Modulus::analytic_log("log_1.5", [](double u) { return std::pow(1.0 + std::abs(u), -1.5); }, 0.5, 1.0);
  bool classified = lw.dini().finite() && lw.log_dini().status == Convergence::infinite;
  return {worst <= 1e-6 && classified,
          fmt("max relative error %.2e", worst) + (classified ? ", log^-1.5 Dini but not log-Dini" : ", classifier wrong")};
}

Outcome c9_singular() {
  auto bundle = run_scenario(kRough);
  int total = 0, passed = 0;
  double worst = 0.0;
  bool rough_seen = false;
  for (const auto& r : bundle.reports) {
    if (r.inequality_id.rfind("source_modulus", 0) == 0) continue;
    ++total;
    if (r.pass && std::isfinite(r.c_star) && r.stability <= 0.1) ++passed;
    worst = std::max(worst, r.stability);
    if (r.inequality_id.find("rough") != std::string::npos) rough_seen = true;
  }
  bool ok = total > 0 && passed == total && rough_seen;
  return {ok, std::to_string(passed) + "/" + std::to_string(total) + " operator bounds stable" +
                  fmt(", worst refinement change %.3f", worst) + (rough_seen ? "" : ", rough source missing")};
}

Outcome c10_schauder() {
  const auto& runs = flagship_runs();
  double c_space = NAN, c_time = NAN, s_space = NAN, s_time = NAN;
  bool ok = true;
  for (const auto& r : runs.one.reports) {
    if (r.inequality_id == "schauder_space") {
      c_space = r.c_star;
      s_space = r.stability;
      ok = ok && r.pass;
    }
    if (r.inequality_id == "schauder_time") {
      c_time = r.c_star;
      s_time = r.stability;
      ok = ok && r.pass;
    }
  }
  ok = ok && std::isfinite(c_space) && std::isfinite(c_time) && s_space <= 0.1 && s_time <= 0.1;
  // log-Dini data: the flagship perturbation modulus must be log-Dini
  Scenario sc = load_scenario(kFlagship);
  ok = ok && sc.coefficients.perturbation_modulus() && sc.coefficients.perturbation_modulus()->log_dini().finite();
  // u = 0
  Json j = read_json_file(kFlagship);
  for (auto& m : j["manufactured"]) m["amplitude"] = 0.0;
  Scenario zero = scenario_from_json(j, kRoot);
  double z1 = schauder_space_check(zero).c_star, z2 = schauder_time_check(zero).c_star;
  ok = ok && z1 == 0.0 && z2 == 0.0;
  return {ok, fmt("space c=%.4g", c_space) + fmt(" (change %.4f)", s_space) + fmt(", time c=%.4g", c_time) +
                  fmt(" (change %.4f)", s_time) + fmt(", u=0 gives %g", z1) + fmt("/%g", z2)};
}

Outcome c11_sde() {
  Scenario sc = load_scenario(kFlagship);
  SdeOptions opt;
  opt.n_paths = 100000;
  opt.seed = sc.seed;
  Vec y = v2(1.0, 0.0);
  auto r = sde_density_oracle(sc.coefficients.without_perturbation(), y, 0.0, 1.0, opt);
  double z = r.details.at("mean_z_max"), c = r.details.at("cov_rel_frobenius");
  return {z <= 4.0 && c <= 0.05, fmt("mean %.2f SE", z) + fmt(", covariance %.4f relative Frobenius", c)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome c12_determinism() {
  const auto& runs = flagship_runs();
  int files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs.dir_one)) {
    if (!e.is_regular_file() || e.path().filename() == "build_info.json") continue;
    fs::path other = runs.dir_two / fs::relative(e.path(), runs.dir_one);
    ++files;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }
  int files_two = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs.dir_two))
    if (e.is_regular_file() && e.path().filename() != "build_info.json") ++files_two;
  bool ok = files > 0 && differing == 0 && files == files_two;
  return {ok, std::to_string(files) + " files compared (threads 1 vs 2), " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"C1 normalization", c1_normalization},       {"C2 covariance closed form", c2_covariance},
      {"C3 heat kernel", c3_heat},                  {"C4 L Gamma residual order", c4_residual},
      {"C5 Chapman-Kolmogorov", c5_chapman},        {"C6 Cauchy closed form", c6_cauchy},
      {"C7 Hessian round trip", c7_hessian},        {"C8 moduli calculus", c8_moduli},
      {"C9 singular operator bounds", c9_singular}, {"C10 Schauder harness", c10_schauder},
      {"C11 SDE oracle", c11_sde},                  {"C12 determinism", c12_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
