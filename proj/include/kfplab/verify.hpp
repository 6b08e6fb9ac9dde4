#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kfplab/io.hpp"
#include "kfplab/kernel.hpp"
#include "kfplab/moduli.hpp"
#include "kfplab/representation.hpp"

namespace kfp {

// Coarse and fine levels; the fine grid must contain the coarse one
// (x: fine = 2 coarse - 1 points per axis, t: fine = 2 coarse interior times).
struct GridLevels {
  int x_coarse = 9, x_fine = 17;
  int t_coarse = 8, t_fine = 16;
  // grids for the singular-integral sweeps, which cost far more per point
  int tij_x_coarse = 7, tij_x_fine = 13;
  int tij_t_coarse = 2, tij_t_fine = 4;
  int radii = 10;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  ModelStructure structure;
  CoefficientModel coefficients;
  std::vector<SourceSpec> sources;
  std::vector<ManufacturedSolution> manufactured;
  Box domain;  // K x [tau, T]
  GridLevels grid;
  double mu = 0.25;
  double alpha = 0.5;
  double tolerance = 0.1;
  std::size_t samples = 4000;
  int threads = 0;
  TijOptions tij;
  std::vector<double> epsilons{0.5, 0.25, 0.1};
  std::vector<std::string> checks;
  Json check_options = Json::object();
};

// Monotone function of r > 0 tabulated on a log grid; log-log interpolation,
// power-law extension below the first node, constant beyond the last.
class Curve {
 public:
  Curve() = default;
  Curve(const std::function<double(double)>& f, double r_min, double r_max, int points);
  double operator()(double r) const;
  bool finite() const { return finite_; }

 private:
  std::vector<double> lr_, v_;
  bool finite_ = true;
};

EstimateReport schauder_space_check(const Scenario& sc);
EstimateReport schauder_time_check(const Scenario& sc);
// Time-only coefficients; per source: sup and modulus bounds for d2u = T_ij g and
// for Yu, plus the space-time bound for d2u.
std::vector<EstimateReport> model_operator_checks(const Scenario& sc);
EstimateReport interpolation_check(const Scenario& sc, const std::vector<double>& epsilons);

struct SdeOptions {
  std::size_t n_paths = 100000;
  int n_steps = 64;
  std::uint64_t seed = 11;
  int threads = 0;
  double bias_tolerance = 0.02;  // step-halving change, relative to the covariance scale
};
EstimateReport sde_density_oracle(const CoefficientModel& model, const Vec& y, double s, double t,
                                  const SdeOptions& opt = {});

// ------------------------------------------------------------- scenarios

Scenario scenario_from_json(const Json& j, const std::string& base_dir);
Scenario load_scenario(const std::string& path);

struct CurveTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ReportBundle {
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<EstimateReport> reports;
  std::map<std::string, CurveTable> curves;  // plot data, one CSV each
  bool all_pass() const;
};

ReportBundle run_scenario(const Scenario& sc);
ReportBundle run_scenario(const std::string& config_path);
// One JSON per report, summary.csv, curve CSVs and build_info.json.
void report_write(const ReportBundle& bundle, const std::string& out_dir);

std::vector<std::string> known_checks();

}  // namespace kfp
