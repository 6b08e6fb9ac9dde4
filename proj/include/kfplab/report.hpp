#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace kfp {

struct EstimateReport {
  std::string inequality_id;
  std::string rhs_form;
  double lhs_max = 0.0;
  double c_star = 0.0;
  double stability = 0.0;
  double tolerance = 0.1;  // allowed stability band
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  bool pass = false;
  bool degenerate = false;
  std::vector<double> lhs_samples;
  std::vector<double> rhs_samples;
  std::map<std::string, double> details;
  std::map<std::string, std::string> provenance;

  // pass <=> c_star finite and stability within tolerance.
  void finalize();
};

constexpr double kRhsFloor = 1e-14;

// max lhs/rhs over entries with rhs > floor; 0 when nothing survives.
double ratio_max(const std::vector<double>& lhs, const std::vector<double>& rhs, double floor = kRhsFloor);

struct TwoLevelFit {
  double c_star = 0.0;
  double inner = 0.0;  // chosen inner scale 2^j
  double outer = 0.0;  // max ratio at that scale
  bool degenerate = false;
};

// Inner constant c over {2^j : j in [jmin, jmax]}; rhs(c) returns the right-hand
// sides for that inner constant; c_star = min_j max(2^j, max ratio).
TwoLevelFit fit_two_level(const std::vector<double>& lhs,
                          const std::function<std::vector<double>(double)>& rhs, int jmin = -4, int jmax = 6);

double relative_change(double fine, double coarse);

// Keeps at most `keep` entries, choosing the largest lhs/rhs ratios, in index order.
void trim_samples(std::vector<double>& lhs, std::vector<double>& rhs, std::size_t keep = 64);

// Deterministic compass search for a local maximum of f over the box [lo, hi],
// started at z. Step starts at `step` times the box width and halves on failure.
struct PolishResult {
  Eigen::VectorXd z;
  double value = 0.0;
  int evaluations = 0;
};
PolishResult compass_maximize(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd z,
                              const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double step = 0.05,
                              double min_step = 1e-5, int max_evaluations = 600);

std::string grid_hash(const std::string& description);

}  // namespace kfp
