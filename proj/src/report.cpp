#include "kfplab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "kfplab/parallel.hpp"

namespace kfp {

void EstimateReport::finalize() {
  pass = std::isfinite(c_star) && c_star >= 0.0 && std::isfinite(stability) && stability <= tolerance;
}

double ratio_max(const std::vector<double>& lhs, const std::vector<double>& rhs, double floor) {
  double c = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i)
    if (rhs[i] > floor) c = std::max(c, lhs[i] / rhs[i]);
  return c;
}

TwoLevelFit fit_two_level(const std::vector<double>& lhs, const std::function<std::vector<double>(double)>& rhs,
                          int jmin, int jmax) {
  TwoLevelFit fit;
  bool all_zero = std::all_of(lhs.begin(), lhs.end(), [](double v) { return v == 0.0; });
  if (all_zero) {
    fit.degenerate = true;
    return fit;
  }
  fit.c_star = std::numeric_limits<double>::infinity();
  for (int j = jmin; j <= jmax; ++j) {
    double c = std::ldexp(1.0, j);
    double outer = ratio_max(lhs, rhs(c));
    double cand = std::max(c, outer);
    if (cand < fit.c_star) {
      fit.c_star = cand;
      fit.inner = c;
      fit.outer = outer;
    }
  }
  return fit;
}

double relative_change(double fine, double coarse) {
  if (fine == coarse) return 0.0;
  double scale = std::max(std::abs(fine), std::abs(coarse));
  if (!std::isfinite(scale)) return std::numeric_limits<double>::infinity();
  return std::abs(fine - coarse) / scale;
}

void trim_samples(std::vector<double>& lhs, std::vector<double>& rhs, std::size_t keep) {
  if (lhs.size() <= keep) return;
  std::vector<std::size_t> idx(lhs.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto ratio = [&](std::size_t i) { return rhs[i] > kRhsFloor ? lhs[i] / rhs[i] : 0.0; };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ratio(a) > ratio(b); });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<double> l, r;
  for (auto i : idx) {
    l.push_back(lhs[i]);
    r.push_back(rhs[i]);
  }
  lhs.swap(l);
  rhs.swap(r);
}

std::string grid_hash(const std::string& description) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_label(description)));
  return buf;
}

PolishResult compass_maximize(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd z,
                              const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double step, double min_step,
                              int max_evaluations) {
  PolishResult r;
  z = z.cwiseMax(lo).cwiseMin(hi);
  r.value = f(z);
  r.evaluations = 1;
  const Eigen::VectorXd width = hi - lo;
  double h = step;
  while (h >= min_step && r.evaluations < max_evaluations) {
    bool moved = false;
    for (Eigen::Index d = 0; d < z.size() && r.evaluations < max_evaluations; ++d) {
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd c = z;
        c(d) = std::clamp(c(d) + sign * h * width(d), lo(d), hi(d));
        if (c(d) == z(d)) continue;
        double v = f(c);
        ++r.evaluations;
        if (v > r.value) {
          r.value = v;
          z = c;
          moved = true;
          break;
        }
      }
    }
    if (!moved) h *= 0.5;
  }
  r.z = z;
  return r;
}

}  // namespace kfp
