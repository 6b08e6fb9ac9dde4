#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kfplab/group.hpp"
#include "kfplab/moduli.hpp"
#include "kfplab/report.hpp"

namespace kfp {

class CoefficientModel {
 public:
  enum class Kind { constant, piecewise, callable };

  static CoefficientModel constant(const ModelStructure& s, const Mat& a0, double nu = 0.0);
  // a0 = mats[k] on [switch_times[k-1], switch_times[k]); mats.size() == switch_times.size() + 1.
  static CoefficientModel piecewise(const ModelStructure& s, std::vector<double> switch_times, std::vector<Mat> mats,
                                    double nu = 0.0);
  // Measurable-only contract; `breakpoints` are times where a0 may jump.
  static CoefficientModel callable(const ModelStructure& s, std::function<Mat(double)> a0, double nu,
                                   std::vector<double> breakpoints = {});

  // a(x,t) = a0(t) + p(x,t). `time_independent` lets frozen models stay in closed form.
  CoefficientModel with_perturbation(std::function<Mat(const Vec&, double)> p, bool time_independent,
                                     Modulus modulus) const;

  const ModelStructure& structure() const { return s_; }
  Kind kind() const { return kind_; }
  double nu() const { return nu_; }
  Mat a0(double t) const;
  Mat a(const Vec& x, double t) const;
  bool has_perturbation() const { return static_cast<bool>(perturbation_); }
  const std::optional<Modulus>& perturbation_modulus() const { return perturbation_modulus_; }
  // Times where a0 may jump (switch times or declared breakpoints).
  const std::vector<double>& breakpoints() const { return breaks_; }
  const std::vector<Mat>& pieces() const { return mats_; }

  // Coefficients frozen at x = xbar; no spatial perturbation left.
  CoefficientModel frozen_at(const Vec& xbar) const;
  CoefficientModel without_perturbation() const;

 private:
  ModelStructure s_;
  Kind kind_ = Kind::constant;
  double nu_ = 1.0;
  std::vector<double> breaks_;
  std::vector<Mat> mats_;
  std::function<Mat(double)> fn_;
  std::function<Mat(const Vec&, double)> perturbation_;
  bool perturbation_time_independent_ = false;
  std::optional<Modulus> perturbation_modulus_;

  void validate();
};

// C(t,s) = int_s^t E(t-sigma) diag(a0(sigma), 0) E(t-sigma)^T dsigma
Mat covariance_matrix(const CoefficientModel& model, double t, double s, double rel_tol = 1e-12);

class KernelWorkspace {
 public:
  KernelWorkspace(const CoefficientModel& model, double t, double s);

  double t() const { return t_; }
  double s() const { return s_; }
  const Mat& C() const { return C_; }
  const Mat& C_inv() const { return C_inv_; }
  double det_C() const { return det_; }
  const Mat& E_ts() const { return E_ts_; }  // E(t-s)
  const Mat& E_st() const { return E_st_; }  // E(s-t)
  const Mat& L() const { return L_; }        // C = L L^T
  const Mat& M() const { return M_; }        // L^{-T}

  Vec shift(const Vec& x, const Vec& y) const { return x - E_ts_ * y; }
  double gamma(const Vec& x, const Vec& y) const;
  // Derivative of Gamma along the listed directions (each a vector in x-space;
  // y-derivatives use -E(t-s) e_k).
  double derivative(const Vec& x, const Vec& y, const std::vector<Vec>& dirs) const;

 private:
  double t_, s_;
  Mat C_, C_inv_, E_ts_, E_st_, L_, M_;
  double det_ = 0.0;
  double log_prefactor_ = 0.0;
};

// Convenience wrapper matching the CLI/tests form.
KernelWorkspace covariance(const CoefficientModel& model, double t, double s);

double gamma(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s);

using MultiIndex = std::vector<int>;
int weighted_order(const ModelStructure& s, const MultiIndex& a1, const MultiIndex& a2);
double gamma_derivatives(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s,
                         const MultiIndex& alpha1, const MultiIndex& alpha2);
std::vector<Vec> derivative_directions(const KernelWorkspace& ws, const MultiIndex& alpha1, const MultiIndex& alpha2);

constexpr int kMaxDerivativeOrder = 4;

// ----------------------------------------------------------- whitening

struct QuadratureSpec {
  int order = 20;
  int max_order = 320;
  double tol = 1e-10;  // change between successive orders
};

struct WhitenedResult {
  double value = 0.0;
  double error = 0.0;
  int order = 0;
};

// int Gamma(x,t;y,s) f(y) dy with y = E(s-t)(x - 2 L w).
WhitenedResult integrate_against_gamma(const KernelWorkspace& ws, const Vec& x,
                                       const std::function<double(const Vec&)>& f, const QuadratureSpec& spec);
// int Gamma(z,t;y,s) f(z) dz over the first argument, z = E(t-s) y + 2 L w.
WhitenedResult integrate_against_gamma_forward(const KernelWorkspace& ws, const Vec& y,
                                               const std::function<double(const Vec&)>& f,
                                               const QuadratureSpec& spec);

// ----------------------------------------------------------- checks

struct SampleSpec {
  std::size_t count = 4000;
  std::uint64_t seed = 1;
  std::vector<std::pair<double, double>> x_box;  // defaults to [-1,1]^N
  std::pair<double, double> t_range{0.0, 1.0};
  int threads = 0;
};

EstimateReport gamma_normalization_check(const CoefficientModel& model, const Vec& x, double t, double s,
                                         const QuadratureSpec& spec = {});

EstimateReport gaussian_bound_check(const CoefficientModel& model, const MultiIndex& alpha1,
                                    const MultiIndex& alpha2, const SampleSpec& spec);

bool separation_ok(const ModelStructure& s, const GroupPoint& xi1, const GroupPoint& xi2, const GroupPoint& eta,
                   double kappa);
EstimateReport mean_value_check(const CoefficientModel& model, const MultiIndex& alpha, const SampleSpec& spec);

EstimateReport chapman_kolmogorov_check(const CoefficientModel& model, const Vec& x, double t, double r,
                                        const Vec& y, double s, const QuadratureSpec& spec = {});

struct ResidualGridSpec {
  std::vector<std::pair<double, double>> x_box;  // defaults to [-1,1]^N
  std::pair<double, double> t_range{0.3, 1.0};
  int x_points = 9;
  int t_points = 8;
  std::vector<double> steps{0.02, 0.01, 0.005, 0.0025};
  double exclusion_cells = 5.0;
};

// <Bx, grad_x Gamma>
double drift_term(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s);
EstimateReport lgamma_residual_check(const CoefficientModel& model, const Vec& y, double s,
                                     const ResidualGridSpec& grid = {});

}  // namespace kfp
