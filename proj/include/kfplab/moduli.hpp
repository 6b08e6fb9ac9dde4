#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kfplab/group.hpp"
#include "kfplab/report.hpp"

namespace kfp {

enum class Convergence { finite, infinite, undetermined };

struct IntegralEstimate {
  double value = 0.0;  // +inf when divergent
  double error = 0.0;
  Convergence status = Convergence::finite;
  bool finite() const { return status == Convergence::finite; }
};

const char* to_string(Convergence c);

class Modulus {
 public:
  enum class Kind { analytic, tabulated };

  // f(r) for r > 0.
  static Modulus analytic(std::string name, std::function<double(double)> f, double alpha, double omega0);
  // f evaluated through u = -log r; use when omega matters at radii below the
  // double range (logarithmic moduli).
  static Modulus analytic_log(std::string name, std::function<double(double)> f_of_u, double alpha, double omega0);
  // scale * r^alpha for all r > 0.
  static Modulus power(double alpha, double scale = 1.0);
  static Modulus zero(double alpha = 0.5);
  // Piecewise linear in log r, clamped non-decreasing; linear to 0 below the
  // first radius, constant beyond the last.
  static Modulus tabulated(std::string name, std::vector<std::pair<double, double>> grid, double alpha,
                           double omega0);

  double operator()(double r) const;
  // omega(exp(-u))
  double at_log(double u) const;

  Kind kind() const;
  const std::string& name() const;
  double alpha() const;
  double omega0() const;
  const std::vector<std::pair<double, double>>& grid() const;

  // Cached [omega] and the log-weighted variant.
  const IntegralEstimate& dini() const;
  const IntegralEstimate& log_dini() const;

  Modulus tabulate(const std::vector<double>& radii) const;
  // M(omega) as a modulus, built once per instance and shared by copies.
  Modulus m_cached() const;
  // true for moduli evaluated through an inner quadrature (M(omega))
  bool derived() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

struct LogQuadOptions {
  double rel_tol = 1e-9;
  double ceiling = 1e12;
  int max_doublings = 40;
};

// integral over [a, inf) of a non-negative, eventually non-increasing g.
IntegralEstimate integrate_decaying(const std::function<double(double)>& g, double a,
                                    const LogQuadOptions& opt = {});

IntegralEstimate dini_integral(const Modulus& w);
IntegralEstimate log_dini_integral(const Modulus& w);
// int_0^rho omega(s)/s ds
IntegralEstimate partial_dini(const Modulus& w, double rho);
// r * int_r^inf omega(s)/s^2 ds
IntegralEstimate scaled_tail(const Modulus& w, double r);

// M(omega)(r); throws std::domain_error when [omega] diverges.
double m_transform(const Modulus& w, double r);
// M(omega) as a modulus with the same alpha and cap [omega] + omega0 (1 + 1/alpha + 1/(1-alpha)).
Modulus m_modulus(const Modulus& w);
// M(M(omega))(r); +inf when M(omega) is not Dini.
double n_transform(const Modulus& w, double r);

// Gaussian mass of {z : ||z|| > lambda} for weight exp(-mu |z|^2), tabulated
// once per (exponents, mu).
class GaussianNormTail {
 public:
  GaussianNormTail(const ModelStructure& s, double mu);
  double operator()(double lambda) const;
  // Radial density: G(lambda) = int_lambda^inf density(rho) d rho.
  double density(double rho) const;
  double total() const { return total_; }
  double table_total() const { return table_total_; }
  double lambda_max() const { return lambda_max_; }

  static std::shared_ptr<const GaussianNormTail> get(const ModelStructure& s, double mu);

 private:
  std::vector<int> q_;
  double mu_;
  double total_ = 0.0;
  double table_total_ = 0.0;
  double lambda_min_ = 1e-3, lambda_max_ = 0.0;
  std::vector<double> log_lambda_, g_, k_;
};

// U^mu(omega)(r); +inf when omega is not Dini.
double u_mu_transform(const Modulus& w, double mu, double r, const ModelStructure& s);
// U^mu(M(omega))(r)
double v_mu_transform(const Modulus& w, double mu, double r, const ModelStructure& s);

EstimateReport u_mu_bounds_check(const Modulus& w, double mu, const ModelStructure& s);

struct SampledField {
  ModelStructure structure;
  std::vector<std::vector<double>> x_axes;
  std::vector<double> t_axis;
  std::vector<double> values;  // t-major, then x multi-index with the last axis fastest

  std::size_t x_count() const;
  double at(std::size_t ti, std::size_t xi) const { return values[ti * x_count() + xi]; }
  Vec point(std::size_t xi) const;
  double sup_abs() const;
  // Smallest same-t spacing measured in ||.||.
  double resolution() const;

  static SampledField sample(const ModelStructure& s, std::vector<std::vector<double>> x_axes,
                             std::vector<double> t_axis, const std::function<double(const Vec&, double)>& f,
                             int threads = 0);
};

std::vector<double> linspace(double a, double b, int n);
std::vector<double> logspace(double a, double b, int n);

// Grid maxima of |f(x,t) - f(y,t)| over pairs with ||x - y|| <= r.
std::vector<double> empirical_modulus_values(const SampledField& f, const std::vector<double>& radii,
                                             const std::vector<char>* mask = nullptr);
Modulus empirical_modulus(const SampledField& f, const std::vector<double>& radii, double alpha = 0.5);

struct LocalityReport {
  bool pass = false;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::vector<double> omega_full, omega_ball;
};

LocalityReport support_locality_check(const SampledField& f, const GroupPoint& center, double radius,
                                      const std::vector<double>& radii);

struct DyadicOptions {
  std::size_t samples_per_shell = 20000;
  int shells = 12;
  double max_rel_se = 0.05;
  std::uint64_t seed = 7;
};

EstimateReport dyadic_bounds_check(const Modulus& w, const ModelStructure& s, const GroupPoint& xi, double r,
                                   double gamma, const DyadicOptions& opt = {});

}  // namespace kfp
