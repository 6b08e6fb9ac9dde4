#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kfplab/kernel.hpp"
#include "kfplab/moduli.hpp"

namespace kfp {

// Declared modulus min(cap, sum of terms); each term is
//   scale * (1 + |log min(r,1)|)^{-p}   (logarithmic) or   scale * r^beta   (power).
struct ModulusTerm {
  enum class Kind { logarithmic, power } kind = Kind::power;
  double scale = 1.0;
  double exponent = 1.0;
};
Modulus composite_modulus(std::string name, std::vector<ModulusTerm> terms, double cap);

struct SourceSpec {
  std::string name;
  std::function<double(const Vec&, double)> g;
  Modulus modulus = Modulus::zero();  // declared partial modulus in x
  double tau = 0.0;                   // g(., t) = 0 for t <= tau
  double T = 1.0;
  std::vector<double> breakpoints;    // times where g may jump
  bool constant_in_x = false;
};

// Largest |g(x,t) - g(y,t)| / modulus(||x - y||) over random same-t pairs in the box.
// Throws ContractViolation when the declared modulus is exceeded.
double source_modulus_check(const SourceSpec& src, const ModelStructure& s, const Box& box, std::size_t samples,
                            std::uint64_t seed);

// u = amplitude * phi(t) * exp(-1/2 (x-c)^T W (x-c)),  phi(t) = exp(-lambda/(t - tau)) for t > tau.
struct ManufacturedSolution {
  Vec center;
  Mat W;
  double tau = 0.0;
  double lambda = 0.25;
  double amplitude = 1.0;

  static ManufacturedSolution bump(const ModelStructure& s, double tau = 0.0);

  double u(const Vec& x, double t) const;
  double du(const Vec& x, double t, int k) const;
  double d2u(const Vec& x, double t, int i, int j) const;
  double dt(const Vec& x, double t) const;
  // <Bx, grad u> - u_t
  double Yu(const ModelStructure& s, const Vec& x, double t) const;
  // sum a_ij(x,t) u_ij + Yu, with the full (possibly perturbed) coefficients
  double Lu(const CoefficientModel& model, const Vec& x, double t) const;
  // Lu as a source; modulus is a Lipschitz bound measured on a grid around the bump.
  SourceSpec source(const CoefficientModel& model, double T) const;
  ManufacturedSolution scaled(double factor) const;
};

// Source g = L_xbar u for the coefficients frozen at xbar (see frozen_residual).
SourceSpec frozen_source(const CoefficientModel& model, const ManufacturedSolution& u, const Vec& xbar, double T);

struct TijOptions {
  int inner_order = 16;       // Gauss-Hermite nodes per axis
  int slice_order = 8;        // Gauss-Legendre nodes per time slice
  int max_slices = 60;
  double budget = 1e-6;       // half for time slicing, half for the inner rule
  double cut = 0.0;           // integrate over (tau, t - cut)
  bool allow_overrun = false; // return the partial result instead of throwing
  bool check_contract = true;
  bool adaptive = true;       // raise the Hermite order and bisect slices until they settle
};

struct TijResult {
  double value = 0.0;
  double error = 0.0;       // time tail + inner estimate
  double inner_error = 0.0;
  int slices = 0;
  bool converged = true;
};

// u(x,t) = int Gamma(x,t;y,s) f(y) dy
WhitenedResult cauchy_solve(const CoefficientModel& model, const std::function<double(const Vec&)>& f, double s,
                            const Vec& x, double t, const QuadratureSpec& spec = {});

TijResult repr_u(const CoefficientModel& model, const SourceSpec& src, const Vec& x, double t,
                 const TijOptions& opt = {});
TijResult repr_grad(const CoefficientModel& model, const SourceSpec& src, int k, const Vec& x, double t,
                    const TijOptions& opt = {});
// Singular integral with the cancellation bracket; i, j < q.
TijResult t_ij(const CoefficientModel& model, const SourceSpec& src, int i, int j, const Vec& x, double t,
               const TijOptions& opt = {});

// Yu = g - sum a_ij d_ij u
double y_from_identity(const CoefficientModel& model, const SourceSpec& src, const Mat& second_derivatives,
                       const Vec& x, double t);

// L_xbar u = L u + sum (a(xbar,t) - a(x,t)) d_hk u
double frozen_residual(const CoefficientModel& model, const ManufacturedSolution& u, const Vec& xbar, const Vec& x,
                       double t);

}  // namespace kfp
