#include "kfplab/kernel.hpp"
#include "kfplab/parallel.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <numbers>

#include "kfplab/quadrature.hpp"

namespace kfp {

// ------------------------------------------------------- coefficient model

namespace {

void ellipticity(const Mat& a, int q, double& lo, double& hi, const char* what) {
  if (a.rows() != q || a.cols() != q)
    throw ConfigError("coefficients", std::string(what) + ": expected a " + std::to_string(q) + "x" +
                                          std::to_string(q) + " matrix");
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ConfigError("coefficients", std::string(what) + ": matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  lo = std::min(lo, es.eigenvalues().minCoeff());
  hi = std::max(hi, es.eigenvalues().maxCoeff());
}

}  // namespace

void CoefficientModel::validate() {
  const int q = s_.diffusion_rank();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  if (kind_ == Kind::callable) {
    std::vector<double> ts;
    for (int i = 0; i <= 32; ++i) ts.push_back(-2.0 + 0.125 * i);
    for (double b : breaks_) {
      ts.push_back(b);
      ts.push_back(b - 1e-9);
    }
    for (double t : ts) ellipticity(fn_(t), q, lo, hi, "a0(t)");
  } else {
    for (const auto& m : mats_) ellipticity(m, q, lo, hi, "a0");
  }
  double measured = std::min(lo, 1.0 / hi);
  if (!(measured > 0.0)) throw ConfigError("coefficients", "a0 is not positive definite");
  if (nu_ <= 0.0) {
    nu_ = std::min(1.0, measured);
  } else if (nu_ > measured * (1.0 + 1e-12) || nu_ > 1.0) {
    throw ConfigError("nu", "declared ellipticity constant is not satisfied by a0");
  }
  if (!std::is_sorted(breaks_.begin(), breaks_.end()))
    throw ConfigError("switch_times", "switch times must be increasing");
}

CoefficientModel CoefficientModel::constant(const ModelStructure& s, const Mat& a0, double nu) {
  CoefficientModel m;
  m.s_ = s;
  m.kind_ = Kind::constant;
  m.mats_ = {a0};
  m.nu_ = nu;
  m.validate();
  return m;
}

CoefficientModel CoefficientModel::piecewise(const ModelStructure& s, std::vector<double> switch_times,
                                             std::vector<Mat> mats, double nu) {
  if (mats.size() != switch_times.size() + 1)
    throw ConfigError("matrices", "piecewise model needs one more matrix than switch times");
  CoefficientModel m;
  m.s_ = s;
  m.kind_ = mats.size() == 1 ? Kind::constant : Kind::piecewise;
  m.breaks_ = std::move(switch_times);
  m.mats_ = std::move(mats);
  m.nu_ = nu;
  m.validate();
  return m;
}

CoefficientModel CoefficientModel::callable(const ModelStructure& s, std::function<Mat(double)> a0, double nu,
                                            std::vector<double> breakpoints) {
  CoefficientModel m;
  m.s_ = s;
  m.kind_ = Kind::callable;
  m.fn_ = std::move(a0);
  m.breaks_ = std::move(breakpoints);
  std::sort(m.breaks_.begin(), m.breaks_.end());
  m.nu_ = nu;
  m.validate();
  return m;
}

CoefficientModel CoefficientModel::with_perturbation(std::function<Mat(const Vec&, double)> p,
                                                     bool time_independent, Modulus modulus) const {
  CoefficientModel m = *this;
  m.perturbation_ = std::move(p);
  m.perturbation_time_independent_ = time_independent;
  m.perturbation_modulus_ = std::move(modulus);
  return m;
}

Mat CoefficientModel::a0(double t) const {
  if (kind_ == Kind::callable) return fn_(t);
  std::size_t k = static_cast<std::size_t>(std::upper_bound(breaks_.begin(), breaks_.end(), t) - breaks_.begin());
  return mats_[k];
}

Mat CoefficientModel::a(const Vec& x, double t) const {
  Mat m = a0(t);
  if (perturbation_) m += perturbation_(x, t);
  return m;
}

CoefficientModel CoefficientModel::without_perturbation() const {
  CoefficientModel m = *this;
  m.perturbation_ = nullptr;
  m.perturbation_modulus_.reset();
  return m;
}

CoefficientModel CoefficientModel::frozen_at(const Vec& xbar) const {
  if (!perturbation_) return *this;
  if (perturbation_time_independent_ && kind_ != Kind::callable) {
    Mat shift = perturbation_(xbar, 0.0);
    std::vector<Mat> mats = mats_;
    for (auto& m : mats) m += shift;
    return piecewise(s_, breaks_, std::move(mats));
  }
  CoefficientModel base = without_perturbation();
  auto p = perturbation_;
  return callable(
      s_, [base, p, xbar](double t) { return Mat(base.a0(t) + p(xbar, t)); }, 0.0, breaks_);
}

// ------------------------------------------------------------- covariance

namespace {

// int_{u1}^{u2} E(u) Abar E(u)^T du, E(u) = sum_j (-u B)^j / j!
Mat piece_integral(const std::vector<Mat>& Bp, const Mat& Abar, double u1, double u2) {
  const int k = static_cast<int>(Bp.size()) - 1;
  const int n = static_cast<int>(Abar.rows());
  Mat C = Mat::Zero(n, n);
  double fj = 1.0;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) fj *= j;
    Mat left = Bp[j] * Abar;
    double fl = 1.0;
    for (int l = 0; l <= k; ++l) {
      if (l > 0) fl *= l;
      int p = j + l + 1;
      double w = (std::pow(u2, p) - std::pow(u1, p)) / p / (fj * fl);
      if ((j + l) % 2) w = -w;
      C += w * left * Bp[l].transpose();
    }
  }
  return C;
}

Mat embed(const Mat& a, int n) {
  Mat A = Mat::Zero(n, n);
  A.topLeftCorner(a.rows(), a.cols()) = a;
  return A;
}

}  // namespace

Mat covariance_matrix(const CoefficientModel& model, double t, double s, double rel_tol) {
  if (!(t > s)) throw std::invalid_argument("covariance: requires t > s");
  const ModelStructure& st = model.structure();
  const int n = st.dim();
  std::vector<Mat> Bp{Mat::Identity(n, n)};
  for (int j = 1; j <= st.depth(); ++j) Bp.push_back(Bp.back() * st.drift_matrix());
  std::vector<double> cuts{s};
  for (double b : model.breakpoints())
    if (b > s && b < t) cuts.push_back(b);
  cuts.push_back(t);
  Mat C = Mat::Zero(n, n);
  if (model.kind() != CoefficientModel::Kind::callable) {
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      double lo = cuts[i], hi = cuts[i + 1];
      Mat Abar = embed(model.a0(0.5 * (lo + hi)), n);
      C += piece_integral(Bp, Abar, t - hi, t - lo);
    }
  } else {
    const double tol = std::max(rel_tol, 1e-9);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      double lo = cuts[i], hi = cuts[i + 1];
      auto midpoint = [&](int panels) {
        Mat acc = Mat::Zero(n, n);
        double h = (hi - lo) / panels;
        for (int p = 0; p < panels; ++p) {
          double sigma = lo + (p + 0.5) * h;
          Mat E = exp_neg_tB(st, t - sigma);
          acc += E * embed(model.a0(sigma), n) * E.transpose();
        }
        return Mat(acc * h);
      };
      int panels = 32;
      Mat prev = midpoint(panels);
      for (;;) {
        panels *= 2;
        Mat cur = midpoint(panels);
        double change = (cur - prev).norm();
        prev = cur;
        if (change <= tol * cur.norm()) break;
        if (panels >= (1 << 18)) throw QuadratureError("covariance: midpoint rule did not converge");
      }
      C += prev;
    }
  }
  return 0.5 * (C + C.transpose());
}

KernelWorkspace::KernelWorkspace(const CoefficientModel& model, double t, double s) : t_(t), s_(s) {
  const ModelStructure& st = model.structure();
  const int n = st.dim();
  C_ = covariance_matrix(model, t, s);
  Eigen::LLT<Mat> llt(C_);
  if (llt.info() != Eigen::Success) throw std::domain_error("covariance: C(t,s) is not positive definite");
  L_ = llt.matrixL();
  for (int i = 0; i < n; ++i)
    if (!(L_(i, i) > 0.0)) throw std::domain_error("covariance: C(t,s) is not positive definite");
  M_ = L_.transpose().triangularView<Eigen::Upper>().solve(Mat::Identity(n, n));
  C_inv_ = M_ * M_.transpose();
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(L_(i, i));
  det_ = std::exp(logdet);
  log_prefactor_ = -0.5 * n * std::log(4.0 * std::numbers::pi) - 0.5 * logdet;
  E_ts_ = exp_neg_tB(st, t - s);
  E_st_ = exp_neg_tB(st, s - t);
}

double KernelWorkspace::gamma(const Vec& x, const Vec& y) const {
  Vec z = L_.triangularView<Eigen::Lower>().solve(shift(x, y));
  return std::exp(log_prefactor_ - 0.25 * z.squaredNorm());
}

namespace {

double pairing_sum(const std::vector<double>& lin, const Mat& quad, unsigned mask) {
  if (mask == 0) return 1.0;
  int first = std::countr_zero(mask);
  unsigned rest = mask & ~(1u << first);
  double acc = lin[first] * pairing_sum(lin, quad, rest);
  for (unsigned m = rest; m; m &= m - 1) {
    int j = std::countr_zero(m);
    acc += quad(first, j) * pairing_sum(lin, quad, rest & ~(1u << j));
  }
  return acc;
}

}  // namespace

double KernelWorkspace::derivative(const Vec& x, const Vec& y, const std::vector<Vec>& dirs) const {
  if (dirs.size() > static_cast<std::size_t>(kMaxDerivativeOrder))
    throw std::invalid_argument("gamma_derivatives: order above the supported ceiling");
  Vec v = shift(x, y);
  Vec g = -0.5 * (C_inv_ * v);
  const std::size_t k = dirs.size();
  std::vector<double> lin(k);
  Mat quad(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    lin[a] = g.dot(dirs[a]);
    for (std::size_t b = 0; b < k; ++b) quad(a, b) = -0.5 * dirs[a].dot(C_inv_ * dirs[b]);
  }
  return gamma(x, y) * pairing_sum(lin, quad, (1u << k) - 1);
}

KernelWorkspace covariance(const CoefficientModel& model, double t, double s) { return {model, t, s}; }

double gamma(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s) {
  if (!(t > s)) return 0.0;
  return KernelWorkspace(model, t, s).gamma(x, y);
}

int weighted_order(const ModelStructure& s, const MultiIndex& a1, const MultiIndex& a2) {
  int w = 0;
  for (std::size_t i = 0; i < a1.size(); ++i) w += s.exponents()[i] * a1[i];
  for (std::size_t i = 0; i < a2.size(); ++i) w += s.exponents()[i] * a2[i];
  return w;
}

std::vector<Vec> derivative_directions(const KernelWorkspace& ws, const MultiIndex& alpha1, const MultiIndex& alpha2) {
  const int n = static_cast<int>(ws.C().rows());
  if ((!alpha1.empty() && static_cast<int>(alpha1.size()) != n) ||
      (!alpha2.empty() && static_cast<int>(alpha2.size()) != n))
    throw std::invalid_argument("gamma_derivatives: multi-index length must equal N");
  std::vector<Vec> dirs;
  int order = 0;
  for (int i = 0; i < static_cast<int>(alpha1.size()); ++i) {
    if (alpha1[i] < 0) throw std::invalid_argument("gamma_derivatives: negative multi-index");
    order += alpha1[i];
    for (int r = 0; r < alpha1[i]; ++r) dirs.push_back(Vec::Unit(n, i));
  }
  for (int k = 0; k < static_cast<int>(alpha2.size()); ++k) {
    if (alpha2[k] < 0) throw std::invalid_argument("gamma_derivatives: negative multi-index");
    order += alpha2[k];
    for (int r = 0; r < alpha2[k]; ++r) dirs.push_back(-ws.E_ts().col(k));
  }
  if (order > kMaxDerivativeOrder) throw std::invalid_argument("gamma_derivatives: order above the supported ceiling");
  return dirs;
}

double gamma_derivatives(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s,
                         const MultiIndex& alpha1, const MultiIndex& alpha2) {
  if (!(t > s)) throw std::invalid_argument("gamma_derivatives: requires t > s");
  KernelWorkspace ws(model, t, s);
  return ws.derivative(x, y, derivative_directions(ws, alpha1, alpha2));
}

// -------------------------------------------------------------- whitening

namespace {

// Gauss-Hermite doubling for int f(z0 + G w) exp(-|w|^2) dw / pi^{n/2}.
WhitenedResult gauss_hermite_doubling(const Vec& z0, const Mat& G, const std::function<double(const Vec&)>& f,
                                      const QuadratureSpec& spec) {
  const int n = static_cast<int>(z0.size());
  const double norm = std::pow(std::numbers::pi, -0.5 * n);
  auto eval = [&](int order) {
    const TensorRule& rule = tensor_gauss_hermite(n, order);
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < rule.points.rows(); ++i) {
      Vec z = z0 + G * rule.points.row(i).transpose();
      acc.add(rule.weights[static_cast<std::size_t>(i)] * f(z));
    }
    return norm * acc.value();
  };
  int order = spec.order;
  double prev = eval(order);
  for (;;) {
    int next = order * 2;
    if (next > spec.max_order) throw QuadratureError("Gauss-Hermite order limit reached without convergence");
    double cur = eval(next);
    double change = std::abs(cur - prev);
    if (change <= spec.tol * std::max(std::abs(cur), 1e-300) || change == 0.0) return {cur, change, next};
    prev = cur;
    order = next;
  }
}

}  // namespace

WhitenedResult integrate_against_gamma(const KernelWorkspace& ws, const Vec& x,
                                       const std::function<double(const Vec&)>& f, const QuadratureSpec& spec) {
  return gauss_hermite_doubling(ws.E_st() * x, -2.0 * ws.E_st() * ws.L(), f, spec);
}

WhitenedResult integrate_against_gamma_forward(const KernelWorkspace& ws, const Vec& y,
                                               const std::function<double(const Vec&)>& f,
                                               const QuadratureSpec& spec) {
  return gauss_hermite_doubling(ws.E_ts() * y, 2.0 * ws.L(), f, spec);
}

}  // namespace kfp
