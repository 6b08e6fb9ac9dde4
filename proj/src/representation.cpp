#include "kfplab/representation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <functional>
#include <sstream>

#include "kfplab/parallel.hpp"
#include "kfplab/quadrature.hpp"

namespace kfp {

Modulus composite_modulus(std::string name, std::vector<ModulusTerm> terms, double cap) {
  if (terms.empty()) throw ConfigError("modulus.terms", "at least one term required");
  if (!(cap > 0.0)) throw ConfigError("modulus.cap", "cap must be positive");
  for (const auto& t : terms) {
    if (!(t.scale >= 0.0)) throw ConfigError("modulus.terms", "scale must be non-negative");
    if (!(t.exponent > 0.0)) throw ConfigError("modulus.terms", "exponent must be positive");
  }
  auto f = [terms, cap](double u) {
    double v = 0.0;
    for (const auto& t : terms) {
      if (t.kind == ModulusTerm::Kind::logarithmic)
        v += t.scale * std::pow(1.0 + std::max(u, 0.0), -t.exponent);
      else
        v += t.scale * std::exp(-t.exponent * u);
    }
    return std::min(cap, v);
  };
  return Modulus::analytic_log(std::move(name), f, 0.5, cap);
}

double source_modulus_check(const SourceSpec& src, const ModelStructure& s, const Box& box, std::size_t samples,
                            std::uint64_t seed) {
  const int n = s.dim();
  if (static_cast<int>(box.x.size()) != n) throw ConfigError("box", "box dimension does not match N");
  std::vector<double> ratio(samples, 0.0);
  parallel_for(samples, 0, [&](std::size_t k) {
    auto rng = stream_rng(seed, "source_modulus:" + src.name, k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec x(n), y(n);
    for (int i = 0; i < n; ++i) {
      double a = box.x[i].first, b = box.x[i].second;
      x(i) = a + (b - a) * u(rng);
      // half the pairs are close, so small radii get exercised
      double spread = (k % 2 == 0) ? (b - a) : (b - a) * std::pow(10.0, -4.0 * u(rng));
      y(i) = std::clamp(x(i) + spread * (2.0 * u(rng) - 1.0), a, b);
    }
    double t = box.t.first + (box.t.second - box.t.first) * u(rng);
    double r = anisotropic_norm(s, x - y);
    double w = src.modulus(r);
    double d = std::abs(src.g(x, t) - src.g(y, t));
    if (w > 0.0) ratio[k] = d / w;
    else if (d > 0.0) ratio[k] = std::numeric_limits<double>::infinity();
  });
  double worst = *std::max_element(ratio.begin(), ratio.end());
  if (worst > 1.0 + 1e-9) {
    std::ostringstream os;
    os << "source '" << src.name << "' exceeds its declared modulus (ratio " << worst << ")";
    throw ContractViolation(os.str());
  }
  return worst;
}

// ------------------------------------------------------- manufactured u

ManufacturedSolution ManufacturedSolution::bump(const ModelStructure& s, double tau) {
  ManufacturedSolution m;
  const int n = s.dim();
  m.center = Vec::Zero(n);
  for (int i = 0; i < n; ++i) m.center(i) = 0.1 * (i + 1);
  m.W = Mat::Identity(n, n) * 2.0;
  if (n > 1) m.W(0, 1) = m.W(1, 0) = 0.5;
  m.tau = tau;
  return m;
}

double ManufacturedSolution::u(const Vec& x, double t) const {
  if (t <= tau) return 0.0;
  Vec d = x - center;
  return amplitude * std::exp(-lambda / (t - tau) - 0.5 * d.dot(W * d));
}

double ManufacturedSolution::du(const Vec& x, double t, int k) const {
  return -u(x, t) * (W.row(k) * (x - center))(0);
}

double ManufacturedSolution::d2u(const Vec& x, double t, int i, int j) const {
  Vec g = W * (x - center);
  return u(x, t) * (g(i) * g(j) - W(i, j));
}

double ManufacturedSolution::dt(const Vec& x, double t) const {
  if (t <= tau) return 0.0;
  return u(x, t) * lambda / ((t - tau) * (t - tau));
}

double ManufacturedSolution::Yu(const ModelStructure& s, const Vec& x, double t) const {
  Vec bx = s.drift_matrix() * x;
  Vec grad = -u(x, t) * (W * (x - center));
  return bx.dot(grad) - dt(x, t);
}

double ManufacturedSolution::Lu(const CoefficientModel& model, const Vec& x, double t) const {
  const int q = model.structure().diffusion_rank();
  Mat a = model.a(x, t);
  double v = 0.0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) v += a(i, j) * d2u(x, t, i, j);
  return v + Yu(model.structure(), x, t);
}

ManufacturedSolution ManufacturedSolution::scaled(double factor) const {
  ManufacturedSolution m = *this;
  m.amplitude *= factor;
  return m;
}

namespace {

// Lipschitz-type declared modulus for a smooth source concentrated near the bump:
// |g(x) - g(y)| <= sum_i G_i |x_i - y_i| <= (sum G_i) max(r, r^{q_N}).
SourceSpec smooth_source(std::string name, std::function<double(const Vec&, double)> g, const ModelStructure& s,
                         const ManufacturedSolution& u, double T) {
  const int n = s.dim();
  Eigen::SelfAdjointEigenSolver<Mat> es(u.W);
  const double width = 7.0 / std::sqrt(es.eigenvalues().minCoeff());
  const int pts = n <= 2 ? 41 : 15;
  std::vector<double> times = linspace(u.tau, T, 13);
  std::vector<double> G(n, 0.0);
  double sup = 0.0;
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total *= pts;
  for (double t : times) {
    for (std::size_t k = 0; k < total; ++k) {
      Vec x(n);
      std::size_t r = k;
      for (int i = n - 1; i >= 0; --i) {
        x(i) = u.center(i) - width + 2.0 * width * static_cast<double>(r % pts) / (pts - 1);
        r /= pts;
      }
      double v = g(x, t);
      sup = std::max(sup, std::abs(v));
      for (int i = 0; i < n; ++i) {
        double h = 1e-5 * std::max(1.0, width);
        Vec e = Vec::Unit(n, i) * h;
        G[i] = std::max(G[i], std::abs(g(x + e, t) - g(x - e, t)) / (2.0 * h));
      }
    }
  }
  double L = 0.0;
  for (double v : G) L += v;
  // grid maxima undershoot the true sup; the factor covers the gap
  L *= 1.5;
  sup *= 1.5;
  const int qn = s.max_exponent();
  Modulus w = Modulus::analytic(
      name + ":lipschitz", [L, sup, qn](double r) { return std::min(2.0 * sup, L * std::max(r, std::pow(r, qn))); },
      0.5, 2.0 * sup + 1e-300);
  SourceSpec src;
  src.name = std::move(name);
  src.g = std::move(g);
  src.modulus = w;
  src.tau = u.tau;
  src.T = T;
  return src;
}

}  // namespace

SourceSpec ManufacturedSolution::source(const CoefficientModel& model, double T) const {
  ManufacturedSolution self = *this;
  auto g = [self, model](const Vec& x, double t) { return self.Lu(model, x, t); };
  SourceSpec src = smooth_source("manufactured", g, model.structure(), *this, T);
  src.breakpoints = model.breakpoints();
  return src;
}

double frozen_residual(const CoefficientModel& model, const ManufacturedSolution& u, const Vec& xbar, const Vec& x,
                       double t) {
  if (model.has_perturbation() && !model.perturbation_modulus())
    throw ContractViolation("frozen_residual: spatial perturbation has no declared modulus");
  const int q = model.structure().diffusion_rank();
  Mat diff = model.a(xbar, t) - model.a(x, t);
  double v = u.Lu(model, x, t);
  for (int h = 0; h < q; ++h)
    for (int k = 0; k < q; ++k) v += diff(h, k) * u.d2u(x, t, h, k);
  return v;
}

SourceSpec frozen_source(const CoefficientModel& model, const ManufacturedSolution& u, const Vec& xbar, double T) {
  auto g = [model, u, xbar](const Vec& x, double t) { return frozen_residual(model, u, xbar, x, t); };
  SourceSpec src = smooth_source("frozen_residual", g, model.structure(), u, T);
  src.breakpoints = model.breakpoints();
  return src;
}

double y_from_identity(const CoefficientModel& model, const SourceSpec& src, const Mat& second_derivatives,
                       const Vec& x, double t) {
  const int q = model.structure().diffusion_rank();
  if (second_derivatives.rows() != q || second_derivatives.cols() != q)
    throw std::invalid_argument("y_from_identity: second derivatives must be q x q");
  Mat a = model.a(x, t);
  return src.g(x, t) - (a.array() * second_derivatives.array()).sum();
}

WhitenedResult cauchy_solve(const CoefficientModel& model, const std::function<double(const Vec&)>& f, double s,
                            const Vec& x, double t, const QuadratureSpec& spec) {
  if (!(t > s)) throw std::invalid_argument("cauchy_solve: requires t > s");
  KernelWorkspace ws(model, t, s);
  return integrate_against_gamma(ws, x, f, spec);
}

// ------------------------------------------------------------ space-time integrals

namespace {

enum class Weight { value, grad, hess };

struct InnerEval {
  double value = 0.0;
  double bound = 0.0;  // sum W |weight| omega(||y0 - y||), or sum W |g| for values
};

InnerEval inner(const CoefficientModel& model, const SourceSpec& src, Weight kind, int i, int j, const Vec& x,
                double t, double s, int order, bool check, bool want_bound) {
  const ModelStructure& st = model.structure();
  const int n = st.dim();
  KernelWorkspace ws(model, t, s);
  const Vec y0 = ws.E_st() * x;
  const Mat P = 2.0 * ws.E_st() * ws.L();
  const Mat& M = ws.M();
  const double half_cij = (kind == Weight::hess) ? 0.5 * M.row(i).dot(M.row(j)) : 0.0;
  const double g0 = (kind == Weight::value) ? 0.0 : src.g(y0, s);
  const TensorRule& rule = tensor_gauss_hermite(n, order);
  CompensatedSum acc, bnd;
  for (Eigen::Index k = 0; k < rule.points.rows(); ++k) {
    const Vec w = rule.points.row(k).transpose();
    const Vec d = P * w;
    const double gy = src.g(y0 - d, s);
    const double W = rule.weights[static_cast<std::size_t>(k)];
    if (kind == Weight::value) {
      acc.add(-W * gy);
      if (want_bound) bnd.add(W * std::abs(gy));
      continue;
    }
    double weight;
    if (kind == Weight::grad) {
      weight = -M.row(i).dot(w);
    } else {
      weight = M.row(i).dot(w) * M.row(j).dot(w) - half_cij;
    }
    const double bracket = g0 - gy;
    if (check || want_bound) {
      double r = anisotropic_norm(st, d);
      double om = src.modulus(r);
      if (check && std::abs(bracket) > om * (1.0 + 1e-9) + 1e-13 * (std::abs(g0) + std::abs(gy))) {
        std::ostringstream os;
        os << "source '" << src.name << "' exceeds its declared modulus at s=" << s << " (|dg|=" << std::abs(bracket)
           << ", omega=" << om << ")";
        throw ContractViolation(os.str());
      }
      if (want_bound) bnd.add(W * std::abs(weight) * om);
    }
    acc.add(W * weight * bracket);
  }
  const double norm = std::pow(std::numbers::pi, -0.5 * n);
  return {norm * acc.value(), norm * bnd.value()};
}

TijResult space_time(const CoefficientModel& model, const SourceSpec& src, Weight kind, int i, int j, const Vec& x,
                     double t, const TijOptions& opt) {
  const ModelStructure& st = model.structure();
  if (x.size() != st.dim()) throw std::invalid_argument("point dimension does not match N");
  if (t > src.T + 1e-12) throw std::invalid_argument("evaluation time beyond the source horizon T");
  if (opt.cut < 0.0) throw std::invalid_argument("cut must be non-negative");
  TijResult res;
  const double tau = src.tau;
  const double span = t - tau;
  if (span <= opt.cut) return res;
  if (src.constant_in_x && kind != Weight::value) return res;  // the bracket vanishes identically

  std::vector<double> forced;
  for (double b : model.breakpoints()) forced.push_back(b);
  for (double b : src.breakpoints) forced.push_back(b);
  std::sort(forced.begin(), forced.end());

  const GaussRule& gl = gauss_legendre(opt.slice_order);
  auto integrate_piece = [&](double a, double b, int order) {
    CompensatedSum acc;
    for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
      double s = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k];
      acc.add(0.5 * (b - a) * gl.weights[k] *
              inner(model, src, kind, i, j, x, t, s, order, opt.check_contract, false).value);
    }
    return acc.value();
  };

  const double end = t - opt.cut;
  const double time_budget = 0.5 * opt.budget;
  const int max_inner = st.dim() <= 2 ? 8 * opt.inner_order : 2 * opt.inner_order;
  // Wide early slices need more Hermite nodes; once n and 2n agree the kernel
  // only narrows from there on, so the settled order is kept.
  int order = opt.inner_order;
  bool settled = !opt.adaptive;
  CompensatedSum inner_err;
  auto inner_piece = [&](double a, double b) {
    if (settled) return integrate_piece(a, b, order);
    double c1 = integrate_piece(a, b, order);
    for (;;) {
      double c2 = integrate_piece(a, b, 2 * order);
      double diff = std::abs(c2 - c1);
      if (diff <= 0.125 * opt.budget * std::max(1.0, std::abs(c2)) || 2 * order >= max_inner) {
        if (diff <= 0.125 * opt.budget * std::max(1.0, std::abs(c2))) settled = true;
        inner_err.add(diff);
        return c2;
      }
      order *= 2;
      c1 = c2;
    }
  };

  // Sources may vary sharply in s (a smooth start at tau, say); pieces are
  // bisected until halves agree, and the test is dropped after two clean slices.
  int time_clean = opt.adaptive ? 0 : 2;
  CompensatedSum time_err;
  std::function<double(double, double, double, int)> bisect = [&](double a, double b, double whole, int depth) {
    double m = 0.5 * (a + b);
    double l = inner_piece(a, m), r = inner_piece(m, b);
    double diff = std::abs(l + r - whole);
    if (diff <= 0.25 * opt.budget * std::max(1.0, std::abs(l + r)) || depth >= 12) {
      time_err.add(diff);
      return l + r;
    }
    return bisect(a, m, l, depth + 1) + bisect(m, b, r, depth + 1);
  };
  auto slice_piece = [&](double a, double b) {
    double whole = inner_piece(a, b);
    if (time_clean >= 2) return whole;
    double v = bisect(a, b, whole, 0);
    time_clean = (std::abs(v - whole) <= 0.25 * opt.budget * std::max(1.0, std::abs(v))) ? time_clean + 1 : 0;
    return v;
  };

  CompensatedSum total;
  double prev = 0.0;
  double tail = std::numeric_limits<double>::infinity();
  for (int k = 0;; ++k) {
    if (k >= opt.max_slices) {
      res.converged = false;
      break;
    }
    double a = t - span * std::ldexp(1.0, -k);
    double b = t - span * std::ldexp(1.0, -(k + 1));
    bool last = false;
    if (b >= end) {
      b = end;
      last = true;
    }
    double c = 0.0;
    double lo = a;
    for (double f : forced) {
      if (f > lo && f < b) {
        c += slice_piece(lo, f);
        lo = f;
      }
    }
    c += slice_piece(lo, b);
    total.add(c);
    res.slices = k + 1;
    if (last) {
      tail = 0.0;
      break;
    }
    // error of the untouched tail (t - delta, t)
    const double delta = t - b;
    double geo = std::numeric_limits<double>::infinity();
    if (c == 0.0 && prev == 0.0) geo = 0.0;
    else if (prev != 0.0) {
      double rho = std::abs(c / prev);
      if (rho < 0.9) geo = std::abs(c) * rho / (1.0 - rho);
    }
    prev = c;
    double est = geo;
    if (k >= 3 && !(geo <= time_budget * std::max(1.0, std::abs(total.value())))) {
      InnerEval B = inner(model, src, kind, i, j, x, t, b, order, false, true);
      double mod;
      if (kind == Weight::value) {
        mod = B.bound * delta;
      } else {
        double om = src.modulus(std::sqrt(delta));
        IntegralEstimate pd = partial_dini(src.modulus, std::sqrt(delta));
        mod = (om > 0.0) ? 2.0 * B.bound * delta * pd.value / om : 0.0;
      }
      est = std::min(geo, mod);
    }
    tail = est;
    if (k >= 3 && est <= time_budget * std::max(1.0, std::abs(total.value()))) break;
  }
  res.value = total.value();
  res.inner_error = inner_err.value() + time_err.value();
  res.error = tail + res.inner_error;
  if (!res.converged && !opt.allow_overrun) {
    std::ostringstream os;
    os << "slice budget exhausted after " << opt.max_slices << " slices (tail estimate " << tail << ")";
    throw QuadratureError(os.str());
  }
  return res;
}

void check_index(const ModelStructure& s, int i, const char* what) {
  if (i < 0 || i >= s.diffusion_rank())
    throw std::invalid_argument(std::string(what) + ": index must lie in the diffusion block");
}

}  // namespace

TijResult repr_u(const CoefficientModel& model, const SourceSpec& src, const Vec& x, double t,
                 const TijOptions& opt) {
  return space_time(model, src, Weight::value, 0, 0, x, t, opt);
}

TijResult repr_grad(const CoefficientModel& model, const SourceSpec& src, int k, const Vec& x, double t,
                    const TijOptions& opt) {
  check_index(model.structure(), k, "repr_grad");
  return space_time(model, src, Weight::grad, k, k, x, t, opt);
}

TijResult t_ij(const CoefficientModel& model, const SourceSpec& src, int i, int j, const Vec& x, double t,
               const TijOptions& opt) {
  check_index(model.structure(), i, "t_ij");
  check_index(model.structure(), j, "t_ij");
  return space_time(model, src, Weight::hess, i, j, x, t, opt);
}

}  // namespace kfp
