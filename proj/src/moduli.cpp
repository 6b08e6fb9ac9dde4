#include "kfplab/moduli.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "kfplab/parallel.hpp"
#include "kfplab/quadrature.hpp"

namespace kfp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInnerTol = 1e-11;
// bounded so noisy nested integrands (M of M) cannot explode the subdivision
constexpr int kInnerDepth = 6;

// Integrals whose integrand is itself a quadrature (M(omega), U of M(omega))
// run the inner level tighter, so the outer level sees a smooth function.
thread_local int nesting = 0;

AdaptiveResult inner_adaptive(const std::function<double(double)>& f, double a, double b) {
  const double tol = nesting > 0 ? 1e-13 : kInnerTol;
  ++nesting;
  AdaptiveResult r;
  try {
    r = integrate_adaptive(f, a, b, tol, kInnerDepth);
  } catch (...) {
    --nesting;
    throw;
  }
  --nesting;
  return r;
}
}  // namespace

const char* to_string(Convergence c) {
  switch (c) {
    case Convergence::finite:
      return "finite";
    case Convergence::infinite:
      return "infinite";
    default:
      return "undetermined";
  }
}

// ---------------------------------------------------------------- Modulus

struct Modulus::Impl {
  Kind kind = Kind::analytic;
  std::string name;
  double alpha = 0.5;
  double omega0 = 0.0;
  std::function<double(double)> f;
  std::function<double(double)> f_log;
  std::vector<std::pair<double, double>> grid;
  std::vector<double> log_r;
  mutable std::once_flag dini_once, log_once, m_once;
  mutable IntegralEstimate dini_v, log_v;
  mutable std::shared_ptr<const Impl> m_impl;  // M(this), built on first use
  bool derived = false;                        // values come from an inner quadrature
};

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("modulus exponent alpha must lie in (0,1)");
}

}  // namespace

Modulus Modulus::analytic(std::string name, std::function<double(double)> f, double alpha, double omega0) {
  check_alpha(alpha);
  auto impl = std::make_shared<Impl>();
  impl->name = std::move(name);
  impl->f = std::move(f);
  impl->alpha = alpha;
  impl->omega0 = omega0;
  Modulus m;
  m.impl_ = impl;
  return m;
}

Modulus Modulus::analytic_log(std::string name, std::function<double(double)> f_of_u, double alpha,
                              double omega0) {
  check_alpha(alpha);
  auto impl = std::make_shared<Impl>();
  impl->name = std::move(name);
  impl->f_log = std::move(f_of_u);
  impl->alpha = alpha;
  impl->omega0 = omega0;
  Modulus m;
  m.impl_ = impl;
  return m;
}

Modulus Modulus::power(double alpha, double scale) {
  std::ostringstream os;
  os << "power(" << alpha << ")";
  if (scale != 1.0) os << "*" << scale;
  return analytic_log(
      os.str(), [alpha, scale](double u) { return scale * std::exp(-alpha * u); }, alpha, scale);
}

Modulus Modulus::zero(double alpha) {
  return analytic_log("zero", [](double) { return 0.0; }, alpha, 0.0);
}

Modulus Modulus::tabulated(std::string name, std::vector<std::pair<double, double>> grid, double alpha,
                           double omega0) {
  check_alpha(alpha);
  if (grid.empty()) throw ConfigError("grid", "tabulated modulus needs at least one point");
  std::sort(grid.begin(), grid.end());
  double run = 0.0;
  for (auto& [r, w] : grid) {
    if (!(r > 0.0)) throw ConfigError("grid", "radii must be positive");
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("grid", "values must be finite and non-negative");
    run = std::max(run, w);
    w = run;
  }
  auto impl = std::make_shared<Impl>();
  impl->kind = Kind::tabulated;
  impl->name = std::move(name);
  impl->alpha = alpha;
  impl->omega0 = omega0;
  impl->grid = std::move(grid);
  for (const auto& p : impl->grid) impl->log_r.push_back(std::log(p.first));
  Modulus m;
  m.impl_ = impl;
  return m;
}

double Modulus::operator()(double r) const {
  if (!(r > 0.0)) return 0.0;
  const Impl& I = *impl_;
  if (I.kind == Kind::tabulated) {
    const auto& g = I.grid;
    if (r <= g.front().first) return g.front().second * r / g.front().first;
    if (r >= g.back().first) return g.back().second;
    double lr = std::log(r);
    auto it = std::upper_bound(I.log_r.begin(), I.log_r.end(), lr);
    std::size_t j = static_cast<std::size_t>(it - I.log_r.begin());
    double a = (lr - I.log_r[j - 1]) / (I.log_r[j] - I.log_r[j - 1]);
    return g[j - 1].second + a * (g[j].second - g[j - 1].second);
  }
  if (I.f) return I.f(r);
  return I.f_log(-std::log(r));
}

double Modulus::at_log(double u) const {
  const Impl& I = *impl_;
  if (I.kind == Kind::analytic && I.f_log) return I.f_log(u);
  double r = std::exp(-u);
  return r > 0.0 ? (*this)(r) : 0.0;
}

bool Modulus::derived() const { return impl_->derived; }

Modulus::Kind Modulus::kind() const { return impl_->kind; }
const std::string& Modulus::name() const { return impl_->name; }
double Modulus::alpha() const { return impl_->alpha; }
double Modulus::omega0() const { return impl_->omega0; }
const std::vector<std::pair<double, double>>& Modulus::grid() const { return impl_->grid; }

const IntegralEstimate& Modulus::dini() const {
  std::call_once(impl_->dini_once, [this] { impl_->dini_v = dini_integral(*this); });
  return impl_->dini_v;
}

const IntegralEstimate& Modulus::log_dini() const {
  std::call_once(impl_->log_once, [this] { impl_->log_v = log_dini_integral(*this); });
  return impl_->log_v;
}

Modulus Modulus::tabulate(const std::vector<double>& radii) const {
  std::vector<std::pair<double, double>> g;
  for (double r : radii) g.emplace_back(r, (*this)(r));
  return tabulated(name() + "@grid", std::move(g), alpha(), omega0());
}

// ------------------------------------------------- log-substitution integrals

IntegralEstimate integrate_decaying(const std::function<double(double)>& g, double a, const LogQuadOptions& opt) {
  CompensatedSum sum;
  double err = 0.0;
  auto piece = [&](double lo, double hi) {
    AdaptiveResult r = inner_adaptive(g, lo, hi);
    sum.add(r.value);
    err += r.error;
  };
  double b = std::max(a, 0.0) + 1.0;
  piece(a, b);
  // The divergence ceiling applies to the dyadic tail only; the first piece
  // may be large when a < 0.
  const double head = sum.value();
  double prev_total = std::numeric_limits<double>::quiet_NaN();
  int slow = 0;
  for (int j = 0; j < opt.max_doublings; ++j) {
    double b2 = 2.0 * b;
    piece(b, b2);
    double S = sum.value();
    if (!std::isfinite(S) || S - head > opt.ceiling) return {kInf, 0.0, Convergence::infinite};
    double g1 = g(b), g2 = g(b2);
    if (!std::isfinite(g1) || !std::isfinite(g2)) return {kInf, 0.0, Convergence::infinite};
    if (g2 <= 0.0) {
      if (g1 <= 0.0) return {S, err, Convergence::finite};
      prev_total = std::numeric_limits<double>::quiet_NaN();
      b = b2;
      continue;
    }
    double p = g1 > 0.0 ? std::log2(g1 / g2) : 0.0;
    if (p > 1.0) {
      slow = 0;
      double total = S + g2 * b2 / (p - 1.0);
      double change = std::abs(total - prev_total);
      if (b2 >= 16.0 && change <= opt.rel_tol * std::abs(total) + 1e-300)
        return {total, change + err, Convergence::finite};
      prev_total = total;
    } else {
      prev_total = std::numeric_limits<double>::quiet_NaN();
      if (b >= 64.0 && ++slow >= 3) return {kInf, 0.0, Convergence::infinite};
    }
    b = b2;
  }
  return {sum.value(), kInf, Convergence::undetermined};
}

namespace {

IntegralEstimate partial_dini_log(const Modulus& w, double u0) {
  LogQuadOptions opt;
  // slowly decaying derived moduli would otherwise need ~30 doublings of
  // expensive evaluations for the last two digits
  if (w.derived()) opt.rel_tol = 1e-7;
  return integrate_decaying([&w](double u) { return w.at_log(u); }, u0, opt);
}

// r * int_r^inf omega(s)/s^2 ds with r = exp(-u0), written as
// int_0^inf omega(r e^v) e^{-v} dv. The remainder past the last piece uses the
// power majorant omega0 s^alpha, valid for s >= 1.
IntegralEstimate scaled_tail_log(const Modulus& w, double u0) {
  const double alpha = w.alpha(), w0 = w.omega0();
  auto h = [&](double v) {
    double g = w.at_log(u0 - v);
    return g == 0.0 ? 0.0 : g * std::exp(-v);
  };
  const double w1 = w.at_log(0.0);
  CompensatedSum S;
  double err = 0.0, W = 0.0, width = 1.0;
  for (int it = 0; it < 400; ++it) {
    double W2 = W + width;
    AdaptiveResult r = inner_adaptive(h, W, W2);
    S.add(r.value);
    err += r.error;
    W = W2;
    width = std::min(2.0 * width, 64.0);
    double s = S.value();
    if (!std::isfinite(s)) return {kInf, 0.0, Convergence::infinite};
    if (W >= std::max(u0, 0.0)) {
      double R = w0 * std::exp(-alpha * u0 + (alpha - 1.0) * W) / (1.0 - alpha);
      if (R <= 1e-9 * s + 1e-300) return {s + R, err + R, Convergence::finite};
    } else {
      double R = w1 * std::exp(-W) + w0 * std::exp(-u0) / (1.0 - alpha);
      if (R <= 1e-9 * s + 1e-30) return {s, err + R, Convergence::finite};
    }
  }
  return {S.value(), kInf, Convergence::undetermined};
}

double m_transform_log(const Modulus& w, double u0) {
  IntegralEstimate F = partial_dini_log(w, u0);
  if (!F.finite()) return kInf;
  IntegralEstimate T = scaled_tail_log(w, u0);
  return w.at_log(u0) + F.value + T.value;
}

}  // namespace

IntegralEstimate dini_integral(const Modulus& w) { return partial_dini_log(w, 0.0); }

IntegralEstimate log_dini_integral(const Modulus& w) {
  return integrate_decaying([&w](double u) { return u * w.at_log(u); }, 0.0);
}

IntegralEstimate partial_dini(const Modulus& w, double rho) {
  if (!(rho > 0.0)) return {};
  return partial_dini_log(w, -std::log(rho));
}

IntegralEstimate scaled_tail(const Modulus& w, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("scaled_tail: r must be positive");
  return scaled_tail_log(w, -std::log(r));
}

double m_transform(const Modulus& w, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("m_transform: r must be positive");
  if (!w.dini().finite()) throw std::domain_error("m_transform: Dini integral of " + w.name() + " diverges");
  return m_transform_log(w, -std::log(r));
}

Modulus m_modulus(const Modulus& w) { return w.m_cached(); }

namespace {

// Cumulative integrals of omega in u = -log r on a fixed grid, so M(omega)(u)
// costs two short Gauss-Legendre pieces instead of two improper integrals:
//   F(u) = int_u^inf omega,  G(u) = int_{-inf}^u omega(v) e^{v-u} dv.
struct MTable {
  std::vector<double> v, F, G;

  static MTable build(const Modulus& w) {
    MTable t;
    for (double u = -40.0; u < 40.0; u += 0.25) t.v.push_back(u);
    for (double u = 40.0; u <= 1e13; u *= std::exp2(0.125)) t.v.push_back(u);
    if (w.kind() == Modulus::Kind::tabulated)
      for (const auto& [r, val] : w.grid()) t.v.push_back(-std::log(r));
    std::sort(t.v.begin(), t.v.end());
    t.v.erase(std::unique(t.v.begin(), t.v.end()), t.v.end());
    const std::size_t K = t.v.size();
    std::vector<double> P(K - 1), E(K - 1);
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const double a = t.v[k], b = t.v[k + 1];
      P[k] = inner_adaptive([&](double u) { return w.at_log(u); }, a, b).value;
      E[k] = inner_adaptive([&](double u) { return w.at_log(u) * std::exp(u - b); }, a, b).value;
    }
    t.F.assign(K, 0.0);
    t.F[K - 1] = partial_dini_log(w, t.v[K - 1]).value;
    for (std::size_t k = K - 1; k-- > 0;) t.F[k] = t.F[k + 1] + P[k];
    t.G.assign(K, 0.0);
    t.G[0] = scaled_tail_log(w, t.v[0]).value;
    for (std::size_t k = 0; k + 1 < K; ++k) t.G[k + 1] = std::exp(t.v[k] - t.v[k + 1]) * t.G[k] + E[k];
    return t;
  }

  double m(const Modulus& w, double u0) const {
    if (u0 < v.front() || u0 >= v.back()) return m_transform_log(w, u0);
    std::size_t k = static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), u0) - v.begin()) - 1;
    const double a = v[k], b = v[k + 1];
    double f = F[k + 1] + integrate_gauss([&](double u) { return w.at_log(u); }, u0, b, 20);
    double g = std::exp(a - u0) * G[k] + integrate_gauss([&](double u) { return w.at_log(u) * std::exp(u - u0); }, a, u0, 20);
    return w.at_log(u0) + f + g;
  }
};

}  // namespace

Modulus Modulus::m_cached() const {
  std::call_once(impl_->m_once, [this] {
    const double a = alpha();
    double cap = dini().value + omega0() * (1.0 + 1.0 / a + 1.0 / (1.0 - a));
    auto table = std::make_shared<const MTable>(MTable::build(*this));
    // weak reference: the parent owns the cached child
    std::weak_ptr<const Impl> parent = impl_;
    auto child = std::make_shared<Impl>();
    child->name = "M(" + name() + ")";
    child->f_log = [parent, table](double u) {
      Modulus p;
      p.impl_ = parent.lock();
      return table->m(p, u);
    };
    child->alpha = a;
    child->omega0 = cap;
    child->derived = true;
    impl_->m_impl = child;
  });
  Modulus m;
  m.impl_ = impl_->m_impl;
  return m;
}

double n_transform(const Modulus& w, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("n_transform: r must be positive");
  if (!w.dini().finite()) return kInf;
  Modulus M = m_modulus(w);
  if (!M.dini().finite()) return kInf;
  return m_transform_log(M, -std::log(r));
}

// ------------------------------------------------------- Gaussian norm tail

namespace {

struct SimplexRule {
  std::vector<std::vector<double>> theta;
  std::vector<double> weight;
};

SimplexRule simplex_rule(int n) {
  SimplexRule rule;
  if (n == 1) {
    rule.theta.push_back({1.0});
    rule.weight.push_back(1.0);
    return rule;
  }
  // composite Gauss-Legendre, two panels per collapsed coordinate
  const GaussRule& gl = gauss_legendre(20);
  std::vector<double> s1, w1;
  for (int p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      s1.push_back(0.25 + 0.5 * p + 0.25 * gl.nodes[i]);
      w1.push_back(0.25 * gl.weights[i]);
    }
  const int m = static_cast<int>(s1.size());
  std::vector<int> idx(n - 1, 0);
  for (;;) {
    std::vector<double> th(n);
    double rem = 1.0, jac = 1.0, wt = 1.0;
    for (int k = 0; k < n - 1; ++k) {
      th[k] = rem * s1[idx[k]];
      jac *= rem;
      wt *= w1[idx[k]];
      rem *= 1.0 - s1[idx[k]];
    }
    th[n - 1] = rem;
    rule.theta.push_back(std::move(th));
    rule.weight.push_back(wt * jac);
    int d = 0;
    while (d < n - 1 && ++idx[d] == m) idx[d++] = 0;
    if (d == n - 1) break;
  }
  return rule;
}

const SimplexRule& cached_simplex(int n) {
  static std::map<int, std::unique_ptr<SimplexRule>> cache;
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<SimplexRule>(simplex_rule(n));
  return *slot;
}

}  // namespace

double GaussianNormTail::density(double rho) const {
  const int n = static_cast<int>(q_.size());
  if (!(rho > 0.0)) return 0.0;
  const SimplexRule& rule = cached_simplex(n);
  double acc = 0.0;
  for (std::size_t p = 0; p < rule.weight.size(); ++p) {
    double expo = 0.0, jac = 1.0;
    for (int i = 0; i < n; ++i) {
      double w = rho * rule.theta[p][i];
      expo += std::pow(w, 2.0 * q_[i]);
      jac *= q_[i] * std::pow(w, q_[i] - 1);
    }
    acc += rule.weight[p] * jac * std::exp(-mu_ * expo);
  }
  return std::ldexp(1.0, n) * std::pow(rho, n - 1) * acc;
}

GaussianNormTail::GaussianNormTail(const ModelStructure& s, double mu) : q_(s.exponents()), mu_(mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("Gaussian weight needs mu > 0");
  const int n = s.dim();
  total_ = std::pow(std::numbers::pi / mu, 0.5 * n);
  lambda_max_ = n * std::max(1.0, 9.0 / std::sqrt(mu));
  const int points = 801;
  const double l0 = std::log(lambda_min_), l1 = std::log(lambda_max_);
  log_lambda_.resize(points);
  for (int j = 0; j < points; ++j) log_lambda_[j] = l0 + (l1 - l0) * j / (points - 1);
  std::vector<double> seg(points - 1);
  for (int j = 0; j + 1 < points; ++j)
    seg[j] = integrate_gauss([this](double x) { return density(x); }, std::exp(log_lambda_[j]),
                             std::exp(log_lambda_[j + 1]), 10);
  g_.assign(points, 0.0);
  k_.assign(points, 0.0);
  CompensatedSum acc;
  for (int j = points - 1; j >= 0; --j) {
    if (j + 1 < points) acc.add(seg[j]);
    g_[j] = acc.value();
    k_[j] = density(std::exp(log_lambda_[j]));
  }
  table_total_ = g_[0] + integrate_gauss([this](double x) { return density(x); }, 0.0, lambda_min_, 20);
}

double GaussianNormTail::operator()(double lambda) const {
  if (!(lambda > 0.0)) return total_;
  if (lambda >= lambda_max_) return 0.0;
  if (lambda <= lambda_min_) {
    int Q = 0;
    for (int q : q_) Q += q;
    return total_ - (total_ - g_[0]) * std::pow(lambda / lambda_min_, Q);
  }
  double x = std::log(lambda);
  auto it = std::upper_bound(log_lambda_.begin(), log_lambda_.end(), x);
  std::size_t j = static_cast<std::size_t>(it - log_lambda_.begin()) - 1;
  j = std::min(j, log_lambda_.size() - 2);
  double h = log_lambda_[j + 1] - log_lambda_[j];
  double t = (x - log_lambda_[j]) / h;
  double ga = g_[j], gb = g_[j + 1];
  if (ga < 1e-280 || gb < 1e-280) return ga + t * (gb - ga);
  // Hermite cubic in log G with exact slopes d log G / d log lambda = -lambda K / G.
  double ya = std::log(ga), yb = std::log(gb);
  double da = -std::exp(log_lambda_[j]) * k_[j] / ga * h;
  double db = -std::exp(log_lambda_[j + 1]) * k_[j + 1] / gb * h;
  double t2 = t * t, t3 = t2 * t;
  double y = (2 * t3 - 3 * t2 + 1) * ya + (t3 - 2 * t2 + t) * da + (-2 * t3 + 3 * t2) * yb + (t3 - t2) * db;
  return std::exp(y);
}

std::shared_ptr<const GaussianNormTail> GaussianNormTail::get(const ModelStructure& s, double mu) {
  static std::map<std::pair<std::vector<int>, double>, std::shared_ptr<const GaussianNormTail>> cache;
  static std::mutex m;
  auto key = std::make_pair(s.exponents(), mu);
  {
    std::lock_guard<std::mutex> lock(m);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto table = std::make_shared<const GaussianNormTail>(s, mu);
  std::lock_guard<std::mutex> lock(m);
  auto [it, inserted] = cache.emplace(key, table);
  return it->second;
}

double u_mu_transform(const Modulus& w, double mu, double r, const ModelStructure& s) {
  if (!(mu > 0.0)) throw std::invalid_argument("u_mu_transform: mu must be positive");
  if (!(r > 0.0)) throw std::invalid_argument("u_mu_transform: r must be positive");
  if (!w.dini().finite()) return kInf;
  auto G = GaussianNormTail::get(s, mu);
  const double u0 = -std::log(r);
  auto h = [&](double u) {
    double g = w.at_log(u);
    return g == 0.0 ? 0.0 : g * (*G)(std::exp(u0 - u));
  };
  // Fubini: U(r) = int omega(s) G(s/r) ds/s, split at s = r.
  LogQuadOptions opt;
  if (w.derived()) opt.rel_tol = 1e-7;
  IntegralEstimate near = integrate_decaying(h, u0, opt);
  if (!near.finite()) return kInf;
  AdaptiveResult far = inner_adaptive(h, u0 - std::log(G->lambda_max()), u0);
  return near.value + far.value;
}

double v_mu_transform(const Modulus& w, double mu, double r, const ModelStructure& s) {
  if (!w.dini().finite()) return kInf;
  return u_mu_transform(m_modulus(w), mu, r, s);
}

// ----------------------------------------------------------- U bounds check

namespace {

struct UBoundFit {
  double c = 0.0, kappa = 0.0, c_large = 0.0;
  std::vector<double> lhs, rhs;
};

UBoundFit fit_u_bound(const Modulus& w, double mu, const ModelStructure& s, int per_decade) {
  std::vector<double> small = logspace(1e-3, 1.0, 3 * per_decade + 1);
  small.pop_back();
  std::vector<double> large = logspace(1.0, 10.0, per_decade + 1);
  const double norm = w.dini().value + w.omega0();
  std::vector<double> us(small.size()), fs(small.size()), ul(large.size());
  for (std::size_t i = 0; i < small.size(); ++i) {
    us[i] = u_mu_transform(w, mu, small[i], s);
    fs[i] = partial_dini(w, std::sqrt(small[i])).value;
  }
  for (std::size_t i = 0; i < large.size(); ++i) ul[i] = u_mu_transform(w, mu, large[i], s);
  std::vector<double> rl(large.size());
  for (std::size_t i = 0; i < large.size(); ++i) rl[i] = std::pow(large[i], w.alpha()) * norm;
  UBoundFit fit;
  fit.c_large = ratio_max(ul, rl);
  double best = kInf;
  for (int j = -6; j <= 3; ++j) {
    double kappa = std::ldexp(1.0, j);
    std::vector<double> rs(small.size());
    for (std::size_t i = 0; i < small.size(); ++i) rs[i] = fs[i] + norm * std::exp(-kappa / small[i]);
    double c = std::max(ratio_max(us, rs), fit.c_large);
    double score = std::max(c, 1.0 / kappa);
    if (score < best) {
      best = score;
      fit.c = c;
      fit.kappa = kappa;
      fit.rhs = rs;
    }
  }
  fit.lhs = us;
  fit.lhs.insert(fit.lhs.end(), ul.begin(), ul.end());
  fit.rhs.insert(fit.rhs.end(), rl.begin(), rl.end());
  return fit;
}

}  // namespace

EstimateReport u_mu_bounds_check(const Modulus& w, double mu, const ModelStructure& s) {
  if (!(mu > 0.0)) throw std::invalid_argument("u_mu_bounds_check: mu must be positive");
  EstimateReport rep;
  rep.inequality_id = "u_mu_bounds";
  rep.rhs_form = "c*(F(sqrt r) + ([w]+w0) exp(-kappa/r)) for r<1; c*r^alpha*([w]+w0) for r>=1";
  if (!w.dini().finite()) {
    rep.c_star = kInf;
    rep.stability = kInf;
    rep.finalize();
    return rep;
  }
  UBoundFit coarse = fit_u_bound(w, mu, s, 3);
  UBoundFit fine = fit_u_bound(w, mu, s, 6);
  rep.lhs_samples = fine.lhs;
  rep.rhs_samples = fine.rhs;
  rep.lhs_max = *std::max_element(fine.lhs.begin(), fine.lhs.end());
  rep.samples = fine.lhs.size();
  rep.degenerate = rep.lhs_max == 0.0;
  rep.c_star = rep.degenerate ? 0.0 : fine.c;
  rep.stability = rep.degenerate ? 0.0 : relative_change(fine.c, coarse.c);
  rep.details["kappa"] = rep.degenerate ? 0.0 : fine.kappa;
  rep.details["c_large_r"] = fine.c_large;
  rep.details["mu"] = mu;
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------- sampled fields

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = a;
    return v;
  }
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

std::vector<double> logspace(double a, double b, int n) {
  std::vector<double> v = linspace(std::log(a), std::log(b), n);
  for (auto& x : v) x = std::exp(x);
  return v;
}

std::size_t SampledField::x_count() const {
  std::size_t n = 1;
  for (const auto& a : x_axes) n *= a.size();
  return n;
}

Vec SampledField::point(std::size_t xi) const {
  const int n = static_cast<int>(x_axes.size());
  Vec x(n);
  for (int d = n - 1; d >= 0; --d) {
    std::size_t m = x_axes[d].size();
    x(d) = x_axes[d][xi % m];
    xi /= m;
  }
  return x;
}

double SampledField::sup_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double SampledField::resolution() const {
  double res = kInf;
  for (std::size_t d = 0; d < x_axes.size(); ++d) {
    const auto& a = x_axes[d];
    for (std::size_t i = 1; i < a.size(); ++i)
      res = std::min(res, std::pow(a[i] - a[i - 1], 1.0 / structure.exponents()[d]));
  }
  return res;
}

SampledField SampledField::sample(const ModelStructure& s, std::vector<std::vector<double>> x_axes,
                                  std::vector<double> t_axis, const std::function<double(const Vec&, double)>& f,
                                  int threads) {
  if (static_cast<int>(x_axes.size()) != s.dim()) throw std::invalid_argument("SampledField: axis count mismatch");
  for (const auto& a : x_axes)
    for (std::size_t i = 1; i < a.size(); ++i)
      if (!(a[i] > a[i - 1])) throw std::invalid_argument("SampledField: axes must be strictly increasing");
  SampledField F{s, std::move(x_axes), std::move(t_axis), {}};
  const std::size_t nx = F.x_count(), nt = F.t_axis.size();
  F.values.assign(nx * nt, 0.0);
  parallel_for(nt * nx, threads, [&](std::size_t k) {
    std::size_t ti = k / nx, xi = k % nx;
    double v = f(F.point(xi), F.t_axis[ti]);
    if (!std::isfinite(v)) throw std::domain_error("SampledField: non-finite sample");
    F.values[k] = v;
  });
  return F;
}

std::vector<double> empirical_modulus_values(const SampledField& f, const std::vector<double>& radii,
                                             const std::vector<char>* mask) {
  if (radii.empty()) throw ConfigError("radii", "empty radius list");
  if (!std::is_sorted(radii.begin(), radii.end())) throw ConfigError("radii", "radii must be increasing");
  if (radii.front() < f.resolution() * (1.0 - 1e-12))
    throw ConfigError("radii", "smallest radius is below the grid resolution");
  const std::size_t nx = f.x_count(), nt = f.t_axis.size(), R = radii.size();
  std::vector<Vec> pts(nx);
  for (std::size_t i = 0; i < nx; ++i) pts[i] = f.point(i);
  // bucket of each pair: first radius >= distance, R if none
  std::vector<std::uint16_t> bucket(nx * (nx - 1) / 2);
  std::size_t k = 0;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = i + 1; j < nx; ++j, ++k) {
      double d = anisotropic_norm(f.structure, Vec(pts[i] - pts[j]));
      bucket[k] = static_cast<std::uint16_t>(std::lower_bound(radii.begin(), radii.end(), d * (1.0 - 1e-12)) -
                                             radii.begin());
    }
  std::vector<std::vector<double>> per_t(nt, std::vector<double>(R, 0.0));
  parallel_for(nt, 0, [&](std::size_t ti) {
    auto& best = per_t[ti];
    const double* v = f.values.data() + ti * nx;
    const char* m = mask ? mask->data() + ti * nx : nullptr;
    std::size_t kk = 0;
    for (std::size_t i = 0; i < nx; ++i) {
      if (m && !m[i]) {
        kk += nx - i - 1;
        continue;
      }
      for (std::size_t j = i + 1; j < nx; ++j, ++kk) {
        std::uint16_t b = bucket[kk];
        if (b >= R || (m && !m[j])) continue;
        best[b] = std::max(best[b], std::abs(v[i] - v[j]));
      }
    }
  });
  std::vector<double> out(R, 0.0);
  for (const auto& b : per_t)
    for (std::size_t r = 0; r < R; ++r) out[r] = std::max(out[r], b[r]);
  for (std::size_t r = 1; r < R; ++r) out[r] = std::max(out[r], out[r - 1]);
  return out;
}

Modulus empirical_modulus(const SampledField& f, const std::vector<double>& radii, double alpha) {
  std::vector<double> w = empirical_modulus_values(f, radii);
  std::vector<std::pair<double, double>> g;
  for (std::size_t i = 0; i < radii.size(); ++i) g.emplace_back(radii[i], w[i]);
  return Modulus::tabulated("empirical", std::move(g), alpha, w.back());
}

LocalityReport support_locality_check(const SampledField& f, const GroupPoint& center, double radius,
                                      const std::vector<double>& radii) {
  const std::size_t nx = f.x_count(), nt = f.t_axis.size();
  std::vector<char> mask(nx * nt, 0);
  const double scale = f.sup_abs();
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::size_t xi = 0; xi < nx; ++xi) {
      GroupPoint p{f.point(xi), f.t_axis[ti]};
      bool inside = quasi_distance(f.structure, p, center) <= radius;
      mask[ti * nx + xi] = inside;
      if (!inside && std::abs(f.at(ti, xi)) > 1e-12 * std::max(scale, 1e-300))
        throw ContractViolation("support_locality_check: field does not vanish outside the ball");
    }
  LocalityReport rep;
  rep.omega_full = empirical_modulus_values(f, radii);
  rep.omega_ball = empirical_modulus_values(f, radii, &mask);
  // grid tolerance: largest jump between axis neighbours
  double jump = 0.0;
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::size_t xi = 0; xi < nx; ++xi) {
      std::size_t stride = 1;
      for (int d = static_cast<int>(f.x_axes.size()) - 1; d >= 0; --d) {
        std::size_t m = f.x_axes[d].size();
        if ((xi / stride) % m + 1 < m) jump = std::max(jump, std::abs(f.at(ti, xi) - f.at(ti, xi + stride)));
        stride *= m;
      }
    }
  rep.tolerance = jump;
  for (std::size_t r = 0; r < radii.size(); ++r)
    rep.max_deviation = std::max(rep.max_deviation, rep.omega_full[r] - rep.omega_ball[r]);
  rep.pass = rep.max_deviation <= rep.tolerance;
  return rep;
}

// ---------------------------------------------------------- dyadic bounds

namespace {

struct ShellSums {
  double value = 0.0;
  double variance = 0.0;
};

// Monte-Carlo integral of omega(gamma d)/d^power over lo <= d(xi, eta) < hi,
// sampling eta = xi o zeta^{-1} with zeta uniform in the box around B_hi(0).
ShellSums shell_integral(const Modulus& w, const ModelStructure& s, const GroupPoint& xi, double lo, double hi,
                         double gamma, int power, std::size_t n, std::uint64_t seed, std::uint64_t shell_id) {
  const int N = s.dim();
  std::vector<double> half(N + 1);
  double vol = 1.0;
  for (int i = 0; i < N; ++i) {
    half[i] = std::pow(hi, s.exponents()[i]);
    vol *= 2.0 * half[i];
  }
  half[N] = hi * hi;
  vol *= 2.0 * half[N];
  const std::size_t chunk = 2048;
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  std::vector<double> sum(nchunks, 0.0), sum2(nchunks, 0.0);
  parallel_for(nchunks, 0, [&](std::size_t c) {
    auto rng = stream_rng(seed, "dyadic", (shell_id << 32) + c);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GroupPoint z{Vec(N), 0.0};
    std::size_t a = c * chunk, b = std::min(n, a + chunk);
    for (std::size_t i = a; i < b; ++i) {
      for (int d = 0; d < N; ++d) z.x(d) = half[d] * u(rng);
      z.t = half[N] * u(rng);
      GroupPoint eta = group_compose(s, xi, group_inverse(s, z));
      double d = quasi_distance(s, xi, eta);
      if (d < lo || d >= hi || d <= 0.0) continue;
      double v = w(gamma * d) / std::pow(d, power);
      sum[c] += v;
      sum2[c] += v * v;
    }
  });
  double S = 0.0, S2 = 0.0;
  for (std::size_t c = 0; c < nchunks; ++c) {
    S += sum[c];
    S2 += sum2[c];
  }
  double mean = S / n, var = std::max(0.0, S2 / n - mean * mean);
  return {vol * mean, vol * vol * var / n};
}

struct DyadicValues {
  double ia = 0.0, ib = 0.0, se_a = 0.0, se_b = 0.0;
};

DyadicValues dyadic_values(const Modulus& w, const ModelStructure& s, const GroupPoint& xi, double r, double gamma,
                           const DyadicOptions& opt, std::size_t n) {
  const int Q = s.homogeneous_dimension();
  const double radial = (Q + 2) * s.unit_ball_volume().value;
  DyadicValues out;
  double va = 0.0, vb = 0.0;
  for (int k = 0; k < opt.shells; ++k) {
    ShellSums a = shell_integral(w, s, xi, std::ldexp(r, k), std::ldexp(r, k + 1), gamma, Q + 3, n, opt.seed, 2 * k);
    ShellSums b =
        shell_integral(w, s, xi, std::ldexp(r, -k - 1), std::ldexp(r, -k), gamma, Q + 2, n, opt.seed, 2 * k + 1);
    out.ia += a.value;
    va += a.variance;
    out.ib += b.value;
    vb += b.variance;
  }
  // Radial remainders beyond the outermost and inside the innermost shell.
  double Ra = std::ldexp(r, opt.shells), Rb = std::ldexp(r, -opt.shells);
  out.ia += radial * scaled_tail(w, gamma * Ra).value / Ra;
  out.ib += radial * partial_dini(w, gamma * Rb).value;
  out.se_a = std::sqrt(va);
  out.se_b = std::sqrt(vb);
  return out;
}

}  // namespace

EstimateReport dyadic_bounds_check(const Modulus& w, const ModelStructure& s, const GroupPoint& xi, double r,
                                   double gamma, const DyadicOptions& opt) {
  if (!w.dini().finite()) throw std::domain_error("dyadic_bounds_check: modulus is not Dini");
  if (!(r > 0.0) || !(gamma > 0.0)) throw std::invalid_argument("dyadic_bounds_check: r and gamma must be positive");
  EstimateReport rep;
  rep.inequality_id = "dyadic_bounds";
  rep.rhs_form = "A: c*int_{2r}^inf w(gs)/s^2 ds; B: c*int_0^{2r} w(gs)/s ds";
  rep.seed = opt.seed;
  const double rhs_a = scaled_tail(w, 2.0 * gamma * r).value / (2.0 * r);
  const double rhs_b = partial_dini(w, 2.0 * gamma * r).value;
  auto ratio = [](double l, double rr) { return l == 0.0 ? 0.0 : (rr > kRhsFloor ? l / rr : kInf); };
  DyadicValues coarse = dyadic_values(w, s, xi, r, gamma, opt, opt.samples_per_shell);
  DyadicValues fine = dyadic_values(w, s, xi, r, gamma, opt, 2 * opt.samples_per_shell);
  for (const DyadicValues* v : {&coarse, &fine}) {
    if ((v->ia > 0.0 && v->se_a > opt.max_rel_se * v->ia) || (v->ib > 0.0 && v->se_b > opt.max_rel_se * v->ib))
      throw QuadratureError("dyadic_bounds_check: Monte-Carlo standard error above threshold");
  }
  double ca = ratio(fine.ia, rhs_a), cb = ratio(fine.ib, rhs_b);
  double ca0 = ratio(coarse.ia, rhs_a), cb0 = ratio(coarse.ib, rhs_b);
  rep.lhs_samples = {fine.ia, fine.ib};
  rep.rhs_samples = {rhs_a, rhs_b};
  rep.lhs_max = std::max(fine.ia, fine.ib);
  rep.samples = 4 * opt.shells * opt.samples_per_shell;
  rep.c_star = std::max(ca, cb);
  rep.degenerate = rep.lhs_max == 0.0;
  rep.stability = relative_change(rep.c_star, std::max(ca0, cb0));
  rep.details["c_A"] = ca;
  rep.details["c_B"] = cb;
  rep.details["se_A"] = fine.se_a;
  rep.details["se_B"] = fine.se_b;
  rep.details["r"] = r;
  rep.details["gamma"] = gamma;
  rep.finalize();
  return rep;
}

}  // namespace kfp
