#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfplab/parallel.hpp"
#include "kfplab/verify.hpp"

namespace kfp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Level {
  std::vector<std::vector<double>> x;
  std::vector<double> t;
};

// t_k = tau + (T - tau) k / n, k = 1..n, so level n sits inside level 2n.
// `extra` times (switches of the data inside (tau, T]) join every level together
// with a point just before each, so both one-sided values at a jump are seen
// identically on both levels.
Level make_level(const Scenario& sc, int xp, int tp, const std::vector<double>& extra = {}) {
  Level L;
  for (const auto& [a, b] : sc.domain.x) L.x.push_back(linspace(a, b, xp));
  const double tau = sc.domain.t.first, T = sc.domain.t.second;
  for (int k = 1; k <= tp; ++k) L.t.push_back(tau + (T - tau) * k / tp);
  for (double b : extra) {
    if (!(b > tau && b <= T)) continue;
    L.t.push_back(b);
    if (b - 1e-6 * (T - tau) > tau) L.t.push_back(b - 1e-6 * (T - tau));
  }
  std::sort(L.t.begin(), L.t.end());
  L.t.erase(std::unique(L.t.begin(), L.t.end()), L.t.end());
  return L;
}

void check_nested(int coarse, int fine, bool x_axis, const char* field) {
  bool ok = x_axis ? (fine == 2 * coarse - 1) : (fine == 2 * coarse);
  if (coarse < 2 || !ok) throw ConfigError(field, "fine level must refine the coarse level by halving");
}

double domain_diameter(const Scenario& sc) {
  Vec w(sc.structure.dim());
  for (int i = 0; i < w.size(); ++i) w(i) = sc.domain.x[i].second - sc.domain.x[i].first;
  return anisotropic_norm(sc.structure, w);
}

std::vector<double> radii_for(const Scenario& sc, const Level& coarse) {
  SampledField probe{sc.structure, coarse.x, coarse.t, {}};
  return logspace(probe.resolution(), domain_diameter(sc), sc.grid.radii);
}

SampledField sample(const Scenario& sc, const Level& L, const std::function<double(const Vec&, double)>& f) {
  return SampledField::sample(sc.structure, L.x, L.t, f, sc.threads);
}

// Coarse level values read off a nested fine field.
// Coarse level read off a fine field: every other x node, and the times of `coarse_t`.
SampledField subsample(const SampledField& f, const std::vector<double>& coarse_t) {
  SampledField c;
  c.structure = f.structure;
  for (const auto& a : f.x_axes) {
    std::vector<double> v;
    for (std::size_t i = 0; i < a.size(); i += 2) v.push_back(a[i]);
    c.x_axes.push_back(v);
  }
  std::vector<std::size_t> tsel;
  for (std::size_t k = 0; k < f.t_axis.size(); ++k)
    if (std::find(coarse_t.begin(), coarse_t.end(), f.t_axis[k]) != coarse_t.end()) {
      c.t_axis.push_back(f.t_axis[k]);
      tsel.push_back(k);
    }
  if (c.t_axis.size() != coarse_t.size()) throw std::logic_error("subsample: coarse times are not on the fine level");
  const std::size_t nxf = f.x_count(), nxc = c.x_count();
  const int n = static_cast<int>(f.x_axes.size());
  c.values.resize(nxc * c.t_axis.size());
  for (std::size_t tc = 0; tc < c.t_axis.size(); ++tc) {
    std::size_t tf = tsel[tc];
    for (std::size_t xc = 0; xc < nxc; ++xc) {
      std::size_t r = xc, xf = 0, stride = 1;
      for (int d = n - 1; d >= 0; --d) {
        std::size_t m = c.x_axes[d].size();
        xf += 2 * (r % m) * stride;
        r /= m;
        stride *= f.x_axes[d].size();
      }
      c.values[tc * nxc + xc] = f.values[tf * nxf + xf];
    }
  }
  return c;
}

Modulus empirical(const SampledField& f, const std::vector<double>& radii) {
  return empirical_modulus(f, radii, 0.5);
}

// sup|f| + max |f(a) - f(b)| / d(a,b)^alpha over all grid pairs, for several fields at once.
std::vector<double> holder_norms(const ModelStructure& s, const std::vector<GroupPoint>& pts,
                                 const std::vector<std::vector<double>>& fields, double alpha, int threads) {
  const std::size_t n = pts.size(), F = fields.size();
  std::vector<std::vector<double>> per_row(n, std::vector<double>(F, 0.0));
  parallel_for(n, threads, [&](std::size_t i) {
    auto& best = per_row[i];
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = std::pow(quasi_distance(s, pts[i], pts[j]), alpha);
      if (d <= 0.0) continue;
      for (std::size_t f = 0; f < F; ++f) best[f] = std::max(best[f], std::abs(fields[f][i] - fields[f][j]) / d);
    }
  });
  std::vector<double> out(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    double sup = 0.0, semi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sup = std::max(sup, std::abs(fields[f][i]));
      semi = std::max(semi, per_row[i][f]);
    }
    out[f] = sup + semi;
  }
  return out;
}

// Same as holder_norms for fields sampled on the grid of `shape` (t-major).
// E(dt) is shared by each pair of time slices, so a pair costs one norm.
std::vector<double> grid_holder_norms(const ModelStructure& s, const SampledField& shape,
                                      const std::vector<std::vector<double>>& fields, double alpha, int threads) {
  const std::size_t nx = shape.x_count(), nt = shape.t_axis.size(), F = fields.size();
  const int n = s.dim();
  const auto& q = s.exponents();
  Mat X(n, nx);
  for (std::size_t i = 0; i < nx; ++i) X.col(static_cast<Eigen::Index>(i)) = shape.point(i);
  std::vector<std::pair<std::size_t, std::size_t>> slices;
  for (std::size_t a = 0; a < nt; ++a)
    for (std::size_t b = 0; b < nt; ++b) slices.emplace_back(a, b);
  std::vector<std::vector<double>> best(slices.size(), std::vector<double>(F, 0.0));
  parallel_for(slices.size(), threads, [&](std::size_t k) {
    const auto [a, b] = slices[k];
    const double dt = shape.t_axis[a] - shape.t_axis[b];
    const Mat EX = exp_neg_tB(s, dt) * X;  // E(t_a - t_b) x_j
    const double tpart = std::sqrt(std::abs(dt));
    auto& out = best[k];
    for (std::size_t i = 0; i < nx; ++i) {
      // within a slice only i < j, matching the ordered pairs of the generic version
      for (std::size_t j = (a == b ? i + 1 : 0); j < nx; ++j) {
        double d = tpart;
        for (int c = 0; c < n; ++c) {
          double v = std::abs(X(c, static_cast<Eigen::Index>(i)) - EX(c, static_cast<Eigen::Index>(j)));
          d += q[c] == 1 ? v : (q[c] == 3 ? std::cbrt(v) : std::pow(v, 1.0 / q[c]));
        }
        if (d <= 0.0) continue;
        const double inv = alpha == 0.5 ? 1.0 / std::sqrt(d) : std::pow(d, -alpha);
        for (std::size_t f = 0; f < F; ++f) {
          double diff = std::abs(fields[f][a * nx + i] - fields[f][b * nx + j]);
          out[f] = std::max(out[f], diff * inv);
        }
      }
    }
  });
  std::vector<double> res(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    double sup = 0.0, semi = 0.0;
    for (double v : fields[f]) sup = std::max(sup, std::abs(v));
    for (const auto& bk : best) semi = std::max(semi, bk[f]);
    res[f] = sup + semi;
  }
  return res;
}

// Grid supremum of |f| refined by a local search from the best node of each
// time slice, so the value does not hinge on where the grid happens to fall.
double polished_sup(const Scenario& sc, const SampledField& F, const std::function<double(const Vec&, double)>& f,
                    int evaluations) {
  const std::size_t nx = F.x_count(), nt = F.t_axis.size();
  const int n = F.structure.dim();
  Vec lo(n + 1), hi(n + 1);
  for (int d = 0; d < n; ++d) {
    lo(d) = sc.domain.x[d].first;
    hi(d) = sc.domain.x[d].second;
  }
  const double tau = sc.domain.t.first, T = sc.domain.t.second;
  lo(n) = tau + 1e-3 * (T - tau);
  hi(n) = T;
  auto obj = [&](const Vec& v) { return std::abs(f(v.head(n), v(n))); };
  double sup = 0.0;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    std::size_t best = ti * nx;
    for (std::size_t k = ti * nx; k < (ti + 1) * nx; ++k)
      if (std::abs(F.values[k]) > std::abs(F.values[best])) best = k;
    Vec z(n + 1);
    z.head(n) = F.point(best % nx);
    z(n) = F.t_axis[ti];
    auto pr = compass_maximize(obj, z, lo, hi, 0.05, 2e-3, evaluations);
    sup = std::max({sup, std::abs(F.values[best]), pr.value});
  }
  return sup;
}

std::vector<GroupPoint> level_points(const SampledField& f) {
  std::vector<GroupPoint> pts;
  for (double t : f.t_axis)
    for (std::size_t xi = 0; xi < f.x_count(); ++xi) pts.push_back({f.point(xi), t});
  return pts;
}

std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

double dini_norm(const SampledField& f, const Modulus& w) { return f.sup_abs() + w.dini().value; }

Modulus perturbation_modulus(const CoefficientModel& m) {
  return m.perturbation_modulus() ? *m.perturbation_modulus() : Modulus::zero();
}

EstimateReport make_report(const std::string& id, const std::string& form, const Scenario& sc) {
  EstimateReport r;
  r.inequality_id = id;
  r.rhs_form = form;
  r.seed = sc.seed;
  r.tolerance = sc.tolerance;
  return r;
}

void finish(EstimateReport& r, double coarse, double fine) {
  r.c_star = fine;
  r.stability = relative_change(fine, coarse);
  r.details["c_star_coarse"] = coarse;
  trim_samples(r.lhs_samples, r.rhs_samples);
  r.finalize();
}

}  // namespace

// ------------------------------------------------------------------ Curve

Curve::Curve(const std::function<double(double)>& f, double r_min, double r_max, int points) {
  for (double r : logspace(r_min, r_max, points)) {
    double v = f(r);
    if (!std::isfinite(v)) finite_ = false;
    lr_.push_back(std::log(r));
    v_.push_back(std::max(v, 0.0));
  }
}

double Curve::operator()(double r) const {
  if (!finite_) return kInf;
  if (!(r > 0.0) || v_.empty()) return 0.0;
  const double lr = std::log(r);
  if (lr >= lr_.back()) return v_.back();
  if (lr <= lr_.front()) {
    if (v_[0] <= 0.0) return 0.0;
    double p = (v_[1] > 0.0) ? std::max(0.0, (std::log(v_[1]) - std::log(v_[0])) / (lr_[1] - lr_[0])) : 1.0;
    return v_[0] * std::exp(p * (lr - lr_[0]));
  }
  std::size_t k = static_cast<std::size_t>(std::upper_bound(lr_.begin(), lr_.end(), lr) - lr_.begin()) - 1;
  double a = v_[k], b = v_[k + 1], h = (lr - lr_[k]) / (lr_[k + 1] - lr_[k]);
  if (a > 0.0 && b > 0.0) return std::exp((1.0 - h) * std::log(a) + h * std::log(b));
  return (1.0 - h) * a + h * b;
}

// ------------------------------------------------------------ space check

EstimateReport schauder_space_check(const Scenario& sc) {
  if (sc.manufactured.empty()) throw ConfigError("manufactured", "schauder_space_check needs manufactured solutions");
  const GridLevels& g = sc.grid;
  check_nested(g.x_coarse, g.x_fine, true, "grid.x_points");
  check_nested(g.t_coarse, g.t_fine, false, "grid.t_points");
  const ModelStructure& st = sc.structure;
  const CoefficientModel& model = sc.coefficients;
  const int q = st.diffusion_rank();
  const Modulus wa = perturbation_modulus(model);
  const double entries = static_cast<double>(q * q);
  Level coarse = make_level(sc, g.x_coarse, g.t_coarse), fine = make_level(sc, g.x_fine, g.t_fine);
  const std::vector<double> radii = radii_for(sc, coarse);

  EstimateReport rep = make_report(
      "schauder_space", "(i) c(|Lu|_D + |u|_inf); (ii) c(M_Lu(cr) + (M_a(cr) + r^alpha)(|Lu|_D + |u|_inf))", sc);
  double c_level[2] = {0.0, 0.0};
  bool degenerate = true;
  for (int lv = 0; lv < 2; ++lv) {
    const Level& L = lv == 0 ? coarse : fine;
    for (const ManufacturedSolution& u : sc.manufactured) {
      SampledField fu = sample(sc, L, [&](const Vec& x, double t) { return u.u(x, t); });
      SampledField fLu = sample(sc, L, [&](const Vec& x, double t) { return u.Lu(model, x, t); });
      SampledField fY = sample(sc, L, [&](const Vec& x, double t) { return u.Yu(st, x, t); });
      std::vector<SampledField> fd1, fd2;
      for (int i = 0; i < q; ++i) fd1.push_back(sample(sc, L, [&](const Vec& x, double t) { return u.du(x, t, i); }));
      for (int h = 0; h < q; ++h)
        for (int k = 0; k < q; ++k)
          fd2.push_back(sample(sc, L, [&](const Vec& x, double t) { return u.d2u(x, t, h, k); }));

      double lhs_i = fY.sup_abs();
      for (const auto& f : fd2) lhs_i += f.sup_abs();
      std::vector<std::vector<double>> hf{fu.values};
      for (const auto& f : fd1) hf.push_back(f.values);
      for (double v : grid_holder_norms(st, fu, hf, sc.alpha, sc.threads)) lhs_i += v;

      Modulus wLu = empirical(fLu, radii);
      const double S = dini_norm(fLu, wLu) + fu.sup_abs();
      double c_i = S > kRhsFloor ? lhs_i / S : 0.0;

      std::vector<double> lhs_ii = empirical_modulus_values(fY, radii);
      for (const auto& f : fd2) lhs_ii = add(lhs_ii, empirical_modulus_values(f, radii));
      auto rhs = [&](double c) {
        std::vector<double> out(radii.size());
        for (std::size_t k = 0; k < radii.size(); ++k) {
          double r = radii[k];
          double Ma = model.has_perturbation() ? entries * m_transform(wa, c * r) : 0.0;
          out[k] = m_transform(wLu, c * r) + (Ma + std::pow(r, sc.alpha)) * S;
        }
        return out;
      };
      TwoLevelFit fit = fit_two_level(lhs_ii, rhs);
      if (lhs_i > 0.0 || !fit.degenerate) degenerate = false;
      double c = std::max(c_i, fit.c_star);
      if (c >= c_level[lv]) {
        c_level[lv] = c;
        if (lv == 1) {
          rep.details["c_part_i"] = c_i;
          rep.details["c_part_ii"] = fit.c_star;
          rep.details["inner_scale"] = fit.inner;
          rep.details["lhs_i"] = lhs_i;
          rep.details["rhs_i"] = S;
          rep.lhs_samples = lhs_ii;
          rep.rhs_samples = rhs(fit.inner == 0.0 ? 1.0 : fit.inner);
        }
      }
      rep.lhs_max = std::max(rep.lhs_max, lhs_i);
    }
  }
  rep.degenerate = degenerate;
  rep.samples = sc.manufactured.size();
  rep.provenance["grid_coarse"] = grid_hash("space:" + std::to_string(g.x_coarse) + "x" + std::to_string(g.t_coarse));
  rep.provenance["grid_fine"] = grid_hash("space:" + std::to_string(g.x_fine) + "x" + std::to_string(g.t_fine));
  finish(rep, c_level[0], c_level[1]);
  return rep;
}

// ------------------------------------------------------------- time check

EstimateReport schauder_time_check(const Scenario& sc) {
  if (sc.manufactured.empty()) throw ConfigError("manufactured", "schauder_time_check needs manufactured solutions");
  const GridLevels& g = sc.grid;
  check_nested(g.x_coarse, g.x_fine, true, "grid.x_points");
  check_nested(g.t_coarse, g.t_fine, false, "grid.t_points");
  const ModelStructure& st = sc.structure;
  const CoefficientModel& model = sc.coefficients;
  const int n = st.dim(), q = st.diffusion_rank(), qN = st.max_exponent();
  const Modulus wa = perturbation_modulus(model);
  const double entries = static_cast<double>(q * q);
  const bool has_a = model.has_perturbation();
  Level coarse = make_level(sc, g.x_coarse, g.t_coarse), fine = make_level(sc, g.x_fine, g.t_fine);
  const std::vector<double> radii = radii_for(sc, coarse);
  const double tau = sc.domain.t.first, T = sc.domain.t.second;

  EstimateReport rep = make_report("schauder_time",
                                   "c{M_u(cr) + N_Lu(cr) + (N_a(cr) + r^a)S + U_u(c sqrt dt) + V_Lu(c sqrt dt)"
                                   " + (V_a(c sqrt dt) + dt^(a/2))S}",
                                   sc);
  if (has_a && !log_dini_integral(wa).finite()) {
    rep.details["coefficients_log_dini"] = 0.0;
    rep.c_star = kInf;
    rep.stability = kInf;
    rep.finalize();
    return rep;
  }
  const double r_lo = 1e-7, r_hi = 1e3;
  const int pts = 40;
  Curve Na, Va;
  if (has_a) {
    Na = Curve([&](double r) { return entries * n_transform(wa, r); }, r_lo, r_hi, pts);
    Va = Curve([&](double r) { return entries * v_mu_transform(wa, sc.mu, r, st); }, r_lo, r_hi, pts);
  }
  // pairs: half spread over the domain, half close together
  const std::size_t total = 2 * sc.samples;
  struct Pair {
    GroupPoint a, b;
  };
  std::vector<Pair> pairs(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto rng = stream_rng(sc.seed, "schauder_time", i);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Pair p{{Vec(n), 0.0}, {Vec(n), 0.0}};
    double spread = (i % 2 == 0) ? 1.0 : std::pow(10.0, -3.0 * U(rng));
    for (int d = 0; d < n; ++d) {
      auto [lo, hi] = sc.domain.x[d];
      p.a.x(d) = lo + (hi - lo) * U(rng);
      p.b.x(d) = std::clamp(p.a.x(d) + spread * (hi - lo) * (2.0 * U(rng) - 1.0), lo, hi);
    }
    p.a.t = tau + (T - tau) * U(rng);
    p.b.t = std::clamp(p.a.t + spread * (T - tau) * (2.0 * U(rng) - 1.0), tau, T);
    pairs[i] = p;
  }

  double c_level[2] = {0.0, 0.0};
  bool degenerate = true;
  for (int lv = 0; lv < 2; ++lv) {
    const Level& L = lv == 0 ? coarse : fine;
    const std::size_t m = lv == 0 ? sc.samples : total;
    for (const ManufacturedSolution& u : sc.manufactured) {
      SampledField fu = sample(sc, L, [&](const Vec& x, double t) { return u.u(x, t); });
      SampledField fLu = sample(sc, L, [&](const Vec& x, double t) { return u.Lu(model, x, t); });
      Modulus wu = empirical(fu, radii), wLu = empirical(fLu, radii);
      const double S = dini_norm(fLu, wLu) + fu.sup_abs();
      Curve Mu([&](double r) { return m_transform(wu, r); }, r_lo, r_hi, pts);
      Curve NLu([&](double r) { return n_transform(wLu, r); }, r_lo, r_hi, pts);
      Curve Uu([&](double r) { return u_mu_transform(wu, sc.mu, r, st); }, r_lo, r_hi, pts);
      Curve VLu([&](double r) { return v_mu_transform(wLu, sc.mu, r, st); }, r_lo, r_hi, pts);
      std::vector<double> lhs(m), rr(m), rho(m), dt(m);
      for (std::size_t i = 0; i < m; ++i) {
        const Pair& p = pairs[i];
        double worst = 0.0;
        for (int h = 0; h < q; ++h)
          for (int k = 0; k < q; ++k)
            worst = std::max(worst, std::abs(u.d2u(p.a.x, p.a.t, h, k) - u.d2u(p.b.x, p.b.t, h, k)));
        lhs[i] = worst;
        dt[i] = std::abs(p.a.t - p.b.t);
        rr[i] = quasi_distance(st, p.a, p.b) + std::pow(dt[i], 1.0 / qN);
        rho[i] = std::sqrt(dt[i]);
      }
      auto rhs = [&](double c) {
        std::vector<double> out(m);
        for (std::size_t i = 0; i < m; ++i) {
          double r = rr[i], s = rho[i];
          double Naa = has_a ? Na(c * r) : 0.0, Vaa = has_a ? Va(c * s) : 0.0;
          out[i] = Mu(c * r) + NLu(c * r) + (Naa + std::pow(r, sc.alpha)) * S + Uu(c * s) + VLu(c * s) +
                   (Vaa + std::pow(dt[i], 0.5 * sc.alpha)) * S;
        }
        return out;
      };
      TwoLevelFit fit = fit_two_level(lhs, rhs);
      if (!fit.degenerate) degenerate = false;
      if (fit.c_star >= c_level[lv]) {
        c_level[lv] = fit.c_star;
        if (lv == 1) {
          rep.details["inner_scale"] = fit.inner;
          rep.details["outer"] = fit.outer;
          rep.lhs_samples = lhs;
          rep.rhs_samples = rhs(fit.inner == 0.0 ? 1.0 : fit.inner);
          // same-t pairs only, for comparison with the space check
          std::vector<double> l0, r0;
          for (std::size_t i = 0; i < m; ++i)
            if (dt[i] == 0.0) {
              l0.push_back(lhs[i]);
              r0.push_back(rep.rhs_samples[i]);
            }
          rep.details["same_t_pairs"] = static_cast<double>(l0.size());
        }
      }
      for (double v : lhs) rep.lhs_max = std::max(rep.lhs_max, v);
    }
  }
  rep.degenerate = degenerate;
  rep.samples = total;
  rep.provenance["pairs"] = grid_hash("time_pairs:" + std::to_string(sc.seed) + ":" + std::to_string(total));
  finish(rep, c_level[0], c_level[1]);
  return rep;
}

// ----------------------------------------------------- model operator checks

std::vector<EstimateReport> model_operator_checks(const Scenario& sc) {
  if (sc.coefficients.has_perturbation())
    throw ConfigError("coefficients", "model_operator_checks needs coefficients depending on t only");
  if (sc.sources.empty()) throw ConfigError("sources", "model_operator_checks needs at least one source");
  const GridLevels& g = sc.grid;
  check_nested(g.tij_x_coarse, g.tij_x_fine, true, "grid.tij_x_points");
  check_nested(g.tij_t_coarse, g.tij_t_fine, false, "grid.tij_t_points");
  const ModelStructure& st = sc.structure;
  const CoefficientModel& model = sc.coefficients;
  const int q = st.diffusion_rank(), qN = st.max_exponent();
  const double span = sc.domain.t.second - sc.domain.t.first;

  std::vector<EstimateReport> out;
  for (const SourceSpec& src : sc.sources) {
    std::vector<double> switches = src.breakpoints;
    switches.insert(switches.end(), model.breakpoints().begin(), model.breakpoints().end());
    Level coarse = make_level(sc, g.tij_x_coarse, g.tij_t_coarse, switches);
    Level fine = make_level(sc, g.tij_x_fine, g.tij_t_fine, switches);
    const std::vector<double> radii = radii_for(sc, coarse);
    if (!src.modulus.dini().finite()) throw ConfigError("sources", "source '" + src.name + "' is not Dini");
    TijOptions opt = sc.tij;
    opt.allow_overrun = true;
    // T_ij fields on the fine level; the coarse level is read off by nesting
    std::vector<std::pair<int, int>> idx;
    for (int i = 0; i < q; ++i)
      for (int j = i; j < q; ++j) idx.emplace_back(i, j);
    std::vector<SampledField> Tf;
    for (auto [i, j] : idx)
      Tf.push_back(sample(sc, fine, [&, i = i, j = j](const Vec& x, double t) {
        return t_ij(model, src, i, j, x, t, opt).value;
      }));
    SampledField gf = sample(sc, fine, src.g);
    SampledField Yf = gf;
    for (std::size_t k = 0; k < Yf.values.size(); ++k) {
      double t = Yf.t_axis[k / Yf.x_count()];
      Mat a = model.a0(t);
      double v = gf.values[k];
      for (std::size_t m = 0; m < idx.size(); ++m) {
        auto [i, j] = idx[m];
        v -= (i == j ? 1.0 : 2.0) * a(i, j) * Tf[m].values[k];
      }
      Yf.values[k] = v;
    }
    const double U = u_mu_transform(src.modulus, sc.mu, std::sqrt(span), st);
    Curve M([&](double r) { return m_transform(src.modulus, r); }, 1e-7, 1e3, 40);
    Curve Ug([&](double r) { return u_mu_transform(src.modulus, sc.mu, r, st); }, 1e-7, 1e3, 40);
    const std::string tag = "[" + src.name + "]";

    auto T_at = [&](std::size_t m, const Vec& x, double t) {
      return t_ij(model, src, idx[m].first, idx[m].second, x, t, opt).value;
    };
    auto Y_at = [&](const Vec& x, double t) {
      Mat a = model.a0(t);
      double v = src.g(x, t);
      for (std::size_t m = 0; m < idx.size(); ++m)
        v -= (idx[m].first == idx[m].second ? 1.0 : 2.0) * a(idx[m].first, idx[m].second) * T_at(m, x, t);
      return v;
    };
    constexpr int kPolish = 40;
    auto sum_sup = [&](const std::vector<SampledField>& F) {
      double v = 0.0;
      for (std::size_t m = 0; m < F.size(); ++m) {
        double sup = polished_sup(sc, F[m], [&](const Vec& x, double t) { return T_at(m, x, t); }, kPolish);
        v += (idx[m].first == idx[m].second ? 1.0 : 2.0) * sup;
      }
      return v;
    };
    auto sum_modulus = [&](const std::vector<SampledField>& F) {
      std::vector<double> w(radii.size(), 0.0);
      for (std::size_t m = 0; m < F.size(); ++m) {
        double mult = idx[m].first == idx[m].second ? 1.0 : 2.0;
        auto v = empirical_modulus_values(F[m], radii);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] += mult * v[k];
      }
      return w;
    };
    std::vector<SampledField> Tc;
    for (const auto& f : Tf) Tc.push_back(subsample(f, coarse.t));
    SampledField Yc = subsample(Yf, coarse.t), gc = subsample(gf, coarse.t);
    auto M_rhs = [&](double c) {
      std::vector<double> v(radii.size());
      for (std::size_t k = 0; k < radii.size(); ++k) v[k] = M(c * radii[k]);
      return v;
    };

    {  // sup of the second derivatives
      EstimateReport r = make_report("tij_sup" + tag, "c*U_g(sqrt(T-tau))", sc);
      double lf = sum_sup(Tf), lc = sum_sup(Tc);
      r.lhs_max = lf;
      r.details["U"] = U;
      r.degenerate = lf == 0.0;
      r.lhs_samples = {lf};
      r.rhs_samples = {U};
      finish(r, U > kRhsFloor ? lc / U : 0.0, U > kRhsFloor ? lf / U : 0.0);
      out.push_back(r);
    }
    {  // modulus of the second derivatives
      EstimateReport r = make_report("tij_modulus" + tag, "c*M_g(c r)", sc);
      auto lf = sum_modulus(Tf), lc = sum_modulus(Tc);
      TwoLevelFit ff = fit_two_level(lf, M_rhs), fc = fit_two_level(lc, M_rhs);
      r.lhs_max = *std::max_element(lf.begin(), lf.end());
      r.degenerate = ff.degenerate;
      r.details["inner_scale"] = ff.inner;
      r.lhs_samples = lf;
      r.rhs_samples = M_rhs(ff.inner == 0.0 ? 1.0 : ff.inner);
      finish(r, fc.c_star, ff.c_star);
      out.push_back(r);
    }
    {  // sup of Yu
      EstimateReport r = make_report("yu_sup" + tag, "c*(|g|_inf + U_g(sqrt(T-tau)))", sc);
      double lf = polished_sup(sc, Yf, Y_at, kPolish), lc = polished_sup(sc, Yc, Y_at, kPolish);
      double rf = polished_sup(sc, gf, src.g, 400) + U, rc = polished_sup(sc, gc, src.g, 400) + U;
      r.lhs_max = lf;
      r.degenerate = lf == 0.0;
      r.lhs_samples = {lf};
      r.rhs_samples = {rf};
      finish(r, rc > kRhsFloor ? lc / rc : 0.0, rf > kRhsFloor ? lf / rf : 0.0);
      out.push_back(r);
    }
    {  // modulus of Yu
      EstimateReport r = make_report("yu_modulus" + tag, "c*M_g(c r)", sc);
      auto lf = empirical_modulus_values(Yf, radii), lc = empirical_modulus_values(Yc, radii);
      TwoLevelFit ff = fit_two_level(lf, M_rhs), fc = fit_two_level(lc, M_rhs);
      r.lhs_max = *std::max_element(lf.begin(), lf.end());
      r.degenerate = ff.degenerate;
      r.details["inner_scale"] = ff.inner;
      r.lhs_samples = lf;
      r.rhs_samples = M_rhs(ff.inner == 0.0 ? 1.0 : ff.inner);
      finish(r, fc.c_star, ff.c_star);
      out.push_back(r);
    }
    {  // space-time pairs
      EstimateReport r = make_report("tij_spacetime" + tag, "c*{M_g(c(d + dt^(1/qN))) + U_g(sqrt dt)}", sc);
      double c_lv[2];
      for (int lv = 0; lv < 2; ++lv) {
        const std::vector<SampledField>& F = lv == 0 ? Tc : Tf;
        auto pts = level_points(F[0]);
        std::vector<double> lhs, rr, us;
        for (std::size_t a = 0; a < pts.size(); ++a)
          for (std::size_t b = a + 1; b < pts.size(); ++b) {
            double worst = 0.0;
            for (const auto& f : F) worst = std::max(worst, std::abs(f.values[a] - f.values[b]));
            double dt = std::abs(pts[a].t - pts[b].t);
            lhs.push_back(worst);
            rr.push_back(quasi_distance(st, pts[a], pts[b]) + std::pow(dt, 1.0 / qN));
            us.push_back(Ug(std::sqrt(dt)));
          }
        auto rhs = [&](double c) {
          std::vector<double> v(lhs.size());
          for (std::size_t k = 0; k < v.size(); ++k) v[k] = M(c * rr[k]) + us[k];
          return v;
        };
        TwoLevelFit fit = fit_two_level(lhs, rhs);
        c_lv[lv] = fit.c_star;
        if (lv == 1) {
          r.degenerate = fit.degenerate;
          r.details["inner_scale"] = fit.inner;
          r.lhs_max = lhs.empty() ? 0.0 : *std::max_element(lhs.begin(), lhs.end());
          r.samples = lhs.size();
          r.lhs_samples = lhs;
          r.rhs_samples = rhs(fit.inner == 0.0 ? 1.0 : fit.inner);
        }
      }
      finish(r, c_lv[0], c_lv[1]);
      out.push_back(r);
    }
  }
  for (auto& r : out)
    r.provenance["grid"] = grid_hash("tij:" + std::to_string(g.tij_x_fine) + "x" + std::to_string(g.tij_t_fine));
  return out;
}

// --------------------------------------------------------- interpolation

EstimateReport interpolation_check(const Scenario& sc, const std::vector<double>& epsilons) {
  if (epsilons.empty()) throw ConfigError("epsilons", "empty list");
  for (double e : epsilons)
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("epsilons", "each epsilon must lie in (0,1)");
  if (sc.manufactured.empty()) throw ConfigError("manufactured", "interpolation_check needs manufactured solutions");
  const ModelStructure& st = sc.structure;
  const int n = st.dim(), q = st.diffusion_rank();
  const double radius = sc.check_options.value("interpolation_radius", 0.5);
  const std::size_t balls = std::max<std::size_t>(8, sc.samples / 100);
  const int per_ball = 48;
  const double tau = sc.domain.t.first, T = sc.domain.t.second;
  const std::vector<double> gammas{1.25, 1.5, 2.0, 3.0, 4.0};
  const double eps_min = *std::min_element(epsilons.begin(), epsilons.end());

  struct Ball {
    double lhs = 0.0, D = 0.0, U = 0.0;
  };
  EstimateReport rep = make_report("interpolation", "eps*(sum|d2u| + |Yu|)_{B4r} + c eps^{-gamma} |u|_{B4r}", sc);
  double c_level[2] = {0.0, 0.0};
  double gamma_fine = gammas.front();
  bool infeasible = false;
  for (const ManufacturedSolution& u : sc.manufactured) {
    std::vector<Ball> data(2 * balls);
    parallel_for(2 * balls, sc.threads, [&](std::size_t b) {
      auto rng = stream_rng(sc.seed, "interpolation", b);
      std::uniform_real_distribution<double> U(0.0, 1.0);
      GroupPoint xi{Vec(n), tau + (T - tau) * U(rng)};
      for (int d = 0; d < n; ++d) xi.x(d) = sc.domain.x[d].first + (sc.domain.x[d].second - sc.domain.x[d].first) * U(rng);
      auto draw = [&](double rad) {
        std::vector<GroupPoint> pts{xi};
        int guard = 0;
        while (static_cast<int>(pts.size()) < per_ball && guard++ < 200 * per_ball) {
          GroupPoint z{Vec(n), 2.0 * U(rng) - 1.0};
          for (int d = 0; d < n; ++d) z.x(d) = 2.0 * U(rng) - 1.0;
          GroupPoint eta = group_compose(st, dilate(st, rad, z), xi);
          if (eta.t > T || quasi_distance(st, xi, eta) >= rad) continue;
          pts.push_back(eta);
        }
        return pts;
      };
      auto small = draw(radius), big = draw(4.0 * radius);
      Ball out;
      std::vector<std::vector<double>> f(1 + q, std::vector<double>(small.size()));
      for (std::size_t k = 0; k < small.size(); ++k) {
        f[0][k] = u.u(small[k].x, small[k].t);
        for (int h = 0; h < q; ++h) f[1 + h][k] = u.du(small[k].x, small[k].t, h);
      }
      for (double v : holder_norms(st, small, f, sc.alpha, 1)) out.lhs += v;
      std::vector<double> d2(q * q, 0.0);
      double yu = 0.0;
      for (const auto& p : big) {
        for (int h = 0; h < q; ++h)
          for (int k = 0; k < q; ++k) d2[h * q + k] = std::max(d2[h * q + k], std::abs(u.d2u(p.x, p.t, h, k)));
        yu = std::max(yu, std::abs(u.Yu(st, p.x, p.t)));
        out.U = std::max(out.U, std::abs(u.u(p.x, p.t)));
      }
      for (double v : d2) out.D += v;
      out.D += yu;
      data[b] = out;
    });
    for (int lv = 0; lv < 2; ++lv) {
      const std::size_t m = lv == 0 ? balls : 2 * balls;
      // minimal c for each gamma; the pair minimising the worst bound c eps_min^-gamma wins
      double best = kInf, best_c = kInf, best_g = gammas.front();
      for (double gm : gammas) {
        double c = 0.0;
        for (std::size_t b = 0; b < m; ++b)
          for (double e : epsilons) {
            double excess = data[b].lhs - e * data[b].D;
            if (excess <= 0.0) continue;
            c = data[b].U > 0.0 ? std::max(c, excess * std::pow(e, gm) / data[b].U) : kInf;
          }
        double worst = c * std::pow(eps_min, -gm);
        if (worst < best || (c == 0.0 && best_c != 0.0)) {
          best = worst;
          best_c = c;
          best_g = gm;
        }
      }
      if (!std::isfinite(best_c)) infeasible = true;
      if (best_c >= c_level[lv]) {
        c_level[lv] = best_c;
        if (lv == 1) gamma_fine = best_g;
      }
    }
    for (std::size_t b = 0; b < 2 * balls; ++b) {
      rep.lhs_samples.push_back(data[b].lhs);
      rep.rhs_samples.push_back(eps_min * data[b].D + data[b].U);
      rep.lhs_max = std::max(rep.lhs_max, data[b].lhs);
    }
  }
  rep.details["gamma"] = gamma_fine;
  rep.details["radius"] = radius;
  rep.details["infeasible"] = infeasible ? 1.0 : 0.0;
  rep.degenerate = rep.lhs_max == 0.0;
  rep.samples = 2 * balls;
  finish(rep, c_level[0], c_level[1]);
  return rep;
}

}  // namespace kfp
