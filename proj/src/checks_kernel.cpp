#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "kfplab/kernel.hpp"
#include "kfplab/parallel.hpp"
#include "kfplab/quadrature.hpp"

namespace kfp {

namespace {

std::vector<std::pair<double, double>> box_or_default(const std::vector<std::pair<double, double>>& b, int n) {
  if (!b.empty()) {
    if (static_cast<int>(b.size()) != n) throw ConfigError("x_box", "box dimension does not match N");
    return b;
  }
  return std::vector<std::pair<double, double>>(n, {-1.0, 1.0});
}

// Deviation-style report: c_star is the deviation itself and the band is the threshold.
EstimateReport deviation_report(const std::string& id, double deviation, double threshold) {
  EstimateReport r;
  r.inequality_id = id;
  r.rhs_form = "deviation <= tolerance";
  r.lhs_max = deviation;
  r.c_star = deviation;
  r.stability = deviation;
  r.tolerance = threshold;
  r.finalize();
  return r;
}

struct KernelSample {
  Vec x, y;
  double t = 0.0, s = 0.0;
};

KernelSample draw_pair(const std::vector<std::pair<double, double>>& box, std::pair<double, double> tr,
                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = static_cast<int>(box.size());
  KernelSample k{Vec(n), Vec(n), 0.0, 0.0};
  for (int i = 0; i < n; ++i) {
    k.x(i) = box[i].first + (box[i].second - box[i].first) * u(rng);
    k.y(i) = box[i].first + (box[i].second - box[i].first) * u(rng);
  }
  double span = tr.second - tr.first;
  double a = tr.first + span * u(rng), b = tr.first + span * u(rng);
  k.t = std::max(a, b);
  k.s = std::min(a, b);
  if (k.t - k.s < 1e-3 * span) k.t = k.s + 1e-3 * span;
  return k;
}

}  // namespace

EstimateReport gamma_normalization_check(const CoefficientModel& model, const Vec& x, double t, double s,
                                         const QuadratureSpec& spec) {
  KernelWorkspace ws(model, t, s);
  const int n = static_cast<int>(x.size());
  const Vec y0 = ws.E_st() * x;
  const Mat EL = 2.0 * ws.E_st() * ws.L();
  const double jac = std::ldexp(1.0, n) * std::sqrt(ws.det_C());
  auto eval = [&](int order) {
    const TensorRule& rule = tensor_gauss_hermite(n, order);
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < rule.points.rows(); ++i) {
      Vec w = rule.points.row(i).transpose();
      Vec y = y0 - EL * w;
      acc.add(rule.weights[static_cast<std::size_t>(i)] * std::exp(w.squaredNorm()) * ws.gamma(x, y));
    }
    return jac * acc.value();
  };
  double a = eval(spec.order), b = eval(2 * spec.order);
  EstimateReport r = deviation_report("gamma_normalization", std::abs(b - 1.0), 1e-8);
  r.details["integral"] = b;
  r.details["order_change"] = std::abs(b - a);
  r.details["t"] = t;
  r.details["s"] = s;
  return r;
}

EstimateReport chapman_kolmogorov_check(const CoefficientModel& model, const Vec& x, double t, double r,
                                        const Vec& y, double s, const QuadratureSpec& spec) {
  if (!(s < r && r < t)) throw std::invalid_argument("chapman_kolmogorov_check: requires s < r < t");
  if (r - s < 1e-6 * (t - s)) throw std::invalid_argument("chapman_kolmogorov_check: r too close to s");
  KernelWorkspace outer(model, t, r), inner(model, r, s), full(model, t, s);
  // whiten against the narrower factor; the other one is the smooth integrand
  auto over_outer = [&] { return integrate_against_gamma(outer, x, [&](const Vec& z) { return inner.gamma(z, y); }, spec); };
  auto over_inner = [&] {
    return integrate_against_gamma_forward(inner, y, [&](const Vec& z) { return outer.gamma(x, z); }, spec);
  };
  const bool inner_first = inner.det_C() < outer.det_C();
  WhitenedResult I;
  try {
    I = inner_first ? over_inner() : over_outer();
  } catch (const QuadratureError&) {
    I = inner_first ? over_outer() : over_inner();
  }
  double g = full.gamma(x, y);
  double dev = std::abs(I.value - g) / g;
  EstimateReport rep = deviation_report("chapman_kolmogorov", dev, 1e-6);
  rep.details["convolution"] = I.value;
  rep.details["gamma"] = g;
  rep.details["order"] = I.order;
  rep.details["quadrature_change"] = I.error;
  return rep;
}

EstimateReport gaussian_bound_check(const CoefficientModel& model, const MultiIndex& alpha1,
                                    const MultiIndex& alpha2, const SampleSpec& spec) {
  const ModelStructure& st = model.structure();
  const int n = st.dim(), q = st.diffusion_rank();
  const auto box = box_or_default(spec.x_box, n);
  const int w = weighted_order(st, alpha1, alpha2);
  const int Q = st.homogeneous_dimension();
  std::vector<double> scales;
  for (int j = -2; j <= 6; ++j) scales.push_back(std::ldexp(1.0, j));
  std::vector<CoefficientModel> majorants;
  for (double a : scales) majorants.push_back(CoefficientModel::constant(st, a * Mat::Identity(q, q), 0.0));
  const std::size_t total = 2 * spec.count;
  const double min_gap = 1e-3 * (spec.t_range.second - spec.t_range.first);
  std::vector<KernelSample> draws(total);
  std::vector<double> lhs(total);
  // form f < scales.size() is the Gaussian majorant with that scale, the last one the distance form
  const std::size_t forms = scales.size() + 1;
  auto rhs_of = [&](std::size_t f, const KernelSample& k) {
    if (f == scales.size()) return std::pow(quasi_distance(st, {k.x, k.t}, {k.y, k.s}), -(Q + w));
    return std::pow(k.t - k.s, -0.5 * w) * KernelWorkspace(majorants[f], k.t, k.s).gamma(k.x, k.y);
  };
  auto lhs_of = [&](const KernelSample& k) {
    KernelWorkspace ws(model, k.t, k.s);
    return std::abs(ws.derivative(k.x, k.y, derivative_directions(ws, alpha1, alpha2)));
  };
  std::vector<std::vector<double>> rhs(forms, std::vector<double>(total));
  parallel_for(total, spec.threads, [&](std::size_t i) {
    auto rng = stream_rng(spec.seed, "gaussian_bound", i);
    draws[i] = draw_pair(box, spec.t_range, rng);
    lhs[i] = lhs_of(draws[i]);
    for (std::size_t f = 0; f < forms; ++f) rhs[f][i] = rhs_of(f, draws[i]);
  });
  // sample suprema are polished by a local search from the best few draws
  Vec lo(2 * n + 2), hi(2 * n + 2);
  for (int i = 0; i < n; ++i) {
    lo(i) = lo(n + i) = box[i].first;
    hi(i) = hi(n + i) = box[i].second;
  }
  lo(2 * n) = lo(2 * n + 1) = spec.t_range.first;
  hi(2 * n) = hi(2 * n + 1) = spec.t_range.second;
  constexpr std::size_t kStarts = 8;
  auto level_sup = [&](std::size_t m) {
    std::vector<double> best(forms * kStarts, 0.0);
    parallel_for(forms * kStarts, spec.threads, [&](std::size_t job) {
      const std::size_t f = job / kStarts, rank = job % kStarts;
      std::vector<std::size_t> idx(m);
      std::iota(idx.begin(), idx.end(), 0);
      auto ratio = [&](std::size_t i) { return rhs[f][i] > kRhsFloor ? lhs[i] / rhs[f][i] : 0.0; };
      std::partial_sort(idx.begin(), idx.begin() + std::min(m, kStarts), idx.end(),
                        [&](std::size_t a, std::size_t b) { return ratio(a) > ratio(b) || (ratio(a) == ratio(b) && a < b); });
      if (rank >= m) return;
      const KernelSample& k0 = draws[idx[rank]];
      Vec z(2 * n + 2);
      z << k0.x, k0.y, k0.t, k0.s;
      auto obj = [&](const Vec& v) {
        KernelSample k{v.head(n), v.segment(n, n), v(2 * n), v(2 * n + 1)};
        if (k.t - k.s < min_gap) return 0.0;
        double r = rhs_of(f, k);
        return r > kRhsFloor ? lhs_of(k) / r : 0.0;
      };
      best[job] = std::max(ratio(idx[rank]), compass_maximize(obj, z, lo, hi, 0.05, 1e-6, 2000).value);
    });
    std::vector<double> out(forms, 0.0);
    for (std::size_t j = 0; j < best.size(); ++j) out[j / kStarts] = std::max(out[j / kStarts], best[j]);
    return out;
  };
  auto fit = [&](std::size_t m, double& best_scale, double& cg, double& cd) {
    std::vector<double> sup = level_sup(m);
    cd = sup.back();
    cg = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < scales.size(); ++a) {
      if (sup[a] < cg) {
        cg = sup[a];
        best_scale = scales[a];
      }
    }
    return std::max(cg, cd);
  };
  double s0, s1, cg0, cd0, cg1, cd1;
  double coarse = fit(spec.count, s0, cg0, cd0);
  double fine = fit(total, s1, cg1, cd1);
  EstimateReport rep;
  std::ostringstream id;
  id << "gaussian_bound";
  for (int a : alpha1) id << "_" << a;
  id << "_y";
  for (int a : alpha2) id << "_" << a;
  rep.inequality_id = id.str();
  rep.rhs_form = "c*(t-s)^{-w/2}*Gamma_scale and c*d^{-Q-w}";
  rep.seed = spec.seed;
  rep.samples = total;
  rep.lhs_max = *std::max_element(lhs.begin(), lhs.end());
  rep.c_star = fine;
  rep.stability = relative_change(fine, coarse);
  rep.details["c_gaussian"] = cg1;
  rep.details["c_distance"] = cd1;
  rep.details["best_scale"] = s1;
  rep.details["weighted_order"] = w;
  rep.lhs_samples = lhs;
  rep.rhs_samples = rhs.back();
  trim_samples(rep.lhs_samples, rep.rhs_samples);
  rep.finalize();
  return rep;
}

bool separation_ok(const ModelStructure& s, const GroupPoint& xi1, const GroupPoint& xi2, const GroupPoint& eta,
                   double kappa) {
  double d12 = quasi_distance(s, xi1, xi2);
  return d12 > 0.0 && quasi_distance(s, xi1, eta) >= 4.0 * kappa * d12;
}

EstimateReport mean_value_check(const CoefficientModel& model, const MultiIndex& alpha, const SampleSpec& spec) {
  const ModelStructure& st = model.structure();
  const int n = st.dim(), Q = st.homogeneous_dimension();
  const auto box = box_or_default(spec.x_box, n);
  Box gbox{box, spec.t_range};
  const double kappa = estimate_structural_constants(st, 20000, spec.seed, gbox).kappa;
  MultiIndex a1 = alpha.empty() ? MultiIndex(n, 0) : alpha;
  const int w = weighted_order(st, a1, {});
  const std::size_t total = 2 * spec.count;
  const double min_gap = 1e-3 * (spec.t_range.second - spec.t_range.first);
  // z = [x1, t1, y, s, step_x, step_t, log lambda]
  const int dimz = 3 * n + 4;
  auto D = [&](const GroupPoint& xi, const GroupPoint& eta) {
    if (!(xi.t > eta.t)) return 0.0;
    KernelWorkspace ws(model, xi.t, eta.t);
    return ws.derivative(xi.x, eta.x, derivative_directions(ws, a1, {}));
  };
  // lhs and rhs at z; rhs = 0 when the separation condition fails
  auto evaluate = [&](const Vec& z, double& l, double& r) {
    GroupPoint xi1{z.head(n), z(n)}, eta{z.segment(n + 1, n), z(2 * n + 1)};
    GroupPoint step{z.segment(2 * n + 2, n), z(3 * n + 2)};
    GroupPoint xi2 = group_compose(st, dilate(st, std::exp(z(3 * n + 3)), step), xi1);
    l = r = 0.0;
    if (xi1.t - eta.t < min_gap || !separation_ok(st, xi1, xi2, eta, kappa)) return;
    l = std::abs(D(xi1, eta) - D(xi2, eta));
    r = quasi_distance(st, xi1, xi2) / std::pow(quasi_distance(st, xi1, eta), Q + w + 1);
  };
  std::vector<Vec> draws(total, Vec::Zero(dimz));
  std::vector<double> lhs(total, 0.0), rhs(total, 0.0);
  parallel_for(total, spec.threads, [&](std::size_t i) {
    auto rng = stream_rng(spec.seed, "mean_value", i);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    KernelSample k = draw_pair(box, spec.t_range, rng);
    Vec z(dimz);
    z.head(n) = k.x;
    z(n) = k.t;
    z.segment(n + 1, n) = k.y;
    z(2 * n + 1) = k.s;
    for (int d = 0; d < n; ++d) z(2 * n + 2 + d) = 2.0 * u(rng) - 1.0;
    z(3 * n + 2) = 0.1 * (2.0 * u(rng) - 1.0);
    double lam = std::pow(10.0, -2.0 * u(rng));
    // shrink the step until the separation condition holds
    for (int it = 0; it < 40; ++it, lam *= 0.5) {
      z(3 * n + 3) = std::log(lam);
      evaluate(z, lhs[i], rhs[i]);
      if (rhs[i] > 0.0) break;
    }
    draws[i] = z;
  });
  Vec lo(dimz), hi(dimz);
  for (int d = 0; d < n; ++d) {
    lo(d) = lo(n + 1 + d) = box[d].first;
    hi(d) = hi(n + 1 + d) = box[d].second;
    lo(2 * n + 2 + d) = -1.0;
    hi(2 * n + 2 + d) = 1.0;
  }
  lo(n) = lo(2 * n + 1) = spec.t_range.first;
  hi(n) = hi(2 * n + 1) = spec.t_range.second;
  lo(3 * n + 2) = -0.1;
  hi(3 * n + 2) = 0.1;
  lo(3 * n + 3) = -40.0 * std::log(2.0) - 2.0 * std::log(10.0);
  hi(3 * n + 3) = 0.0;
  constexpr std::size_t kStarts = 48;
  auto level_sup = [&](std::size_t m) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    auto ratio = [&](std::size_t i) { return rhs[i] > kRhsFloor ? lhs[i] / rhs[i] : 0.0; };
    const std::size_t starts = std::min(m, kStarts);
    std::partial_sort(idx.begin(), idx.begin() + starts, idx.end(),
                      [&](std::size_t a, std::size_t b) { return ratio(a) > ratio(b) || (ratio(a) == ratio(b) && a < b); });
    std::vector<double> best(starts, 0.0);
    parallel_for(starts, spec.threads, [&](std::size_t j) {
      auto obj = [&](const Vec& z) {
        double l, r;
        evaluate(z, l, r);
        return r > kRhsFloor ? l / r : 0.0;
      };
      best[j] = std::max(ratio(idx[j]), compass_maximize(obj, draws[idx[j]], lo, hi, 0.05, 1e-6, 4000).value);
    });
    return *std::max_element(best.begin(), best.end());
  };
  double coarse = level_sup(spec.count), fine = level_sup(total);
  EstimateReport rep;
  rep.inequality_id = "mean_value";
  rep.rhs_form = "c*d(xi1,xi2)/d(xi1,eta)^{Q+w+1}";
  rep.seed = spec.seed;
  rep.samples = total;
  rep.lhs_max = *std::max_element(lhs.begin(), lhs.end());
  rep.c_star = fine;
  rep.stability = relative_change(fine, coarse);
  rep.details["kappa"] = kappa;
  rep.lhs_samples = lhs;
  rep.rhs_samples = rhs;
  trim_samples(rep.lhs_samples, rep.rhs_samples);
  rep.finalize();
  return rep;
}

double drift_term(const CoefficientModel& model, const Vec& x, double t, const Vec& y, double s) {
  KernelWorkspace ws(model, t, s);
  Vec bx = model.structure().drift_matrix() * x;
  return ws.derivative(x, y, {bx});
}

EstimateReport lgamma_residual_check(const CoefficientModel& model, const Vec& y, double s,
                                     const ResidualGridSpec& grid) {
  const ModelStructure& st = model.structure();
  const int n = st.dim(), q = st.diffusion_rank();
  const auto box = box_or_default(grid.x_box, n);
  const double hmax = *std::max_element(grid.steps.begin(), grid.steps.end());
  // one grid cell = the coarsest time step in the quasi-norm
  const double cell = std::sqrt(hmax);
  const double exclusion = grid.exclusion_cells * cell;
  std::vector<double> taxis = linspace(grid.t_range.first, grid.t_range.second, grid.t_points);
  std::vector<std::vector<double>> xaxes;
  for (int i = 0; i < n; ++i) xaxes.push_back(linspace(box[i].first, box[i].second, grid.x_points));
  std::size_t nx = 1;
  for (int i = 0; i < n; ++i) nx *= static_cast<std::size_t>(grid.x_points);
  struct Node {
    Vec x;
    double t;
  };
  std::vector<Node> nodes;
  std::size_t excluded_switch = 0;
  for (double t : taxis) {
    bool near_switch = false;
    for (double b : model.breakpoints())
      if (std::abs(t - b) <= 2.0 * hmax) near_switch = true;
    for (std::size_t k = 0; k < nx; ++k) {
      Vec x(n);
      std::size_t r = k;
      for (int d = n - 1; d >= 0; --d) {
        x(d) = xaxes[d][r % grid.x_points];
        r /= grid.x_points;
      }
      if (near_switch) {
        ++excluded_switch;
        continue;
      }
      if (t - 2.0 * hmax <= s) continue;
      if (quasi_distance(st, {x, t}, {y, s}) < exclusion) continue;
      nodes.push_back({x, t});
    }
  }
  if (nodes.empty()) throw ConfigError("grid", "residual grid touches the pole everywhere");
  const Mat B = st.drift_matrix();
  auto G = [&](const Vec& x, double t) { return gamma(model, x, t, y, s); };
  std::vector<double> res(grid.steps.size(), 0.0);
  for (std::size_t hi = 0; hi < grid.steps.size(); ++hi) {
    const double h = grid.steps[hi];
    std::vector<double> local(nodes.size());
    parallel_for(nodes.size(), 0, [&](std::size_t k) {
      const Vec& x = nodes[k].x;
      const double t = nodes[k].t;
      KernelWorkspace ws(model, t, s);
      auto g = [&](const Vec& z) { return ws.gamma(z, y); };
      const double g0 = g(x);
      Mat A = model.a0(t);
      double diff = 0.0;
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
          Vec ei = Vec::Unit(n, i) * h, ej = Vec::Unit(n, j) * h;
          double d2 = (i == j) ? (g(x + ei) - 2.0 * g0 + g(x - ei)) / (h * h)
                               : (g(x + ei + ej) - g(x + ei - ej) - g(x - ei + ej) + g(x - ei - ej)) / (4.0 * h * h);
          diff += A(i, j) * d2;
        }
      Vec bx = B * x;
      double drift = 0.0;
      for (int j = 0; j < n; ++j) {
        if (bx(j) == 0.0) continue;
        Vec ej = Vec::Unit(n, j) * h;
        drift += bx(j) * (g(x + ej) - g(x - ej)) / (2.0 * h);
      }
      double dt = (G(x, t + h) - G(x, t - h)) / (2.0 * h);
      local[k] = std::abs(diff + drift - dt);
    });
    res[hi] = *std::max_element(local.begin(), local.end());
  }
  // least-squares slope of log residual against log h
  double sx = 0, sy = 0, sxx = 0, sxy = 0, min_slope = std::numeric_limits<double>::infinity();
  const double m = static_cast<double>(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    double lx = std::log(grid.steps[i]), ly = std::log(res[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    if (i > 0) min_slope = std::min(min_slope, std::log(res[i - 1] / res[i]) / std::log(grid.steps[i - 1] / grid.steps[i]));
  }
  double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  EstimateReport rep;
  rep.inequality_id = "lgamma_residual";
  rep.rhs_form = "residual = O(h^2); c_star is the finest-step residual";
  rep.lhs_samples = res;
  rep.rhs_samples = grid.steps;
  rep.lhs_max = res.front();
  rep.c_star = res.back();
  rep.samples = nodes.size();
  rep.details["order"] = slope;
  rep.details["min_pairwise_order"] = min_slope;
  rep.details["exclusion_radius"] = exclusion;
  rep.details["excluded_switch_points"] = static_cast<double>(excluded_switch);
  // the band here is on the observed order: pass needs order >= 1.9
  rep.tolerance = 0.1;
  rep.stability = std::max(0.0, 2.0 - std::min(slope, min_slope));
  rep.finalize();
  return rep;
}

}  // namespace kfp
