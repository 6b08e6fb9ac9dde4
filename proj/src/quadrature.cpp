#include "kfplab/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace kfp {

namespace {

// Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix.
GaussRule golub_welsch(int n, const std::function<double(int)>& offdiag, double mu0) {
  Mat J = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    J(k, k - 1) = offdiag(k);
    J(k - 1, k) = offdiag(k);
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    r.nodes[i] = es.eigenvalues()(i);
    double v0 = es.eigenvectors()(0, i);
    r.weights[i] = mu0 * v0 * v0;
  }
  return r;
}

// Newton polish of Hermite nodes using the three-term recurrence for the
// orthonormal polynomials; weights follow from the derivative.
void polish_hermite(GaussRule& r) {
  int n = static_cast<int>(r.nodes.size());
  for (int i = 0; i < n; ++i) {
    double x = r.nodes[i];
    double dp = 0.0;
    for (int it = 0; it < 6; ++it) {
      double p1 = std::pow(std::numbers::pi, -0.25);
      double pprev = 0.0;
      for (int k = 1; k <= n; ++k) {
        double pk = x * std::sqrt(2.0 / k) * p1 - std::sqrt((k - 1.0) / k) * pprev;
        pprev = p1;
        p1 = pk;
      }
      dp = std::sqrt(2.0 * n) * pprev;
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    r.nodes[i] = x;
    r.weights[i] = 2.0 / (dp * dp);
  }
}

template <typename Key, typename Value, typename Make>
const Value& cached(std::map<Key, std::unique_ptr<Value>>& cache, std::mutex& m, const Key& key,
                    Make make) {
  std::lock_guard<std::mutex> lock(m);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto ptr = std::make_unique<Value>(make());
  const Value& ref = *ptr;
  cache.emplace(key, std::move(ptr));
  return ref;
}

}  // namespace

const GaussRule& gauss_hermite(int n) {
  static std::map<int, std::unique_ptr<GaussRule>> cache;
  static std::mutex m;
  return cached(cache, m, n, [n] {
    GaussRule r = golub_welsch(n, [](int k) { return std::sqrt(k / 2.0); }, std::sqrt(std::numbers::pi));
    polish_hermite(r);
    return r;
  });
}

const GaussRule& gauss_legendre(int n) {
  static std::map<int, std::unique_ptr<GaussRule>> cache;
  static std::mutex m;
  return cached(cache, m, n, [n] {
    return golub_welsch(n, [](int k) { return k / std::sqrt(4.0 * k * k - 1.0); }, 2.0);
  });
}

const TensorRule& tensor_gauss_hermite(int dim, int n, double prune) {
  static std::map<std::tuple<int, int, double>, std::unique_ptr<TensorRule>> cache;
  static std::mutex m;
  return cached(cache, m, std::make_tuple(dim, n, prune), [dim, n, prune] {
    const GaussRule& g = gauss_hermite(n);
    double wmax = *std::max_element(g.weights.begin(), g.weights.end());
    double cut = prune * std::pow(wmax, dim);
    std::vector<int> idx(dim, 0);
    std::vector<std::vector<double>> pts;
    std::vector<double> ws;
    for (;;) {
      double w = 1.0;
      for (int d = 0; d < dim; ++d) w *= g.weights[idx[d]];
      if (w >= cut) {
        std::vector<double> p(dim);
        for (int d = 0; d < dim; ++d) p[d] = g.nodes[idx[d]];
        pts.push_back(std::move(p));
        ws.push_back(w);
      }
      int d = 0;
      while (d < dim && ++idx[d] == n) idx[d++] = 0;
      if (d == dim) break;
    }
    TensorRule r;
    r.points.resize(static_cast<Eigen::Index>(pts.size()), dim);
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (int d = 0; d < dim; ++d) r.points(static_cast<Eigen::Index>(i), d) = pts[i][d];
    r.weights = std::move(ws);
    return r;
  });
}

AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol, int max_depth) {
  if (a == b) return {};
  double err = 0.0;
  double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      f, a, b, static_cast<unsigned>(max_depth), rel_tol, &err);
  return {v, err};
}

double integrate_gauss(const std::function<double(double)>& f, double a, double b, int n) {
  const GaussRule& g = gauss_legendre(n);
  double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += g.weights[i] * f(mid + half * g.nodes[i]);
  return s * half;
}

}  // namespace kfp
