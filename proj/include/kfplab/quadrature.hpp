#pragma once

#include <functional>
#include <vector>

#include "kfplab/types.hpp"

namespace kfp {

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Weight exp(-x^2) on the real line.
const GaussRule& gauss_hermite(int n);
// Weight 1 on [-1, 1].
const GaussRule& gauss_legendre(int n);

// Product Gauss-Hermite rule in `dim` dimensions; nodes are rows of `points`.
// Nodes whose weight is below `prune` times the largest weight are dropped.
struct TensorRule {
  Mat points;  // count x dim
  std::vector<double> weights;
};
const TensorRule& tensor_gauss_hermite(int dim, int n, double prune = 1e-18);

struct AdaptiveResult {
  double value = 0.0;
  double error = 0.0;
};

// Adaptive Gauss-Kronrod on a finite interval.
AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol = 1e-10, int max_depth = 15);

// Fixed-order Gauss-Legendre on [a, b].
double integrate_gauss(const std::function<double(double)>& f, double a, double b, int n);

}  // namespace kfp
