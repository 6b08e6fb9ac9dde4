#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "kfplab/types.hpp"

namespace kfp {

struct GroupPoint {
  Vec x;
  double t = 0.0;
};

struct BallVolumeEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

class ModelStructure {
 public:
  // Canonical blocks [I | 0] when `blocks` is empty.
  static ModelStructure build(const std::vector<int>& m, const std::vector<Mat>& blocks = {});

  int dim() const { return n_; }
  int diffusion_rank() const { return m_.front(); }
  int depth() const { return static_cast<int>(m_.size()) - 1; }
  int homogeneous_dimension() const { return Q_; }
  const std::vector<int>& block_sizes() const { return m_; }
  const std::vector<Mat>& blocks() const { return blocks_; }
  const std::vector<int>& exponents() const { return q_; }
  int max_exponent() const { return q_.back(); }
  const Mat& drift_matrix() const { return B_; }

  // |B_1(0)| by rejection sampling, computed once.
  const BallVolumeEstimate& unit_ball_volume() const;

 private:
  struct VolumeCache;
  int n_ = 0;
  int Q_ = 0;
  std::vector<int> m_;
  std::vector<int> q_;
  std::vector<Mat> blocks_;
  Mat B_;
  std::shared_ptr<VolumeCache> volume_;
};

// E(t) = exp(-tB) as the finite power series.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> exp_neg_tB(const ModelStructure& s, Scalar t) {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const int n = s.dim();
  M B = s.drift_matrix().template cast<Scalar>();
  M E = M::Identity(n, n);
  M term = M::Identity(n, n);
  for (int j = 1; j <= s.depth(); ++j) {
    term = (term * B) * (-t / Scalar(j));
    E += term;
  }
  return E;
}

// Spatial dilation D0(lambda) = diag(lambda^{q_i}).
template <typename Scalar = double>
Eigen::DiagonalMatrix<Scalar, Eigen::Dynamic> dilation_matrix(const ModelStructure& s, Scalar lambda) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d(s.dim());
  for (int i = 0; i < s.dim(); ++i) d(i) = std::pow(lambda, Scalar(s.exponents()[i]));
  return Eigen::DiagonalMatrix<Scalar, Eigen::Dynamic>(d);
}

// ||x|| = sum |x_i|^{1/q_i}
template <typename Derived>
typename Derived::Scalar anisotropic_norm(const ModelStructure& s, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Scalar r(0);
  const auto& q = s.exponents();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Scalar a = std::abs(x(i));
    if (q[i] == 1)
      r += a;
    else if (q[i] == 3)
      r += std::cbrt(a);
    else
      r += std::pow(a, Scalar(1) / Scalar(q[i]));
  }
  return r;
}

GroupPoint group_compose(const ModelStructure& s, const GroupPoint& a, const GroupPoint& b);
GroupPoint group_inverse(const ModelStructure& s, const GroupPoint& a);
GroupPoint dilate(const ModelStructure& s, double lambda, const GroupPoint& a);
double hom_norm(const ModelStructure& s, const GroupPoint& a);
double quasi_distance(const ModelStructure& s, const GroupPoint& a, const GroupPoint& b);

double ball_volume(const ModelStructure& s, double r);
// Independent rejection estimate of |B_r(0)| with its own sample stream.
BallVolumeEstimate measure_ball(const ModelStructure& s, double r, std::size_t samples, std::uint64_t seed);

struct Box {
  std::vector<std::pair<double, double>> x;  // one interval per spatial axis
  std::pair<double, double> t{0.0, 1.0};
  bool empty() const;
};

struct StructuralConstants {
  double kappa = 1.0;
  double vartheta = 1.0;
  double c_E = 0.0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
};

StructuralConstants estimate_structural_constants(const ModelStructure& s, std::size_t sample_count,
                                                  std::uint64_t seed, const Box& box);

// sup |x - E(t-s)x| / |t-s|^{1/q_N} over x in box.x, s,t in box.t.
double exp_holder_constant(const ModelStructure& s, std::size_t sample_count, std::uint64_t seed,
                           const Box& box);

}  // namespace kfp
