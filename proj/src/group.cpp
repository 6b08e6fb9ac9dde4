#include "kfplab/group.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include "kfplab/parallel.hpp"

namespace kfp {

struct ModelStructure::VolumeCache {
  std::once_flag once;
  BallVolumeEstimate value;
};

ModelStructure ModelStructure::build(const std::vector<int>& m, const std::vector<Mat>& blocks) {
  if (m.empty()) throw ConfigError("m", "block size list is empty");
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (m[j] < 1) throw ConfigError("m", "block sizes must be positive");
    if (j > 0 && m[j] > m[j - 1]) throw ConfigError("m", "block sizes must be non-increasing");
  }
  ModelStructure s;
  s.m_ = m;
  const int k = static_cast<int>(m.size()) - 1;
  if (!blocks.empty() && static_cast<int>(blocks.size()) != k)
    throw ConfigError("blocks", "expected " + std::to_string(k) + " blocks");
  for (int j = 1; j <= k; ++j) {
    Mat b;
    if (blocks.empty()) {
      b = Mat::Zero(m[j], m[j - 1]);
      b.leftCols(m[j]).setIdentity();
    } else {
      b = blocks[j - 1];
      if (b.rows() != m[j] || b.cols() != m[j - 1]) {
        std::ostringstream os;
        os << "block " << j << " has shape " << b.rows() << "x" << b.cols() << ", expected " << m[j]
           << "x" << m[j - 1];
        throw ConfigError("blocks", os.str());
      }
      Eigen::JacobiSVD<Mat> svd(b);
      const auto& sv = svd.singularValues();
      double smax = sv.size() ? sv(0) : 0.0;
      int rank = 0;
      for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (smax > 0.0 && sv(i) > 1e-10 * smax) ++rank;
      if (rank != m[j])
        throw ConfigError("blocks", "block " + std::to_string(j) + " has rank " + std::to_string(rank) +
                                        ", expected " + std::to_string(m[j]));
    }
    s.blocks_.push_back(b);
  }
  int n = 0;
  for (int v : m) n += v;
  s.n_ = n;
  s.B_ = Mat::Zero(n, n);
  int row = m[0], col = 0;
  for (int j = 1; j <= k; ++j) {
    s.B_.block(row, col, m[j], m[j - 1]) = s.blocks_[j - 1];
    col += m[j - 1];
    row += m[j];
  }
  for (int j = 0; j <= k; ++j)
    for (int i = 0; i < m[j]; ++i) s.q_.push_back(2 * j + 1);
  s.Q_ = 0;
  for (int q : s.q_) s.Q_ += q;
  s.volume_ = std::make_shared<VolumeCache>();
  return s;
}

const BallVolumeEstimate& ModelStructure::unit_ball_volume() const {
  std::call_once(volume_->once, [this] { volume_->value = measure_ball(*this, 1.0, 1000000, 0x51ab); });
  return volume_->value;
}

GroupPoint group_compose(const ModelStructure& s, const GroupPoint& a, const GroupPoint& b) {
  return {b.x + exp_neg_tB(s, b.t) * a.x, a.t + b.t};
}

GroupPoint group_inverse(const ModelStructure& s, const GroupPoint& a) {
  return {-(exp_neg_tB(s, -a.t) * a.x), -a.t};
}

GroupPoint dilate(const ModelStructure& s, double lambda, const GroupPoint& a) {
  if (!(lambda > 0.0)) throw std::invalid_argument("dilate: lambda must be positive");
  return {dilation_matrix(s, lambda) * a.x, lambda * lambda * a.t};
}

double hom_norm(const ModelStructure& s, const GroupPoint& a) {
  return anisotropic_norm(s, a.x) + std::sqrt(std::abs(a.t));
}

double quasi_distance(const ModelStructure& s, const GroupPoint& a, const GroupPoint& b) {
  Vec v = a.x - exp_neg_tB(s, a.t - b.t) * b.x;
  return anisotropic_norm(s, v) + std::sqrt(std::abs(a.t - b.t));
}

double ball_volume(const ModelStructure& s, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("ball_volume: r must be positive");
  return s.unit_ball_volume().value * std::pow(r, s.homogeneous_dimension() + 2);
}

BallVolumeEstimate measure_ball(const ModelStructure& s, double r, std::size_t samples, std::uint64_t seed) {
  const int n = s.dim();
  // Box |x_i| < r^{q_i}, |t| < r^2 contains B_r(0).
  std::vector<double> half(n + 1);
  double box = 1.0;
  for (int i = 0; i < n; ++i) {
    half[i] = std::pow(r, s.exponents()[i]);
    box *= 2.0 * half[i];
  }
  half[n] = r * r;
  box *= 2.0 * half[n];
  const std::size_t chunk = 4096;
  std::size_t nchunks = (samples + chunk - 1) / chunk;
  std::vector<std::size_t> hits(nchunks, 0);
  parallel_for(nchunks, 0, [&](std::size_t c) {
    auto rng = stream_rng(seed, "ball_volume", c);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::size_t lo = c * chunk, hi = std::min(samples, lo + chunk);
    Vec x(n);
    std::size_t h = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      for (int d = 0; d < n; ++d) x(d) = half[d] * u(rng);
      double t = half[n] * u(rng);
      if (anisotropic_norm(s, x) + std::sqrt(std::abs(t)) < r) ++h;
    }
    hits[c] = h;
  });
  std::size_t total = 0;
  for (auto h : hits) total += h;
  double p = static_cast<double>(total) / static_cast<double>(samples);
  BallVolumeEstimate e;
  e.value = box * p;
  e.std_error = box * std::sqrt(p * (1.0 - p) / static_cast<double>(samples));
  e.samples = samples;
  return e;
}

bool Box::empty() const {
  if (x.empty()) return true;
  for (const auto& [lo, hi] : x)
    if (!(hi > lo)) return true;
  return !(t.second > t.first);
}

namespace {

GroupPoint sample_point(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GroupPoint p;
  p.x.resize(static_cast<Eigen::Index>(box.x.size()));
  for (std::size_t i = 0; i < box.x.size(); ++i)
    p.x(static_cast<Eigen::Index>(i)) = box.x[i].first + (box.x[i].second - box.x[i].first) * u(rng);
  p.t = box.t.first + (box.t.second - box.t.first) * u(rng);
  return p;
}

}  // namespace

StructuralConstants estimate_structural_constants(const ModelStructure& s, std::size_t sample_count,
                                                  std::uint64_t seed, const Box& box) {
  if (box.empty()) throw std::invalid_argument("estimate_structural_constants: empty domain box");
  if (sample_count < 1) throw std::invalid_argument("estimate_structural_constants: sample_count < 1");
  if (static_cast<int>(box.x.size()) != s.dim())
    throw std::invalid_argument("estimate_structural_constants: box dimension mismatch");
  struct Local {
    double kappa = 1.0, c_E = 0.0, pair_ratio = 1.0;
    GroupPoint xi1, eta;
    double d12 = 0.0;
  };
  std::vector<Local> loc(sample_count);
  parallel_for(sample_count, 0, [&](std::size_t i) {
    auto rng = stream_rng(seed, "structural", i);
    GroupPoint a = sample_point(box, rng), b = sample_point(box, rng), c = sample_point(box, rng);
    double dab = quasi_distance(s, a, b), dba = quasi_distance(s, b, a);
    double dac = quasi_distance(s, a, c), dbc = quasi_distance(s, b, c);
    Local& l = loc[i];
    if (dac + dbc > 0.0) l.kappa = std::max(l.kappa, dab / (dac + dbc));
    if (dba > 0.0) l.kappa = std::max(l.kappa, dab / dba);
    double rho = hom_norm(s, a);
    if (rho > 0.0) l.c_E = anisotropic_norm(s, Vec(exp_neg_tB(s, a.t) * a.x)) / rho;
    // Nearby partner for the equivalence constant: a composed with a small dilated point.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GroupPoint small = dilate(s, std::pow(10.0, -3.0 * u(rng)), sample_point(box, rng));
    l.xi1 = a;
    l.eta = b;
    GroupPoint a2 = group_compose(s, a, small);
    double d1 = quasi_distance(s, a, b), d2 = quasi_distance(s, a2, b);
    l.d12 = quasi_distance(s, a, a2);
    l.pair_ratio = (d1 > 0.0 && d2 > 0.0) ? std::max(d1 / d2, d2 / d1) : 1.0;
  });
  StructuralConstants out;
  out.sample_count = sample_count;
  out.seed = seed;
  for (const auto& l : loc) {
    out.kappa = std::max(out.kappa, l.kappa);
    out.c_E = std::max(out.c_E, l.c_E);
  }
  // Triples are kept when they are separated for any kappa up to 8, so the
  // accepted set does not move as more samples raise the kappa estimate.
  constexpr double kSeparationKappa = 8.0;
  for (const auto& l : loc)
    if (quasi_distance(s, l.xi1, l.eta) >= 2.0 * kSeparationKappa * l.d12)
      out.vartheta = std::max(out.vartheta, l.pair_ratio);
  return out;
}

double exp_holder_constant(const ModelStructure& s, std::size_t sample_count, std::uint64_t seed,
                           const Box& box) {
  if (box.empty()) throw std::invalid_argument("exp_holder_constant: empty domain box");
  std::vector<double> ratio(sample_count, 0.0);
  const double qn = s.max_exponent();
  parallel_for(sample_count, 0, [&](std::size_t i) {
    auto rng = stream_rng(seed, "exp_holder", i);
    GroupPoint a = sample_point(box, rng), b = sample_point(box, rng);
    double dt = a.t - b.t;
    if (dt == 0.0) return;
    Vec v = a.x - exp_neg_tB(s, dt) * a.x;
    ratio[i] = anisotropic_norm(s, v) / std::pow(std::abs(dt), 1.0 / qn);
  });
  return *std::max_element(ratio.begin(), ratio.end());
}

}  // namespace kfp
