#pragma once

// Test helpers: seeded random data and independent oracles (Eigen for
// dense linear algebra, plain nested loops for convolution).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "dwd/dwd.hpp"

namespace dwd::test {

inline MatrixD random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  MatrixD m(rows, cols);
  for (double& v : m.data()) v = g(rng);
  return m;
}

inline Tensor4 random_tensor(Role role, Tensor4::Dims dims, std::uint64_t seed, double scale = 1.0) {
  Tensor4 t(role, dims);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (float& v : t.data()) v = static_cast<float>(g(rng));
  return t;
}

inline RegularConvLayer random_regular(std::size_t n, std::size_t c, std::size_t kh, std::size_t kw, std::uint64_t seed,
                                       Hw stride = {1, 1}, Hw pad = {0, 0}) {
  RegularConvLayer l;
  l.weights = random_tensor(Role::weight_nckk, {n, c, kh, kw}, seed, 1.0 / std::sqrt(double(c * kh * kw)));
  l.stride = stride;
  l.padding = pad;
  return l;
}

inline SeparableConvLayer random_separable(std::size_t n, std::size_t c, std::size_t kh, std::size_t kw, std::uint64_t seed,
                                           Hw stride = {1, 1}, Hw pad = {0, 0}) {
  SeparableConvLayer s;
  s.depthwise = random_tensor(Role::weight_nckk, {c, 1, kh, kw}, seed);
  const Tensor4 p = random_tensor(Role::weight_nckk, {n, c, 1, 1}, seed + 1);
  s.pointwise = Matrix<float>(n, c, std::vector<float>(p.data().begin(), p.data().end()));
  s.stride = stride;
  s.padding = pad;
  return s;
}

// Gaussian receptive fields and their exact responses for one layer.
inline PatchSet random_patchset(const RegularConvLayer& layer, std::size_t rows, std::uint64_t seed, double scale = 1.0) {
  PatchSet ps;
  ps.seed = seed;
  ps.in_channels = layer.in_channels();
  ps.kernel_h = layer.kernel_h();
  ps.kernel_w = layer.kernel_w();
  ps.x = Matrix<float>(rows, layer.in_channels() * layer.kernel_h() * layer.kernel_w());
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (float& v : ps.x.data()) v = static_cast<float>(g(rng));
  ps.y = linear_response(ps.x, weight_matrix(layer.weights));
  return ps;
}

inline Eigen::MatrixXd to_eigen(const MatrixD& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline MatrixD from_eigen(const Eigen::MatrixXd& e) {
  MatrixD m(e.rows(), e.cols());
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c) m(r, c) = e(r, c);
  return m;
}

// Singular values from the eigenvalues of M^T M, descending.
inline std::vector<double> gram_singular_values(const MatrixD& m) {
  const Eigen::MatrixXd a = to_eigen(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
  std::vector<double> s;
  for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  s.resize(std::min(m.rows(), m.cols()));
  return s;
}

inline double eckart_young_tail(const MatrixD& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> sv(to_eigen(y));
  double t = 0.0;
  for (Eigen::Index j = 1; j < sv.singularValues().size(); ++j) t += sv.singularValues()(j) * sv.singularValues()(j);
  return std::sqrt(t);
}

// min over unit u and free p of ||T - (Y u) p^T||_F by alternating least
// squares from several random starts.
inline double als_rank1_objective(const MatrixD& target, const MatrixD& carrier, std::uint64_t seed, int restarts = 20,
                                  int iterations = 500) {
  const Eigen::MatrixXd t = to_eigen(target), y = to_eigen(carrier);
  const Eigen::MatrixXd gram = y.transpose() * y;
  const auto gram_solver = gram.ldlt();
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < restarts; ++s) {
    Eigen::VectorXd u(y.cols());
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = g(rng);
    u.normalize();
    Eigen::VectorXd p = Eigen::VectorXd::Zero(t.cols());
    for (int it = 0; it < iterations; ++it) {
      const Eigen::VectorXd yu = y * u;
      const double nn = yu.squaredNorm();
      if (nn == 0.0) break;
      p = t.transpose() * yu / nn;
      const double pp = p.squaredNorm();
      if (pp == 0.0) break;
      u = gram_solver.solve(y.transpose() * t * p / pp);
      const double un = u.norm();
      if (un == 0.0) break;
      u /= un;
    }
    const Eigen::VectorXd yu = y * u;
    const double nn = yu.squaredNorm();
    if (nn > 0.0) p = t.transpose() * yu / nn;
    best = std::min(best, (t - yu * p.transpose()).norm());
  }
  return best;
}

// Six nested loops straight from the definition.
inline Tensor4 direct_conv(const Tensor4& x, const Tensor4& w, Hw stride, Hw pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t n = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (H + 2 * pad.h - kh) / stride.h + 1, wo = (W + 2 * pad.w - kw) / stride.w + 1;
  Tensor4 out(Role::activation_nchw, {N, n, ho, wo});
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = long(oy * stride.h + i) - long(pad.h), ix = long(ox * stride.w + j) - long(pad.w);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += double(w(o, c, i, j)) * double(x(b, c, std::size_t(iy), std::size_t(ix)));
              }
          out(b, o, oy, ox) = static_cast<float>(acc);
        }
  return out;
}

inline double relative_difference(std::span<const float> a, std::span<const float> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    num += d * d;
    den += double(b[i]) * double(b[i]);
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double relative_difference(const Tensor4& a, const Tensor4& b) { return relative_difference(a.data(), b.data()); }

inline bool orthonormal_columns(const MatrixD& m, double tol) {
  const MatrixD g = matmul_tn(m, m);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      if (std::abs(g(i, j) - (i == j ? 1.0 : 0.0)) > tol) return false;
  return true;
}

inline MatrixD reconstruct(const SvdResult& s) {
  MatrixD us = s.u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.s[c];
  return matmul(us, transpose(s.v));
}

inline double diff_norm(const MatrixD& a, const MatrixD& b) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) t += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return std::sqrt(t);
}

}  // namespace dwd::test
