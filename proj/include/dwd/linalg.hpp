#pragma once

// Deterministic dense linear algebra: Householder QR, one-sided Jacobi SVD,
// and the constrained rank-1 fit behind compensated decomposition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwd/errors.hpp"
#include "dwd/tensor.hpp"

namespace dwd {

using MatrixD = Matrix<double>;

inline MatrixD transpose(const MatrixD& a) {
  MatrixD t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  require(a.cols() == b.rows(), ErrorKind::shape, "matmul: inner dimensions differ");
  MatrixD c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// a^T b without forming the transpose.
inline MatrixD matmul_tn(const MatrixD& a, const MatrixD& b) {
  require(a.rows() == b.rows(), ErrorKind::shape, "matmul_tn: row counts differ");
  MatrixD c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

inline std::vector<double> matvec(const MatrixD& a, std::span<const double> x) {
  require(a.cols() == x.size(), ErrorKind::shape, "matvec: dimension mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) acc += ai[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline std::vector<double> matvec_t(const MatrixD& a, std::span<const double> x) {
  require(a.rows() == x.size(), ErrorKind::shape, "matvec_t: dimension mismatch");
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (x[i] == 0.0) continue;
    auto ai = a.row(i);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += ai[j] * x[i];
  }
  return y;
}

template <typename T>
double frobenius_norm_sq(const Matrix<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <typename T>
double frobenius_norm(const Matrix<T>& a) {
  return std::sqrt(frobenius_norm_sq(a));
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
bool all_finite(const Matrix<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

template <typename T>
bool all_zero(const Matrix<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return v == T{}; });
}

struct QrResult {
  MatrixD q;  // m x n, orthonormal columns
  MatrixD r;  // n x n, upper triangular
};

/// Thin Householder QR of an m x n matrix with m >= n.
inline QrResult thin_qr(const MatrixD& input) {
  const std::size_t m = input.rows(), n = input.cols();
  require(m >= n, ErrorKind::shape, "thin_qr needs rows >= cols");
  MatrixD a = input;
  std::vector<std::vector<double>> reflectors(n);
  std::vector<double> betas(n, 0.0);
  std::vector<double> w(n);

  for (std::size_t k = 0; k < n; ++k) {
    double norm_sq = 0.0;
    for (std::size_t i = k; i < m; ++i) norm_sq += a(i, k) * a(i, k);
    const double norm = std::sqrt(norm_sq);
    std::vector<double>& v = reflectors[k];
    v.assign(m - k, 0.0);
    if (norm == 0.0) continue;
    const double alpha = a(k, k) >= 0.0 ? -norm : norm;
    for (std::size_t i = k; i < m; ++i) v[i - k] = a(i, k);
    v[0] -= alpha;
    const double vnorm_sq = norm_sq - a(k, k) * a(k, k) + v[0] * v[0];
    if (vnorm_sq == 0.0) continue;
    betas[k] = 2.0 / vnorm_sq;
    // a[k:, k:] -= beta v (v^T a[k:, k:]), row-major friendly.
    std::fill(w.begin() + static_cast<std::ptrdiff_t>(k), w.end(), 0.0);
    for (std::size_t i = k; i < m; ++i) {
      const double vi = v[i - k];
      if (vi == 0.0) continue;
      auto ai = a.row(i);
      for (std::size_t j = k; j < n; ++j) w[j] += vi * ai[j];
    }
    for (std::size_t i = k; i < m; ++i) {
      const double s = betas[k] * v[i - k];
      if (s == 0.0) continue;
      auto ai = a.row(i);
      for (std::size_t j = k; j < n; ++j) ai[j] -= s * w[j];
    }
    a(k, k) = alpha;
    for (std::size_t i = k + 1; i < m; ++i) a(i, k) = 0.0;
  }

  QrResult out{MatrixD(m, n), MatrixD(n, n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out.r(i, j) = a(i, j);

  // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
  for (std::size_t j = 0; j < n; ++j) out.q(j, j) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    if (betas[kk] == 0.0) continue;
    const std::vector<double>& v = reflectors[kk];
    std::fill(w.begin() + static_cast<std::ptrdiff_t>(kk), w.end(), 0.0);
    for (std::size_t i = kk; i < m; ++i) {
      const double vi = v[i - kk];
      if (vi == 0.0) continue;
      auto qi = out.q.row(i);
      for (std::size_t j = kk; j < n; ++j) w[j] += vi * qi[j];
    }
    for (std::size_t i = kk; i < m; ++i) {
      const double s = betas[kk] * v[i - kk];
      if (s == 0.0) continue;
      auto qi = out.q.row(i);
      for (std::size_t j = kk; j < n; ++j) qi[j] -= s * w[j];
    }
  }
  return out;
}

/// M = U diag(S) V^T with r = min(rows, cols); S non-increasing.
/// Sign convention: the largest-magnitude entry of each V column is positive
/// (lowest index wins ties), with U flipped to match.
struct SvdResult {
  MatrixD u;
  std::vector<double> s;
  MatrixD v;
};

namespace detail {

// One-sided Jacobi on the columns of an n x n matrix, passed as its
// transpose so columns are contiguous rows. On return the rows of `cols`
// are mutually orthogonal and `vt` holds V^T.
inline void jacobi_orthogonalize(MatrixD& cols, MatrixD& vt) {
  const std::size_t n = cols.rows(), len = cols.cols();
  vt = MatrixD(n, n);
  for (std::size_t i = 0; i < n; ++i) vt(i, i) = 1.0;
  const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(std::max<std::size_t>(len, 1));
  // Columns below rounding level of the whole matrix carry no signal and
  // would otherwise keep rotating against each other.
  double fro2 = 0.0;
  for (double x : cols.data()) fro2 += x * x;
  const double floor2 = fro2 * std::numeric_limits<double>::epsilon() * std::numeric_limits<double>::epsilon();
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto ap = cols.row(p);
        auto aq = cols.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (alpha <= floor2 || beta <= floor2) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < len; ++i) {
          const double x = ap[i], y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        auto vp = vt.row(p);
        auto vq = vt.row(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
        rotated = true;
      }
    }
    if (!rotated) return;
  }
  fail(ErrorKind::numeric, "svd: Jacobi sweeps did not converge");
}

// Replaces columns flagged in `fill` with unit vectors orthogonal to all
// other columns (two-pass Gram-Schmidt over the standard basis).
inline void complete_orthonormal_columns(MatrixD& u, const std::vector<bool>& fill) {
  const std::size_t m = u.rows(), r = u.cols();
  std::vector<double> cand(m);
  std::size_t next_axis = 0;
  for (std::size_t j = 0; j < r; ++j) {
    if (!fill[j]) continue;
    bool placed = false;
    while (!placed && next_axis < m) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[next_axis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < r; ++k) {
          if (k == j || (fill[k] && k > j)) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += u(i, k) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= d * u(i, k);
        }
      }
      const double nrm = norm2(cand);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = cand[i] / nrm;
        placed = true;
      }
    }
    require(placed, ErrorKind::numeric, "svd: could not complete orthonormal basis");
  }
}

inline void apply_sign_convention(SvdResult& res) {
  for (std::size_t j = 0; j < res.v.cols(); ++j) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < res.v.rows(); ++i) {
      const double a = std::abs(res.v(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (res.v(best, j) < 0.0) {
      for (std::size_t i = 0; i < res.v.rows(); ++i) res.v(i, j) = -res.v(i, j);
      for (std::size_t i = 0; i < res.u.rows(); ++i) res.u(i, j) = -res.u(i, j);
    }
  }
}

// SVD of a square matrix via one-sided Jacobi.
inline SvdResult svd_square(const MatrixD& a) {
  const std::size_t n = a.rows();
  MatrixD cols = transpose(a);
  MatrixD vt;
  jacobi_orthogonalize(cols, vt);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(cols.row(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult res{MatrixD(n, n), std::vector<double>(n), MatrixD(n, n)};
  const double smax = n ? norms[order[0]] : 0.0;
  const double negligible = smax * static_cast<double>(n) * std::numeric_limits<double>::epsilon();
  std::vector<bool> fill(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    res.s[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) res.v(i, k) = vt(j, i);
    if (norms[j] <= negligible || norms[j] == 0.0) {
      fill[k] = true;
    } else {
      for (std::size_t i = 0; i < n; ++i) res.u(i, k) = cols(j, i) / norms[j];
    }
  }
  if (std::any_of(fill.begin(), fill.end(), [](bool f) { return f; })) complete_orthonormal_columns(res.u, fill);
  return res;
}

}  // namespace detail

inline SvdResult svd(const MatrixD& m) {
  require(all_finite(m), ErrorKind::numeric, "svd: input has non-finite entries");
  require(m.rows() > 0 && m.cols() > 0, ErrorKind::shape, "svd: empty matrix");
  SvdResult res;
  if (m.rows() >= m.cols()) {
    QrResult qr = thin_qr(m);
    SvdResult inner = detail::svd_square(qr.r);
    res.u = matmul(qr.q, inner.u);
    res.s = std::move(inner.s);
    res.v = std::move(inner.v);
  } else {
    SvdResult t = svd(transpose(m));
    res.u = std::move(t.v);
    res.s = std::move(t.s);
    res.v = std::move(t.u);
  }
  detail::apply_sign_convention(res);
  return res;
}

struct LeadingDirection {
  std::vector<double> v;  // unit right singular vector
  double sigma = 0.0;
};

/// First column of svd(y).v and its singular value.
inline LeadingDirection leading_right_singular_vector(const MatrixD& y) {
  if (all_zero(y)) fail(ErrorKind::degenerate, "leading_right_singular_vector: all-zero input");
  SvdResult s = svd(y);
  LeadingDirection out{std::vector<double>(y.cols()), s.s[0]};
  for (std::size_t i = 0; i < y.cols(); ++i) out.v[i] = s.v(i, 0);
  return out;
}

struct Rank1Fit {
  std::vector<double> u;  // unit input-side direction
  std::vector<double> p;  // output-side direction with the scale absorbed
  double objective = 0.0; // ||T - (Y u) p^T||_F
};

/// Default regularizer: 1e-8 * trace(Y^T Y) / n.
inline double default_regularization(const MatrixD& carrier) {
  return 1e-8 * frobenius_norm_sq(carrier) / static_cast<double>(carrier.cols());
}

inline void make_largest_entry_positive(std::span<double> v, std::span<double> partner) {
  std::size_t best = 0;
  double best_abs = -1.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > best_abs) {
      best_abs = std::abs(v[i]);
      best = i;
    }
  }
  if (!v.empty() && v[best] < 0.0) {
    for (double& x : v) x = -x;
    for (double& x : partner) x = -x;
  }
}

/// Minimizes ||T - (Y u) p^T||_F over unit u and free p.
///
/// u is the leading eigenvector of (Y^T T T^T Y) u = lambda (Y^T Y + eps I) u.
/// Solved in the row space of Y: with Y = U S V^T the right-hand operator is
/// diagonal there, so the whitened problem is the leading left singular
/// vector of diag(s / sqrt(s^2 + eps)) U^T T. Directions outside row(Y) have
/// zero eigenvalue. p = T^T (Y u) / ||Y u||^2.
inline Rank1Fit rank1_constrained_fit(const MatrixD& target, const MatrixD& carrier, std::optional<double> regularization = {}) {
  require(target.rows() == carrier.rows(), ErrorKind::shape, "rank1_constrained_fit: row counts differ");
  require(all_finite(target) && all_finite(carrier), ErrorKind::numeric, "rank1_constrained_fit: non-finite input");
  if (all_zero(carrier)) fail(ErrorKind::degenerate, "rank1_constrained_fit: all-zero carrier");
  const double eps = regularization.value_or(default_regularization(carrier));
  require(eps >= 0.0, ErrorKind::input, "rank1_constrained_fit: regularization must be non-negative");

  const std::size_t rows = carrier.rows(), n = carrier.cols(), m = target.cols();
  const SvdResult ys = svd(carrier);
  const double cutoff = ys.s[0] * static_cast<double>(std::max(rows, n)) * std::numeric_limits<double>::epsilon();
  std::size_t rank = 0;
  while (rank < ys.s.size() && ys.s[rank] > cutoff) ++rank;

  // whitened = diag(f) U_r^T T
  MatrixD whitened(rank, m);
  for (std::size_t i = 0; i < rows; ++i) {
    auto ti = target.row(i);
    for (std::size_t j = 0; j < rank; ++j) {
      const double uij = ys.u(i, j);
      if (uij == 0.0) continue;
      auto wj = whitened.row(j);
      for (std::size_t k = 0; k < m; ++k) wj[k] += uij * ti[k];
    }
  }
  for (std::size_t j = 0; j < rank; ++j) {
    const double f = ys.s[j] / std::sqrt(ys.s[j] * ys.s[j] + eps);
    for (double& x : whitened.row(j)) x *= f;
  }

  Rank1Fit fit;
  fit.u.assign(n, 0.0);
  if (all_zero(whitened)) {
    // T is orthogonal to col(Y): every u is optimal and p = 0.
    for (std::size_t i = 0; i < n; ++i) fit.u[i] = ys.v(i, 0);
  } else {
    const SvdResult ws = svd(whitened);
    for (std::size_t j = 0; j < rank; ++j) {
      const double b = ws.u(j, 0) / std::sqrt(ys.s[j] * ys.s[j] + eps);
      for (std::size_t i = 0; i < n; ++i) fit.u[i] += b * ys.v(i, j);
    }
    const double nu = norm2(fit.u);
    require(nu > 0.0 && std::isfinite(nu), ErrorKind::numeric, "rank1_constrained_fit: direction vanished");
    for (double& x : fit.u) x /= nu;
  }
  make_largest_entry_positive(fit.u, {});

  const std::vector<double> yu = matvec(carrier, fit.u);
  const double yu_sq = dot(yu, yu);
  fit.p = matvec_t(target, yu);
  if (yu_sq > 0.0) {
    for (double& x : fit.p) x /= yu_sq;
  } else {
    std::fill(fit.p.begin(), fit.p.end(), 0.0);
  }

  double res = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    auto ti = target.row(i);
    for (std::size_t k = 0; k < m; ++k) {
      const double d = ti[k] - yu[i] * fit.p[k];
      res += d * d;
    }
  }
  fit.objective = std::sqrt(res);
  return fit;
}

}  // namespace dwd
