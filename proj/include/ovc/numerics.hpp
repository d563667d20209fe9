#pragma once

// Dense real linear algebra for small (<= a few hundred) systems:
// matrix type, LU with partial pivoting, inversion and one-sided Jacobi SVD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ovc {

using Vector = std::vector<double>;

namespace tol {
inline constexpr double kLuResidual = 1e-9;
inline constexpr double kSingularPivot = 1e-12;
inline constexpr double kSvdOffDiagonal = 1e-12;
inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kSymmetry = 1e-10;
inline constexpr double kPsd = 1e-10;
}  // namespace tol

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrixError : public NumericsError {
 public:
  using NumericsError::NumericsError;
};

class SvdNonConvergence : public NumericsError {
 public:
  SvdNonConvergence(int sweeps, double off_norm)
      : NumericsError(describe(sweeps, off_norm)), off_norm_(off_norm) {}
  double off_norm() const noexcept { return off_norm_; }

 private:
  static std::string describe(int sweeps, double off) {
    std::ostringstream os;
    os << "svd did not converge after " << sweeps << " sweeps (off-diagonal " << off << ")";
    return os.str();
  }
  double off_norm_;
};

/// Row-major dense real matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw NumericsError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static DenseMatrix diagonal(std::span<const double> d) {
    DenseMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }
  static DenseMatrix column(std::span<const double> v) {
    DenseMatrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }
  static DenseMatrix outer(std::span<const double> a, std::span<const double> b) {
    DenseMatrix m(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  Vector row_vector(std::size_t i) const {
    auto r = row(i);
    return {r.begin(), r.end()};
  }
  Vector col_vector(std::size_t j) const {
    Vector v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
    return v;
  }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Sub-matrix picking the given rows and columns, in the given order.
  DenseMatrix select(std::span<const std::size_t> row_idx, std::span<const std::size_t> col_idx) const {
    DenseMatrix s(row_idx.size(), col_idx.size());
    for (std::size_t i = 0; i < row_idx.size(); ++i)
      for (std::size_t j = 0; j < col_idx.size(); ++j) s(i, j) = (*this)(row_idx[i], col_idx[j]);
    return s;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  double norm_inf() const {
    double best = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (double x : row(i)) s += std::abs(x);
      best = std::max(best, s);
    }
    return best;
  }
  double norm_frobenius() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }
  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  DenseMatrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

  friend DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols_ != b.rows_) throw NumericsError("matrix product dimension mismatch");
    DenseMatrix c(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
      }
    return c;
  }

  friend Vector operator*(const DenseMatrix& a, std::span<const double> x) {
    if (a.cols_ != x.size()) throw NumericsError("matrix-vector dimension mismatch");
    Vector y(a.rows_, 0.0);
    for (std::size_t i = 0; i < a.rows_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols_; ++j) s += a(i, j) * x[j];
      y[i] = s;
    }
    return y;
  }
  friend Vector operator*(const DenseMatrix& a, const Vector& x) { return a * std::span<const double>(x); }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void check_same_shape(const DenseMatrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw NumericsError("matrix shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Small vector helpers.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}
inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}
inline Vector scaled(std::span<const double> a, double s) {
  Vector r(a.begin(), a.end());
  for (double& x : r) x *= s;
  return r;
}

/// Maximum |a(i,j) - a(j,i)|.
inline double asymmetry(const DenseMatrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

inline DenseMatrix symmetrized(const DenseMatrix& a) {
  DenseMatrix s = a + a.transpose();
  return s *= 0.5;
}

/// LU factorization with partial pivoting, P·A = L·U stored compactly.
class LuFactorization {
 public:
  explicit LuFactorization(DenseMatrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
    if (!lu_.square()) throw NumericsError("lu: matrix is not square");
    if (!lu_.all_finite()) throw NumericsError("lu: non-finite entry");
    const std::size_t n = lu_.rows();
    const double scale = lu_.norm_inf();
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t p = k;
      for (std::size_t i = k + 1; i < n; ++i)
        if (std::abs(lu_(i, k)) > std::abs(lu_(p, k))) p = i;
      if (std::abs(lu_(p, k)) < tol::kSingularPivot * scale || scale == 0.0) {
        std::ostringstream os;
        os << "matrix is singular to working precision (pivot " << std::abs(lu_(p, k)) << " at column " << k
           << ", norm " << scale << ")";
        throw SingularMatrixError(os.str());
      }
      if (p != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
        std::swap(perm_[k], perm_[p]);
      }
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / lu_(k, k);
        lu_(i, k) = f;
        if (f == 0.0) continue;
        for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
      }
    }
  }

  std::size_t size() const noexcept { return lu_.rows(); }

  DenseMatrix solve(const DenseMatrix& b) const {
    const std::size_t n = size();
    if (b.rows() != n) throw NumericsError("lu_solve: right-hand side row count mismatch");
    DenseMatrix x(n, b.cols());
    for (std::size_t c = 0; c < b.cols(); ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = b(perm_[i], c);
        for (std::size_t j = 0; j < i; ++j) s -= lu_(i, j) * x(j, c);
        x(i, c) = s;
      }
      for (std::size_t i = n; i-- > 0;) {
        double s = x(i, c);
        for (std::size_t j = i + 1; j < n; ++j) s -= lu_(i, j) * x(j, c);
        x(i, c) = s / lu_(i, i);
      }
    }
    return x;
  }

  Vector solve(std::span<const double> b) const {
    DenseMatrix x = solve(DenseMatrix::column(b));
    return x.col_vector(0);
  }

 private:
  DenseMatrix lu_;
  std::vector<std::size_t> perm_;
};

inline DenseMatrix lu_solve(const DenseMatrix& a, const DenseMatrix& b) { return LuFactorization(a).solve(b); }

inline DenseMatrix invert(const DenseMatrix& a) {
  return LuFactorization(a).solve(DenseMatrix::identity(a.rows()));
}

struct SvdResult {
  DenseMatrix u;  // m x m
  Vector sigma;   // min(m, n), descending
  DenseMatrix vt; // n x n, rows are right singular vectors
  int sweeps = 0;

  /// U * diag(sigma) * V^T, the m x n reconstruction.
  DenseMatrix reconstruct() const {
    DenseMatrix us(u.rows(), vt.rows());
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t k = 0; k < sigma.size(); ++k) us(i, k) = u(i, k) * sigma[k];
    return us * vt;
  }
};

namespace detail {

// Fills columns [filled, m) of q with an orthonormal completion of its first
// `filled` columns.
inline void complete_basis(DenseMatrix& q, std::size_t filled) {
  const std::size_t m = q.rows();
  for (std::size_t next = filled; next < m; ++next) {
    // Project every unit vector out of the current span and keep the largest
    // residual; one of them always has squared norm >= (m - next) / m.
    Vector best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < m; ++e) {
      Vector v(m, 0.0);
      v[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t c = 0; c < next; ++c) {
          double p = 0.0;
          for (std::size_t i = 0; i < m; ++i) p += q(i, c) * v[i];
          for (std::size_t i = 0; i < m; ++i) v[i] -= p * q(i, c);
        }
      const double nv = norm2(v);
      if (nv > best_norm + 1e-12) {
        best_norm = nv;
        best = std::move(v);
      }
    }
    for (std::size_t i = 0; i < m; ++i) q(i, next) = best[i] / best_norm;
  }
}

// One-sided Jacobi (Hestenes) on a tall or square matrix (m >= n).
inline SvdResult jacobi_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  DenseMatrix w = a;  // columns are rotated until mutually orthogonal
  DenseMatrix v = DenseMatrix::identity(n);

  const double fro = a.norm_frobenius();
  const double negligible_sq = (1e-15 * fro) * (1e-15 * fro);
  int sweep = 0;
  double off = 0.0;
  for (;;) {
    off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        // Columns at rounding level of the whole matrix carry no information
        // and may never orthogonalize; they end up as zero singular values.
        if (alpha <= negligible_sq || beta <= negligible_sq) continue;
        const double c_off = std::abs(gamma) / (std::sqrt(alpha) * std::sqrt(beta));
        off = std::max(off, c_off);
        if (c_off < tol::kSvdOffDiagonal) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    ++sweep;
    if (off < tol::kSvdOffDiagonal) break;
    if (sweep >= tol::kSvdMaxSweeps) throw SvdNonConvergence(sweep, off);
  }

  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult r;
  r.sweeps = sweep;
  r.u = DenseMatrix(m, m);
  r.vt = DenseMatrix(n, n);
  r.sigma.resize(n);
  const double smax = n ? sigma[order[0]] : 0.0;
  const double negligible = smax * static_cast<double>(std::max(m, n)) * 1e-15;
  std::size_t filled = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.sigma[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) r.vt(k, i) = v(i, j);
    if (sigma[j] > negligible && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, k) = w(i, j) / sigma[j];
      filled = k + 1;
    }
  }
  complete_basis(r.u, filled);
  return r;
}

}  // namespace detail

/// Singular value decomposition A = U diag(sigma) V^T.
///
/// One-sided Jacobi; sigma is descending and each left singular vector is
/// oriented so its largest-magnitude entry is non-negative (V follows U).
inline SvdResult svd(const DenseMatrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw NumericsError("svd: empty matrix");
  if (!a.all_finite()) throw NumericsError("svd: non-finite entry");

  SvdResult r;
  if (a.rows() >= a.cols()) {
    r = detail::jacobi_svd_tall(a);
  } else {
    SvdResult t = detail::jacobi_svd_tall(a.transpose());
    r.u = t.vt.transpose();
    r.vt = t.u.transpose();
    r.sigma = std::move(t.sigma);
    r.sweeps = t.sweeps;
  }

  const std::size_t m = r.u.rows();
  const std::size_t n = r.vt.rows();
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(r.u(i, k)) > std::abs(r.u(arg, k)) + 1e-14) arg = i;
    if (r.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, k) = -r.u(i, k);
      if (k < n)
        for (std::size_t i = 0; i < n; ++i) r.vt(k, i) = -r.vt(k, i);
    }
  }
  return r;
}

struct TopSingularPair {
  double sigma1_sq = 0.0;  // largest singular value of the (PSD) operand
  Vector u1;
};

/// Leading singular pair of a symmetric positive semi-definite matrix.
inline TopSingularPair top_singular_pair(const DenseMatrix& a) {
  if (!a.square()) throw NumericsError("top_singular_pair: matrix is not square");
  const double scale = std::max(1.0, a.max_abs());
  if (asymmetry(a) > tol::kSymmetry * scale) throw NumericsError("top_singular_pair: matrix is not symmetric");
  SvdResult r = svd(a);
  // For a symmetric matrix, u^T A u recovers the signed eigenvalue.
  for (std::size_t k = 0; k < r.sigma.size(); ++k) {
    const Vector uk = r.u.col_vector(k);
    const double rq = dot(uk, a * uk);
    if (rq < -tol::kPsd * scale) {
      std::ostringstream os;
      os << "top_singular_pair: matrix is not positive semi-definite (eigenvalue " << rq << ")";
      throw NumericsError(os.str());
    }
  }
  return {r.sigma[0], r.u.col_vector(0)};
}

}  // namespace ovc
