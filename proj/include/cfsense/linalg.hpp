#pragma once

// Small dense linear algebra, generic over the scalar type so the same
// routines run on plain doubles and on autodiff variables. Problem sizes
// here are tiny (a handful of equations, a few dozen basis weights), so
// simplicity and genericity beat raw speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "cfsense/errors.hpp"

namespace cfsense {

// Extracts the numeric value of a scalar; overloaded for autodiff types.
inline double scalar_value(double x) { return x; }

template <class T>
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, T init = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, init) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1.0};
    return m;
  }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <class T>
Mat<T> transpose(const Mat<T>& a) {
  Mat<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dims");
  Mat<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T& aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j)
        out(i, j) = out(i, j) + aik * b(k, j);
    }
  return out;
}

template <class T>
std::vector<T> matvec(const Mat<T>& a, const std::vector<T>& x) {
  if (a.cols() != x.size()) throw DimensionMismatch("matvec: inner dims");
  std::vector<T> out(a.rows(), T{});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{};
    for (std::size_t j = 0; j < a.cols(); ++j) acc = acc + a(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

template <class T>
T dot(const std::vector<T>& a, const std::vector<T>& b) {
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc = acc + a[i] * b[i];
  return acc;
}

inline bool is_symmetric(const Mat<double>& a, double tol = 1e-12) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

// Lower-triangular Cholesky factor; nullopt when a pivot is not strictly
// positive (matrix not numerically positive definite).
template <class T>
std::optional<Mat<T>> cholesky(const Mat<T>& a) {
  using std::sqrt;
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("cholesky: square input");
  Mat<T> l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    T sum = a(j, j);
    for (std::size_t k = 0; k < j; ++k) sum = sum - l(j, k) * l(j, k);
    const double pivot = scalar_value(sum);
    if (!(pivot > 0.0) || !std::isfinite(pivot)) return std::nullopt;
    l(j, j) = sqrt(sum);
    for (std::size_t i = j + 1; i < n; ++i) {
      T s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s = s - l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

template <class T>
struct CholeskyFactor {
  Mat<T> lower;
  bool jittered = false;
  double jitter = 0.0;
};

// Cholesky with escalating diagonal jitter: 1e-12 up to 1e-6 in decade
// steps. Throws NotPositiveDefinite when even the largest jitter fails.
// Jitter terms are added as plain constants so autodiff gradients flow
// through the unjittered entries.
template <class T>
CholeskyFactor<T> cholesky_with_jitter(const Mat<T>& a,
                                       double jitter_start = 1e-12,
                                       double jitter_max = 1e-6) {
  if (auto l = cholesky(a)) return {std::move(*l), false, 0.0};
  for (double eps = jitter_start; eps <= jitter_max * (1.0 + 1e-12);
       eps *= 10.0) {
    Mat<T> b = a;
    for (std::size_t i = 0; i < a.rows(); ++i) b(i, i) = b(i, i) + eps;
    if (auto l = cholesky(b)) return {std::move(*l), true, eps};
  }
  throw NotPositiveDefinite("cholesky failed at maximum jitter");
}

// Solves L L^T x = b given the lower factor.
template <class T>
std::vector<T> cholesky_solve(const Mat<T>& l, const std::vector<T>& b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("cholesky_solve: rhs size");
  std::vector<T> y(n, T{});
  for (std::size_t i = 0; i < n; ++i) {
    T s = b[i];
    for (std::size_t k = 0; k < i; ++k) s = s - l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  std::vector<T> x(n, T{});
  for (std::size_t ii = n; ii-- > 0;) {
    T s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s = s - l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

// Inverse of the SPD matrix whose lower Cholesky factor is `l`.
template <class T>
Mat<T> cholesky_inverse(const Mat<T>& l) {
  const std::size_t n = l.rows();
  Mat<T> inv(n, n);
  std::vector<T> e(n, T{});
  for (std::size_t j = 0; j < n; ++j) {
    e.assign(n, T{});
    e[j] = T{1.0};
    std::vector<T> col = cholesky_solve(l, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

template <class T>
T logdet_from_cholesky(const Mat<T>& l) {
  using std::log;
  T acc{};
  for (std::size_t i = 0; i < l.rows(); ++i) acc = acc + log(l(i, i));
  return acc * 2.0;
}

// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
inline std::vector<double> symmetric_eigenvalues(Mat<double> a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("eigenvalues: square input");
  if (!is_symmetric(a, 1e-9)) throw NonSymmetricInput("eigenvalues: symmetric input");
  // Symmetrize exactly so rotations stay consistent.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
  scale = std::max(scale, 1.0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) < 1e-15 * scale * n) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace cfsense
