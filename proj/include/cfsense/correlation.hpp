#pragma once

// Budget-constrained correlation matrices for the worst-case search.
//
// A raw parameter matrix L (m x c) is squashed into a correlation matrix
//
//   P = I + p_max * (J - I) .* tanh(L L')
//
// so every off-diagonal entry lies strictly inside (-p_max, p_max) and the
// diagonal is exactly one. Dense search uses a lower-triangular square L;
// clique-restricted search gives L one column per clique with nonzeros
// only on that clique's members, which confines nonzero correlations to
// within-clique pairs.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/linalg.hpp"
#include "cfsense/rng.hpp"

namespace cfsense {

struct CorrelationParams {
  Mat<double> l;             // raw parameters, m x c
  Mat<double> pattern;       // 1.0 where an entry is free, 0.0 where pinned to zero
  double p_max = 0.0;

  std::size_t m() const { return l.rows(); }
  std::size_t cols() const { return l.cols(); }
};

// The squashing map, generic so the optimizer can record it on the tape.
// Entries of L at pinned positions must already be zero (or constants).
template <class T>
Mat<T> materialize(const Mat<T>& l, double p_max) {
  const std::size_t m = l.rows();
  Mat<T> p = Mat<T>::identity(m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = j + 1; k < m; ++k) {
      using std::tanh;
      T acc{};
      for (std::size_t c = 0; c < l.cols(); ++c)
        acc = acc + l(j, c) * l(k, c);
      const T v = p_max * tanh(acc);
      p(j, k) = v;
      p(k, j) = v;
    }
  return p;
}

inline Mat<double> materialize(const CorrelationParams& params) {
  return materialize(params.l, params.p_max);
}

// Dense parameterization: square lower-triangular L, unit diagonal start,
// small random strictly-lower entries. The zero matrix is a stationary
// point of the bilinear form, so the perturbation is what lets gradient
// ascent leave the uncorrelated start.
inline CorrelationParams dense_params(std::size_t m, double p_max,
                                      std::uint64_t seed,
                                      double init_scale = 0.01) {
  CorrelationParams cp;
  cp.p_max = p_max;
  cp.l = Mat<double>(m, m);
  cp.pattern = Mat<double>(m, m);
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      cp.pattern(i, j) = 1.0;
      cp.l(i, j) = i == j ? 1.0 : rng.uniform(-init_scale, init_scale);
    }
  return cp;
}

// Clique-restricted parameterization: one column per clique, entries free
// only for that clique's members. Off-clique pairs then have exactly zero
// inner product, hence exactly zero correlation.
inline CorrelationParams clique_params(std::size_t m,
                                       const std::vector<std::vector<std::size_t>>& cliques,
                                       double p_max, std::uint64_t seed,
                                       double init_scale = 0.01) {
  for (const auto& clique : cliques)
    for (std::size_t j : clique)
      if (j >= m)
        throw DimensionMismatch("clique member index out of range");
  CorrelationParams cp;
  cp.p_max = p_max;
  cp.l = Mat<double>(m, cliques.size());
  cp.pattern = Mat<double>(m, cliques.size());
  Rng rng(seed);
  for (std::size_t c = 0; c < cliques.size(); ++c)
    for (std::size_t j : cliques[c]) {
      cp.pattern(j, c) = 1.0;
      cp.l(j, c) = 1.0 + rng.uniform(-init_scale, init_scale);
    }
  return cp;
}

struct PsdReport {
  std::vector<double> eigenvalues;  // ascending
  double min_eigenvalue = 0.0;
  bool is_psd = false;
};

// Eigenvalue check with a small negative tolerance for roundoff.
inline PsdReport psd_check(const Mat<double>& p, double tol = 1e-10) {
  if (p.rows() != p.cols())
    throw NonSymmetricInput("psd_check: matrix must be square");
  if (!is_symmetric(p, 1e-9))
    throw NonSymmetricInput("psd_check: matrix must be symmetric");
  PsdReport report;
  report.eigenvalues = symmetric_eigenvalues(p);
  report.min_eigenvalue = report.eigenvalues.front();
  report.is_psd = report.min_eigenvalue >= -tol;
  return report;
}

// Equicorrelation with one hub: unit diagonal, first row and column p,
// zeros elsewhere. Eigenvalues are 1 (multiplicity n-2) and
// 1 +- sqrt(n-1) p, so the matrix is positive semidefinite exactly when
// |p| <= 1 / sqrt(n-1).
inline Mat<double> star_matrix(std::size_t n, double p) {
  if (n < 2) throw DimensionMismatch("star_matrix needs n >= 2");
  Mat<double> s = Mat<double>::identity(n);
  for (std::size_t j = 1; j < n; ++j) {
    s(0, j) = p;
    s(j, 0) = p;
  }
  return s;
}

}  // namespace cfsense
