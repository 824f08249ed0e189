#pragma once

// Polynomial feature maps. Each structural equation embeds its parent
// values with a full polynomial basis up to a per-node degree. Monomials
// are ordered by total degree, then within a degree by descending leading
// exponent, with the bias term first: for inputs [u, v] and degree 2 the
// order is [1, u, v, u^2, uv, v^2]. A node with no parents gets the
// bias-only map, so its equation reduces to a learned constant plus noise.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/linalg.hpp"

namespace cfsense {

struct BasisSpec {
  int degree = 1;
  bool include_bias = true;
  std::size_t input_dim = 0;
};

inline std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline std::size_t embed_dim(const BasisSpec& spec) {
  if (spec.degree < 1) throw DimensionMismatch("basis degree must be >= 1");
  const std::size_t full =
      binomial(spec.input_dim + static_cast<std::size_t>(spec.degree),
               spec.input_dim);
  return spec.include_bias ? full : full - 1;
}

// Exponent tuples in embedding order.
inline std::vector<std::vector<int>> monomial_exponents(const BasisSpec& spec) {
  if (spec.degree < 1) throw DimensionMismatch("basis degree must be >= 1");
  std::vector<std::vector<int>> out;
  std::vector<int> e(spec.input_dim, 0);
  auto emit_total = [&](auto&& self, std::size_t pos, int remaining) -> void {
    if (spec.input_dim == 0) return;
    if (pos + 1 == spec.input_dim) {
      e[pos] = remaining;
      out.push_back(e);
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      e[pos] = v;
      self(self, pos + 1, remaining - v);
    }
  };
  const int start = spec.include_bias ? 0 : 1;
  for (int total = start; total <= spec.degree; ++total) {
    if (total == 0) {
      out.push_back(std::vector<int>(spec.input_dim, 0));
      continue;
    }
    emit_total(emit_total, 0, total);
  }
  return out;
}

// A basis with its exponent table precomputed.
struct BoundBasis {
  BasisSpec spec;
  std::vector<std::vector<int>> exponents;
  std::size_t dim = 0;
};

inline BoundBasis bind_basis(const BasisSpec& spec) {
  BoundBasis b;
  b.spec = spec;
  b.exponents = monomial_exponents(spec);
  b.dim = b.exponents.size();
  return b;
}

template <class T>
std::vector<T> embed(const BoundBasis& basis, std::span<const T> inputs) {
  if (inputs.size() != basis.spec.input_dim)
    throw DimensionMismatch("embed: input size does not match basis");
  std::vector<T> out;
  out.reserve(basis.dim);
  for (const auto& exps : basis.exponents) {
    T v{1.0};
    for (std::size_t i = 0; i < exps.size(); ++i)
      for (int p = 0; p < exps[i]; ++p) v = v * inputs[i];
    out.push_back(v);
  }
  return out;
}

template <class T>
std::vector<T> embed(const BasisSpec& spec, std::span<const T> inputs) {
  return embed(bind_basis(spec), inputs);
}

// Per-feature bases for all structural equations of a graph, with offsets
// into the stacked weight vector.
struct NodeBases {
  std::vector<BoundBasis> per_feature;
  std::vector<std::size_t> offset;
  std::size_t total_dim = 0;
};

inline NodeBases make_bases(const CausalGraph& g,
                            const std::vector<int>& degrees,
                            bool include_bias = true) {
  if (!g.validated) throw UnknownNode("make_bases: graph not validated");
  const std::size_t m = g.num_features();
  if (degrees.size() != m)
    throw DimensionMismatch("make_bases: one degree per feature required");
  NodeBases nb;
  nb.per_feature.reserve(m);
  nb.offset.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    BasisSpec spec;
    spec.degree = degrees[j];
    spec.include_bias = include_bias;
    spec.input_dim = g.feature_parents(j).size();
    nb.offset.push_back(nb.total_dim);
    nb.per_feature.push_back(bind_basis(spec));
    nb.total_dim += nb.per_feature.back().dim;
  }
  return nb;
}

inline NodeBases make_bases(const CausalGraph& g, int degree,
                            bool include_bias = true) {
  return make_bases(g, std::vector<int>(g.num_features(), degree),
                    include_bias);
}

// Parent values of feature j: protected value for node 0, feature values
// otherwise. `x` holds the m feature values in graph order.
template <class T>
std::vector<T> parent_values(const CausalGraph& g, std::size_t j, const T& a,
                             std::span<const T> x) {
  std::vector<T> in;
  const auto& pids = g.feature_parents(j);
  in.reserve(pids.size());
  for (std::size_t p : pids) in.push_back(p == 0 ? a : x[p - 1]);
  return in;
}

// Embedding of feature j's parents.
template <class T>
std::vector<T> embed_feature(const CausalGraph& g, const NodeBases& nb,
                             std::size_t j, const T& a, std::span<const T> x) {
  std::vector<T> in = parent_values(g, j, a, x);
  return embed(nb.per_feature[j], std::span<const T>(in));
}

// Full block-diagonal design matrix for one sample: row j carries feature
// j's embedding in its own column block, zeros elsewhere.
template <class T>
Mat<T> assemble(const CausalGraph& g, const NodeBases& nb, const T& a,
                std::span<const T> x) {
  const std::size_t m = g.num_features();
  if (x.size() != m) throw DimensionMismatch("assemble: feature count");
  if (!std::isfinite(scalar_value(a))) throw MissingValue("assemble: protected value");
  for (const T& v : x)
    if (!std::isfinite(scalar_value(v)))
      throw MissingValue("assemble: feature value");
  Mat<T> phi(m, nb.total_dim);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<T> row = embed_feature(g, nb, j, a, x);
    for (std::size_t k = 0; k < row.size(); ++k)
      phi(j, nb.offset[j] + k) = row[k];
  }
  return phi;
}

}  // namespace cfsense
