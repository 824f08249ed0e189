#pragma once

// Predictors on top of the structural model.
//
// The counterfactually fair predictor regresses the target on a polynomial
// embedding of the abducted residuals only, so by construction it cannot
// see the protected attribute or its descendants except through noise
// terms. Counterfactual unfairness of a sample is the squared gap between
// the predictions on factual and counterfactual residuals.
//
// Two reference predictors bracket it: an unconstrained one using the
// protected attribute and all features, and a blind one using the features
// only (which still leaks protected information through descendants).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cfsense/basis.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/linalg.hpp"

namespace cfsense {

// Ridge regression on pre-embedded rows; penalizes every coefficient.
inline std::vector<double> ridge_fit(const std::vector<std::vector<double>>& rows,
                                     const std::vector<double>& y,
                                     double lambda) {
  if (rows.empty()) throw EmptyAfterFiltering("ridge fit needs data");
  if (rows.size() != y.size())
    throw DimensionMismatch("ridge fit: rows and targets disagree");
  const std::size_t d = rows[0].size();
  Mat<double> a(d, d);
  std::vector<double> rhs(d, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) a(p, q) += r[p] * r[q];
      rhs[p] += r[p] * y[i];
    }
  }
  for (std::size_t p = 0; p < d; ++p) a(p, p) += lambda;
  auto chol = cholesky(a);
  if (!chol)
    throw SingularNormalEquations("predictor normal equations singular");
  return cholesky_solve(*chol, rhs);
}

// Indices of features whose influence is considered unfair vs. fair for
// path-specific evaluation. When absent, all features are unfair and the
// predictor input is the full residual vector.
struct PathMaskIdx {
  std::vector<std::size_t> unfair;  // enter through residuals
  std::vector<std::size_t> fair;    // enter through factual values
};

inline PathMaskIdx resolve_mask(const CausalGraph& g, const PathSpecMask& mask) {
  PathMaskIdx idx;
  for (const auto& name : mask.unfair_nodes)
    idx.unfair.push_back(g.index_of(name) - 1);
  for (const auto& name : mask.fair_nodes)
    idx.fair.push_back(g.index_of(name) - 1);
  return idx;
}

// Predictor input for one sample: residuals of unfair features followed by
// values of fair features. Without a mask this is just the residual
// vector. Counterfactual inputs substitute the counterfactual residuals
// and values with the same layout.
template <class T>
std::vector<T> predictor_input(const std::optional<PathMaskIdx>& mask,
                               std::span<const T> eps,
                               std::span<const T> x) {
  std::vector<T> in;
  if (!mask) {
    in.assign(eps.begin(), eps.end());
    return in;
  }
  in.reserve(mask->unfair.size() + mask->fair.size());
  for (std::size_t j : mask->unfair) in.push_back(eps[j]);
  for (std::size_t j : mask->fair) in.push_back(x[j]);
  return in;
}

struct CfPredictor {
  BoundBasis basis;
  std::vector<double> theta;
  double lambda = 0.0;
  std::optional<PathMaskIdx> mask;

  template <class T>
  T predict(std::span<const T> input) const {
    const std::vector<T> phi = embed(basis, input);
    T acc{};
    for (std::size_t k = 0; k < phi.size(); ++k)
      acc = acc + phi[k] * theta[k];
    return acc;
  }
};

// Fits the fair predictor on embedded inputs (residuals, or the masked
// residual/value mix).
inline CfPredictor fit_cf(const std::vector<std::vector<double>>& inputs,
                          const std::vector<double>& y, int degree,
                          double lambda,
                          std::optional<PathMaskIdx> mask = std::nullopt) {
  if (inputs.empty()) throw EmptyAfterFiltering("fit_cf needs data");
  BasisSpec spec;
  spec.degree = degree;
  spec.include_bias = true;
  spec.input_dim = inputs[0].size();
  CfPredictor pred;
  pred.basis = bind_basis(spec);
  pred.lambda = lambda;
  pred.mask = std::move(mask);
  std::vector<std::vector<double>> rows;
  rows.reserve(inputs.size());
  for (const auto& in : inputs)
    rows.push_back(embed(pred.basis, std::span<const double>(in)));
  pred.theta = ridge_fit(rows, y, lambda);
  return pred;
}

// Squared prediction gap between factual and counterfactual inputs.
template <class T>
T cfu_one(const CfPredictor& pred, std::span<const double> input_factual,
          std::span<const T> input_cf) {
  const double f = pred.predict(input_factual);
  const T c = pred.predict(input_cf);
  const T gap = c - f;
  return gap * gap;
}

// Mean counterfactual unfairness over rows of factual and counterfactual
// predictor inputs.
inline double cfu(const CfPredictor& pred,
                  const std::vector<std::vector<double>>& factual,
                  const std::vector<std::vector<double>>& counterfactual) {
  if (factual.size() != counterfactual.size())
    throw DimensionMismatch("cfu: row counts disagree");
  if (factual.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < factual.size(); ++i)
    acc += cfu_one<double>(pred, factual[i], counterfactual[i]);
  return acc / static_cast<double>(factual.size());
}

enum class BaselineKind {
  kUnconstrained,  // sees protected attribute and features
  kBlind,          // sees features only
};

struct BaselinePredictor {
  BaselineKind kind = BaselineKind::kUnconstrained;
  BoundBasis basis;
  std::vector<double> theta;
  double lambda = 0.0;

  double predict(double a, std::span<const double> x) const {
    std::vector<double> in;
    if (kind == BaselineKind::kUnconstrained) {
      in.reserve(x.size() + 1);
      in.push_back(a);
    } else {
      in.reserve(x.size());
    }
    in.insert(in.end(), x.begin(), x.end());
    const std::vector<double> phi =
        embed(basis, std::span<const double>(in));
    double acc = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) acc += phi[k] * theta[k];
    return acc;
  }
};

inline BaselinePredictor fit_baseline(BaselineKind kind,
                                      const std::vector<double>& a,
                                      const Mat<double>& x,
                                      const std::vector<double>& y, int degree,
                                      double lambda) {
  const std::size_t n = a.size();
  const std::size_t m = x.cols();
  BaselinePredictor pred;
  pred.kind = kind;
  pred.lambda = lambda;
  BasisSpec spec;
  spec.degree = degree;
  spec.include_bias = true;
  spec.input_dim = kind == BaselineKind::kUnconstrained ? m + 1 : m;
  pred.basis = bind_basis(spec);
  std::vector<std::vector<double>> rows;
  rows.reserve(n);
  std::vector<double> in(spec.input_dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    if (kind == BaselineKind::kUnconstrained) in[c++] = a[i];
    for (std::size_t j = 0; j < m; ++j) in[c++] = x(i, j);
    rows.push_back(embed(pred.basis, std::span<const double>(in)));
  }
  pred.theta = ridge_fit(rows, y, lambda);
  return pred;
}

// Mean squared gap between the fair predictor's outputs and a baseline's
// outputs over the dataset; quantifies how much accuracy-driven behavior
// the fairness constraint changes.
inline double baseline_unfairness(const std::vector<double>& cf_predictions,
                                  const std::vector<double>& baseline_predictions) {
  if (cf_predictions.size() != baseline_predictions.size())
    throw DimensionMismatch("baseline_unfairness: prediction counts disagree");
  if (cf_predictions.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < cf_predictions.size(); ++i) {
    const double d = cf_predictions[i] - baseline_predictions[i];
    acc += d * d;
  }
  return acc / static_cast<double>(cf_predictions.size());
}

}  // namespace cfsense
