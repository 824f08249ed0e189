#pragma once

// Hyperparameter selection by seeded k-fold cross-validation over a
// (degree, lambda) grid. Structural equations are scored by held-out
// structural mean squared error summed over equations; predictors by
// held-out predictive mean squared error. Ties break toward the smaller
// degree, then the larger lambda (the more regularized model).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "cfsense/anm.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/predictor.hpp"
#include "cfsense/rng.hpp"

namespace cfsense {

struct CvPlan {
  std::vector<std::vector<std::size_t>> folds;
  std::vector<int> degree_grid;
  std::vector<double> lambda_grid;
  std::uint64_t seed = 0;
};

inline CvPlan make_cv_plan(std::size_t n, std::vector<int> degree_grid,
                           std::vector<double> lambda_grid, std::uint64_t seed,
                           std::size_t k = 5) {
  if (n < k) k = n > 0 ? n : 1;
  CvPlan plan;
  plan.degree_grid = std::move(degree_grid);
  plan.lambda_grid = std::move(lambda_grid);
  plan.seed = seed;
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(n);
  plan.folds.resize(k);
  // Contiguous chunks of a seeded permutation; fold sizes differ by at
  // most one.
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    plan.folds[f].assign(perm.begin() + pos, perm.begin() + pos + len);
    pos += len;
  }
  return plan;
}

struct SelectionReport {
  int degree = 1;
  double lambda = 0.0;
  Mat<double> mean_scores;  // degree_grid.size() x lambda_grid.size()
  std::vector<int> degree_grid;
  std::vector<double> lambda_grid;
};

// Generic grid search. `eval(degree, lambda, train, valid)` returns a
// held-out score (lower is better) or throws; a candidate whose folds all
// fail is excluded. Candidates are visited degree-ascending and
// lambda-descending, and only a strictly better mean score displaces the
// incumbent, which implements the tie-break.
template <class EvalFn>
SelectionReport select_over_grid(const CvPlan& plan, EvalFn&& eval) {
  SelectionReport report;
  report.degree_grid = plan.degree_grid;
  report.lambda_grid = plan.lambda_grid;
  report.mean_scores = Mat<double>(plan.degree_grid.size(),
                                   plan.lambda_grid.size(),
                                   std::numeric_limits<double>::quiet_NaN());

  std::vector<double> lambdas_desc = plan.lambda_grid;
  std::vector<std::size_t> lambda_order(lambdas_desc.size());
  for (std::size_t i = 0; i < lambda_order.size(); ++i) lambda_order[i] = i;
  std::sort(lambda_order.begin(), lambda_order.end(),
            [&](std::size_t a, std::size_t b) {
              return plan.lambda_grid[a] > plan.lambda_grid[b];
            });

  std::size_t all_n = 0;
  for (const auto& f : plan.folds) all_n += f.size();

  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t di = 0; di < plan.degree_grid.size(); ++di) {
    for (std::size_t lo : lambda_order) {
      double total = 0.0;
      bool ok = true;
      for (std::size_t f = 0; f < plan.folds.size() && ok; ++f) {
        std::vector<std::size_t> train;
        train.reserve(all_n - plan.folds[f].size());
        for (std::size_t g = 0; g < plan.folds.size(); ++g)
          if (g != f)
            train.insert(train.end(), plan.folds[g].begin(),
                         plan.folds[g].end());
        try {
          const double score = eval(plan.degree_grid[di],
                                    plan.lambda_grid[lo], train,
                                    plan.folds[f]);
          if (!std::isfinite(score)) ok = false;
          else total += score;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok) continue;
      const double mean = total / static_cast<double>(plan.folds.size());
      report.mean_scores(di, lo) = mean;
      if (mean < best) {
        best = mean;
        report.degree = plan.degree_grid[di];
        report.lambda = plan.lambda_grid[lo];
        any = true;
      }
    }
  }
  if (!any) throw AllCandidatesFailed("every (degree, lambda) candidate failed");
  return report;
}

namespace detail {

inline Dataset subset_rows(const Dataset& data,
                           const std::vector<std::size_t>& rows) {
  Dataset out;
  out.protected_name = data.protected_name;
  out.feature_names = data.feature_names;
  out.target_name = data.target_name;
  out.a.reserve(rows.size());
  out.y.reserve(rows.size());
  out.x = Mat<double>(rows.size(), data.m());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.a.push_back(data.a[rows[r]]);
    out.y.push_back(data.y[rows[r]]);
    for (std::size_t j = 0; j < data.m(); ++j)
      out.x(r, j) = data.x(rows[r], j);
  }
  out.feature_stats = data.feature_stats;
  out.standardized = data.standardized;
  return out;
}

}  // namespace detail

// Structural hyperparameters: fit the independent-error model on the
// training folds, score by held-out structural MSE summed over equations.
inline SelectionReport select_structural(const Dataset& data,
                                         const CausalGraph& g,
                                         const CvPlan& plan) {
  return select_over_grid(plan, [&](int degree, double lambda,
                                    const std::vector<std::size_t>& train,
                                    const std::vector<std::size_t>& valid) {
    const NodeBases nb = make_bases(g, degree);
    const Dataset train_ds = detail::subset_rows(data, train);
    const FittedAnm fit = fit_model_a(train_ds, g, nb, lambda);
    const Dataset valid_ds = detail::subset_rows(data, valid);
    const Mat<double> eps = residuals(fit, valid_ds, g, nb);
    double acc = 0.0;
    for (std::size_t i = 0; i < valid_ds.n(); ++i)
      for (std::size_t j = 0; j < valid_ds.m(); ++j)
        acc += eps(i, j) * eps(i, j);
    return acc / static_cast<double>(valid_ds.n());
  });
}

// Predictor hyperparameters over fixed input rows (residual embeddings or
// any other inputs): ridge on training folds, held-out predictive MSE.
inline SelectionReport select_predictor(const std::vector<std::vector<double>>& inputs,
                                        const std::vector<double>& y,
                                        const CvPlan& plan) {
  return select_over_grid(plan, [&](int degree, double lambda,
                                    const std::vector<std::size_t>& train,
                                    const std::vector<std::size_t>& valid) {
    std::vector<std::vector<double>> train_in;
    std::vector<double> train_y;
    train_in.reserve(train.size());
    train_y.reserve(train.size());
    for (std::size_t r : train) {
      train_in.push_back(inputs[r]);
      train_y.push_back(y[r]);
    }
    const CfPredictor pred = fit_cf(train_in, train_y, degree, lambda);
    double acc = 0.0;
    for (std::size_t r : valid) {
      const double diff =
          pred.predict(std::span<const double>(inputs[r])) - y[r];
      acc += diff * diff;
    }
    return acc / static_cast<double>(valid.size());
  });
}

}  // namespace cfsense
