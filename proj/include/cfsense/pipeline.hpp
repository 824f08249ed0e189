#pragma once

// End-to-end fitting pipeline shared by both sensitivity tools: reference
// (independent-error) structural fit, residual-based fair predictor,
// reference predictors, and the precomputed constants a CFU evaluation
// needs. Also provides the plain-double CFU evaluator used by the grid
// sweep and for final reporting of the worst-case search.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfsense/anm.hpp"
#include "cfsense/basis.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/io.hpp"
#include "cfsense/modelsel.hpp"
#include "cfsense/predictor.hpp"

namespace cfsense {

struct PipelineConfig {
  // Structural fit: fixed degree/lambda, or grids for cross-validation.
  std::optional<int> degree;           // unset: select by CV
  std::optional<double> lambda;        // unset: select by CV
  std::vector<int> degree_grid = {1, 2, 3};
  std::vector<double> lambda_grid = {1e-6, 1e-4, 1e-2, 1.0};

  // Fair predictor on residuals.
  std::optional<int> predictor_degree;
  std::optional<double> predictor_lambda;
  std::vector<int> predictor_degree_grid = {1, 2, 3};
  std::vector<double> predictor_lambda_grid = {1e-6, 1e-4, 1e-2, 1.0};

  // Reference predictors reuse the predictor grids.
  std::optional<int> baseline_degree;
  std::optional<double> baseline_lambda;

  std::optional<PathSpecMask> path_mask;
  std::uint64_t seed = 0;
};

// Everything downstream tools need, fitted once per run.
struct PipelineArtifacts {
  CausalGraph graph;
  NodeBases bases;
  FittedAnm model_a;
  Mat<double> eps_hat;  // n x m residuals under model_a
  CfPredictor predictor;
  BaselinePredictor unconstrained;
  BaselinePredictor blind;

  std::vector<double> cf_predictions;   // fair predictor on factual inputs
  std::vector<double> uc_predictions;
  std::vector<double> buc_predictions;
  double unfairness_unconstrained = 0.0;
  double unfairness_blind = 0.0;

  std::optional<SelectionReport> structural_selection;
  std::optional<SelectionReport> predictor_selection;
  std::optional<SelectionReport> baseline_selection;

  int degree = 1;
  double lambda = 0.0;
  int predictor_degree = 1;
  double predictor_lambda = 0.0;
  int baseline_degree = 1;
  double baseline_lambda = 0.0;
};

// Factual predictor input rows (residuals, or masked residual/value mix).
inline std::vector<std::vector<double>> factual_inputs(
    const Dataset& data, const Mat<double>& eps,
    const std::optional<PathMaskIdx>& mask) {
  std::vector<std::vector<double>> rows;
  rows.reserve(data.n());
  std::vector<double> eps_row(data.m());
  std::vector<double> x_row(data.m());
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.m(); ++j) {
      eps_row[j] = eps(i, j);
      x_row[j] = data.x(i, j);
    }
    rows.push_back(predictor_input<double>(mask,
                                           std::span<const double>(eps_row),
                                           std::span<const double>(x_row)));
  }
  return rows;
}

inline PipelineArtifacts fit_pipeline(const Dataset& data, const CausalGraph& g,
                                      const PipelineConfig& cfg) {
  PipelineArtifacts art;
  art.graph = g;

  // Structural hyperparameters.
  int degree = cfg.degree.value_or(1);
  double lambda = cfg.lambda.value_or(1e-4);
  if (!cfg.degree || !cfg.lambda) {
    CvPlan plan = make_cv_plan(data.n(),
                               cfg.degree ? std::vector<int>{*cfg.degree}
                                          : cfg.degree_grid,
                               cfg.lambda ? std::vector<double>{*cfg.lambda}
                                          : cfg.lambda_grid,
                               cfg.seed + 17);
    art.structural_selection = select_structural(data, g, plan);
    degree = art.structural_selection->degree;
    lambda = art.structural_selection->lambda;
  }
  art.degree = degree;
  art.lambda = lambda;

  art.bases = make_bases(g, degree);
  art.model_a = fit_model_a(data, g, art.bases, lambda);
  art.eps_hat = residuals(art.model_a, data, g, art.bases);

  std::optional<PathMaskIdx> mask;
  if (cfg.path_mask) mask = resolve_mask(g, validate_mask(g, *cfg.path_mask));
  const std::vector<std::vector<double>> inputs =
      factual_inputs(data, art.eps_hat, mask);

  // Fair predictor hyperparameters.
  int pdeg = cfg.predictor_degree.value_or(1);
  double plam = cfg.predictor_lambda.value_or(1e-4);
  if (!cfg.predictor_degree || !cfg.predictor_lambda) {
    CvPlan plan = make_cv_plan(
        data.n(),
        cfg.predictor_degree ? std::vector<int>{*cfg.predictor_degree}
                             : cfg.predictor_degree_grid,
        cfg.predictor_lambda ? std::vector<double>{*cfg.predictor_lambda}
                             : cfg.predictor_lambda_grid,
        cfg.seed + 41);
    art.predictor_selection = select_predictor(inputs, data.y, plan);
    pdeg = art.predictor_selection->degree;
    plam = art.predictor_selection->lambda;
  }
  art.predictor_degree = pdeg;
  art.predictor_lambda = plam;
  art.predictor = fit_cf(inputs, data.y, pdeg, plam, mask);

  // Reference predictors.
  int bdeg = cfg.baseline_degree.value_or(pdeg);
  double blam = cfg.baseline_lambda.value_or(plam);
  if (!cfg.baseline_degree || !cfg.baseline_lambda) {
    std::vector<std::vector<double>> uc_inputs;
    uc_inputs.reserve(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
      std::vector<double> in;
      in.reserve(data.m() + 1);
      in.push_back(data.a[i]);
      for (std::size_t j = 0; j < data.m(); ++j) in.push_back(data.x(i, j));
      uc_inputs.push_back(std::move(in));
    }
    CvPlan plan = make_cv_plan(
        data.n(),
        cfg.baseline_degree ? std::vector<int>{*cfg.baseline_degree}
                            : cfg.predictor_degree_grid,
        cfg.baseline_lambda ? std::vector<double>{*cfg.baseline_lambda}
                            : cfg.predictor_lambda_grid,
        cfg.seed + 73);
    art.baseline_selection = select_predictor(uc_inputs, data.y, plan);
    bdeg = art.baseline_selection->degree;
    blam = art.baseline_selection->lambda;
  }
  art.baseline_degree = bdeg;
  art.baseline_lambda = blam;
  art.unconstrained =
      fit_baseline(BaselineKind::kUnconstrained, data.a, data.x, data.y, bdeg, blam);
  art.blind = fit_baseline(BaselineKind::kBlind, data.a, data.x, data.y, bdeg, blam);

  // Predictions and reference unfairness.
  art.cf_predictions.reserve(data.n());
  art.uc_predictions.reserve(data.n());
  art.buc_predictions.reserve(data.n());
  std::vector<double> x_row(data.m());
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.m(); ++j) x_row[j] = data.x(i, j);
    art.cf_predictions.push_back(
        art.predictor.predict(std::span<const double>(inputs[i])));
    art.uc_predictions.push_back(
        art.unconstrained.predict(data.a[i], std::span<const double>(x_row)));
    art.buc_predictions.push_back(
        art.blind.predict(data.a[i], std::span<const double>(x_row)));
  }
  art.unfairness_unconstrained =
      baseline_unfairness(art.cf_predictions, art.uc_predictions);
  art.unfairness_blind =
      baseline_unfairness(art.cf_predictions, art.buc_predictions);
  return art;
}

struct CfuEvaluation {
  double cfu = 0.0;
  double objective = 0.0;  // model-B objective at the hypothesized correlation
  bool jittered = false;
  bool max_iterations_hit = false;
  FittedAnm model_b;
};

// CFU of the fair predictor under a hypothesized error correlation, all in
// doubles: fit the correlated model, abduct per-sample noise under it,
// flip the protected value, replay the structural equations, and average
// the squared prediction gaps.
inline CfuEvaluation evaluate_cfu(const Dataset& data,
                                  const PipelineArtifacts& art,
                                  const Mat<double>& p_corr,
                                  const FitControls& controls = FitControls{},
                                  const FittedAnm* warm_start = nullptr,
                                  const GlsMoments* moments = nullptr) {
  CfuEvaluation eval;
  eval.model_b = fit_model_b(data, art.graph, art.bases, art.model_a.lambda,
                             p_corr, controls, warm_start, moments);
  eval.objective = eval.model_b.objective;
  eval.jittered = eval.model_b.jittered;
  eval.max_iterations_hit = eval.model_b.max_iterations_hit;

  const std::size_t m = data.m();
  const std::optional<PathMaskIdx>& mask = art.predictor.mask;
  std::vector<double> x_row(m);
  std::vector<double> eps_row(m);
  std::vector<double> delta(m);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < m; ++j) x_row[j] = data.x(i, j);
    // Abduction under the correlated model.
    for (std::size_t j = 0; j < m; ++j) {
      const std::vector<double> phi = embed_feature<double>(
          art.graph, art.bases, j, data.a[i], std::span<const double>(x_row));
      double pred = 0.0;
      for (std::size_t k = 0; k < phi.size(); ++k)
        pred += phi[k] * eval.model_b.w[art.bases.offset[j] + k];
      delta[j] = data.x(i, j) - pred;
    }
    const CounterfactualResult<double> cf = propagate_counterfactual<double>(
        art.graph, art.bases, eval.model_b.w, art.model_a.w, 1.0 - data.a[i],
        delta);
    for (std::size_t j = 0; j < m; ++j) eps_row[j] = art.eps_hat(i, j);
    const std::vector<double> in_factual = predictor_input<double>(
        mask, std::span<const double>(eps_row), std::span<const double>(x_row));
    const std::vector<double> in_cf = predictor_input<double>(
        mask, std::span<const double>(cf.eps_cf),
        std::span<const double>(cf.x_cf));
    acc += cfu_one<double>(art.predictor, in_factual,
                           std::span<const double>(in_cf));
  }
  eval.cfu = acc / static_cast<double>(data.n());
  return eval;
}

}  // namespace cfsense
