#pragma once

// Worst-case counterfactual unfairness search over budget-constrained
// error correlations.
//
// The search ascends CFU as a function of the raw correlation parameters
// L. One forward evaluation at a minibatch: materialize P(L), refit the
// correlated structural model by a fixed unrolled number of alternations
// (so the whole fit is one differentiable program), abduct and flip every
// batch sample, and average the squared prediction gaps. Reverse-mode
// differentiation of that program gives the exact gradient of the
// computed quantity; plain gradient ascent with a minibatch per iteration
// does the rest.
//
// The inner fit's ridge weight is scaled by batch/n so the batch objective
// matches the full-data objective in expectation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfsense/autodiff.hpp"
#include "cfsense/correlation.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/pipeline.hpp"
#include "cfsense/rng.hpp"

namespace cfsense {

struct IterationRecord {
  int iter = 0;
  double cfu = 0.0;        // minibatch CFU at the evaluated parameters
  double grad_norm = 0.0;  // Euclidean norm over free L entries
  double min_eig = 0.0;    // smallest eigenvalue of materialized P
  double max_abs_offdiag = 0.0;
};

struct DivergenceDetected : std::runtime_error {
  DivergenceDetected(const std::string& msg, std::vector<IterationRecord> t)
      : std::runtime_error(msg), trace(std::move(t)) {}
  std::vector<IterationRecord> trace;
};

struct GradientCheckReport {
  bool ran = false;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
};

struct OptimizerConfig {
  double p_max = 0.5;
  double learning_rate = 0.05;
  int iterations = 300;
  std::size_t minibatch = 256;
  // Independent ascent runs; the best final CFU wins. The raw-parameter
  // landscape has symmetric basins (a correlation and its negation can
  // both be local maxima), so at least two starts is cheap insurance.
  int restarts = 2;
  bool step_decay = false;
  std::uint64_t seed = 0;
  // Feature-index cliques restricting which correlations may move; empty
  // means a dense lower-triangular parameterization.
  std::vector<std::vector<std::size_t>> cliques;
  // Unrolled inner fit controls; fixed_iterations is forced on.
  FitControls inner = {.max_alternations = 8, .sigma_steps = 4,
                       .fixed_iterations = true};
  std::optional<Mat<double>> warm_start_l;
  bool gradient_check = true;
  std::size_t gradient_check_batch = 64;
};

struct MaxCfuResult {
  Mat<double> l;
  Mat<double> p;
  double cfu_final = 0.0;        // full-data CFU at the final correlation
  double objective_final = 0.0;  // full-data correlated-fit objective
  std::vector<IterationRecord> trace;
  PsdReport psd;
  GradientCheckReport gradient_check;
  int inner_failures = 0;
  int best_restart = 0;
  bool diverged = false;
  double p_max = 0.0;
};

// Constants reused across all forward evaluations of one search.
struct CfuWorkspace {
  const Dataset* data = nullptr;
  const PipelineArtifacts* art = nullptr;
  DesignCache cache;
  std::vector<std::vector<double>> factual_rows;  // factual predictor inputs
};

inline CfuWorkspace make_cfu_workspace(const Dataset& data,
                                       const PipelineArtifacts& art) {
  CfuWorkspace ws;
  ws.data = &data;
  ws.art = &art;
  ws.cache = build_design_cache(data, art.graph, art.bases);
  ws.factual_rows = factual_inputs(data, art.eps_hat, art.predictor.mask);
  return ws;
}

struct CfuForwardOut {
  ad::Var cfu;
  bool jittered = false;
};

// One differentiable CFU evaluation at raw parameters `lvar` on a batch.
// Throws InnerFitFailure when the inner fit cannot proceed numerically.
inline CfuForwardOut cfu_forward(const Mat<ad::Var>& lvar, double p_max,
                                 const CfuWorkspace& ws,
                                 std::span<const std::size_t> batch,
                                 double lambda_scaled,
                                 const FitControls& inner) {
  using ad::Var;
  const Dataset& data = *ws.data;
  const PipelineArtifacts& art = *ws.art;
  const std::size_t m = data.m();

  const GlsMoments mom =
      compute_moments(data, ws.cache, art.bases, batch);
  const Mat<Var> p = materialize<Var>(lvar, p_max);

  std::vector<Var> w0;
  w0.reserve(art.model_a.w.size());
  for (double w : art.model_a.w) w0.push_back(Var(w));
  std::vector<Var> ls0;
  ls0.reserve(m);
  for (double s : art.model_a.sigmas) ls0.push_back(Var(std::log(s)));

  FitControls controls = inner;
  controls.fixed_iterations = true;

  AltFit<Var> fit;
  try {
    fit = fit_alternating<Var>(mom, p, lambda_scaled, std::move(w0),
                               std::move(ls0), controls);
  } catch (const NotPositiveDefinite& e) {
    throw InnerFitFailure(e.what());
  } catch (const SingularNormalEquations& e) {
    throw InnerFitFailure(e.what());
  }

  CfuForwardOut out;
  out.jittered = fit.jittered;
  Var acc{};
  std::vector<Var> delta(m);
  for (std::size_t i : batch) {
    const auto& phi_i = ws.cache.phi[i];
    for (std::size_t j = 0; j < m; ++j) {
      Var mean{};
      for (std::size_t k = 0; k < phi_i[j].size(); ++k)
        mean = mean + phi_i[j][k] * fit.w[art.bases.offset[j] + k];
      delta[j] = data.x(i, j) - mean;
    }
    const CounterfactualResult<Var> cf = propagate_counterfactual<Var>(
        art.graph, art.bases, fit.w, art.model_a.w, 1.0 - data.a[i], delta);
    const std::vector<Var> in_cf = predictor_input<Var>(
        art.predictor.mask, std::span<const Var>(cf.eps_cf),
        std::span<const Var>(cf.x_cf));
    acc = acc + cfu_one<Var>(art.predictor, ws.factual_rows[i],
                             std::span<const Var>(in_cf));
  }
  out.cfu = acc / static_cast<double>(batch.size());
  return out;
}

namespace detail {

inline Mat<ad::Var> lift_params(ad::Tape& tape, const CorrelationParams& cp) {
  Mat<ad::Var> lvar(cp.l.rows(), cp.l.cols());
  for (std::size_t i = 0; i < cp.l.rows(); ++i)
    for (std::size_t j = 0; j < cp.l.cols(); ++j)
      lvar(i, j) = cp.pattern(i, j) != 0.0 ? tape.variable(cp.l(i, j))
                                           : ad::Var(0.0);
  return lvar;
}

// Mirrors the sign of the random perturbation so consecutive restarts
// start on opposite sides of the uncorrelated saddle.
inline void flip_init_signs(CorrelationParams& cp, bool dense) {
  for (std::size_t i = 0; i < cp.l.rows(); ++i)
    for (std::size_t j = 0; j < cp.l.cols(); ++j) {
      if (cp.pattern(i, j) == 0.0) continue;
      if (dense) {
        if (i > j) cp.l(i, j) = -cp.l(i, j);
      } else {
        cp.l(i, j) = 2.0 - cp.l(i, j);  // reflect noise around the base 1.0
      }
    }
}

struct AscentOutcome {
  CorrelationParams params;
  std::vector<IterationRecord> trace;
  int inner_failures = 0;
  // Raw parameters at the last iteration whose forward pass succeeded.
  // Empty only when every iteration failed from the starting point.
  std::optional<Mat<double>> last_good;
};

inline AscentOutcome ascend(const CfuWorkspace& ws, CorrelationParams cp,
                            const OptimizerConfig& cfg,
                            std::uint64_t batch_seed) {
  const Dataset& data = *ws.data;
  const std::size_t n = data.n();
  const std::size_t batch_size = std::min(cfg.minibatch, n);
  const double lambda_scaled = ws.art->model_a.lambda *
                               static_cast<double>(batch_size) /
                               static_cast<double>(n);
  Rng rng(batch_seed);
  ad::Tape tape;
  AscentOutcome out;
  out.params = std::move(cp);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;

  for (int t = 0; t < cfg.iterations; ++t) {
    const std::vector<std::size_t> batch =
        batch_size < n ? rng.sample(n, batch_size) : all;

    IterationRecord rec;
    rec.iter = t;
    const Mat<double> p_now = materialize(out.params);
    const PsdReport psd = psd_check(p_now);
    rec.min_eig = psd.min_eigenvalue;
    for (std::size_t i = 0; i < p_now.rows(); ++i)
      for (std::size_t j = i + 1; j < p_now.cols(); ++j)
        rec.max_abs_offdiag = std::max(rec.max_abs_offdiag,
                                       std::abs(p_now(i, j)));

    tape.clear();
    const Mat<ad::Var> lvar = lift_params(tape, out.params);
    bool failed = false;
    ad::Var cfu;
    try {
      CfuForwardOut fo = cfu_forward(lvar, cfg.p_max, ws, batch,
                                     lambda_scaled, cfg.inner);
      cfu = fo.cfu;
    } catch (const InnerFitFailure&) {
      failed = true;
    }
    if (failed) {
      // A step can leave the positive-definite cone: the entrywise budget
      // box is larger than the cone for three or more features. Record the
      // penalty, undo the offending step, and let the next minibatch
      // propose a different direction from feasible ground.
      rec.cfu = -1e6;
      rec.grad_norm = 0.0;
      ++out.inner_failures;
      out.trace.push_back(rec);
      if (out.last_good) out.params.l = *out.last_good;
      continue;
    }
    rec.cfu = cfu.value();
    if (!std::isfinite(rec.cfu)) {
      out.trace.push_back(rec);
      throw DivergenceDetected("CFU became non-finite during ascent",
                               out.trace);
    }
    const std::vector<double> adj = tape.gradient(cfu);
    double g2 = 0.0;
    for (std::size_t i = 0; i < lvar.rows(); ++i)
      for (std::size_t j = 0; j < lvar.cols(); ++j) {
        const double g = ad::Tape::grad(adj, lvar(i, j));
        g2 += g * g;
      }
    rec.grad_norm = std::sqrt(g2);
    if (!std::isfinite(rec.grad_norm)) {
      out.trace.push_back(rec);
      throw DivergenceDetected("gradient became non-finite during ascent",
                               out.trace);
    }
    const double step =
        cfg.step_decay
            ? cfg.learning_rate /
                  (1.0 + static_cast<double>(t) /
                             std::max(1.0, static_cast<double>(cfg.iterations)))
            : cfg.learning_rate;
    out.last_good = out.params.l;
    for (std::size_t i = 0; i < lvar.rows(); ++i)
      for (std::size_t j = 0; j < lvar.cols(); ++j)
        if (out.params.pattern(i, j) != 0.0)
          out.params.l(i, j) += step * ad::Tape::grad(adj, lvar(i, j));
    out.trace.push_back(rec);
  }
  return out;
}

}  // namespace detail

// Finite-difference spot check of the ascent gradient at `cp` on a fixed
// probe batch; reports the worst relative error across free entries.
inline GradientCheckReport check_gradient(const CfuWorkspace& ws,
                                          const CorrelationParams& cp,
                                          const OptimizerConfig& cfg,
                                          std::span<const std::size_t> batch,
                                          double h = 1e-5) {
  const double lambda_scaled = ws.art->model_a.lambda *
                               static_cast<double>(batch.size()) /
                               static_cast<double>(ws.data->n());
  FitControls inner = cfg.inner;
  inner.fixed_iterations = true;

  GradientCheckReport report;
  report.ran = true;
  ad::Tape tape;
  const Mat<ad::Var> lvar = detail::lift_params(tape, cp);
  const CfuForwardOut fo =
      cfu_forward(lvar, cfg.p_max, ws, batch, lambda_scaled, inner);
  const std::vector<double> adj = tape.gradient(fo.cfu);

  auto value_at = [&](const CorrelationParams& params) {
    ad::Tape local;
    const Mat<ad::Var> lv = detail::lift_params(local, params);
    return cfu_forward(lv, cfg.p_max, ws, batch, lambda_scaled, inner)
        .cfu.value();
  };

  for (std::size_t i = 0; i < cp.l.rows(); ++i)
    for (std::size_t j = 0; j < cp.l.cols(); ++j) {
      if (cp.pattern(i, j) == 0.0) continue;
      CorrelationParams plus = cp;
      CorrelationParams minus = cp;
      plus.l(i, j) += h;
      minus.l(i, j) -= h;
      const double fd = (value_at(plus) - value_at(minus)) / (2.0 * h);
      const double ad_g = ad::Tape::grad(adj, lvar(i, j));
      const double denom = std::max({std::abs(fd), std::abs(ad_g), 1e-10});
      report.max_rel_error =
          std::max(report.max_rel_error, std::abs(ad_g - fd) / denom);
      ++report.entries;
    }
  return report;
}

// Full search: several gradient-ascent runs from perturbed starts (plus
// the warm start when given), each followed by a converged full-data
// evaluation; the run with the highest final CFU wins.
inline MaxCfuResult maximize(const Dataset& data, const PipelineArtifacts& art,
                             const OptimizerConfig& cfg) {
  if (!(cfg.p_max >= 0.0 && cfg.p_max < 1.0))
    throw NotPositiveDefinite("correlation budget must lie in [0, 1)");
  if (cfg.iterations < 1 || cfg.learning_rate <= 0.0)
    throw ConfigError("maxcfu", "iterations and learning rate must be positive");
  if (cfg.minibatch < 1)
    throw ConfigError("maxcfu.minibatch", "must be at least 1");
  const std::size_t m = data.m();
  const bool dense = cfg.cliques.empty();

  const CfuWorkspace ws = make_cfu_workspace(data, art);

  std::optional<MaxCfuResult> best;
  const int restarts = std::max(1, cfg.restarts);
  for (int r = 0; r < restarts; ++r) {
    CorrelationParams cp;
    if (r == 0 && cfg.warm_start_l) {
      cp = dense ? dense_params(m, cfg.p_max, cfg.seed)
                 : clique_params(m, cfg.cliques, cfg.p_max, cfg.seed);
      if (cfg.warm_start_l->rows() != cp.l.rows() ||
          cfg.warm_start_l->cols() != cp.l.cols())
        throw DimensionMismatch("warm start shape does not match parameterization");
      cp.l = *cfg.warm_start_l;
    } else {
      const std::uint64_t rs = cfg.seed + 1000ull * static_cast<std::uint64_t>(r);
      cp = dense ? dense_params(m, cfg.p_max, rs)
                 : clique_params(m, cfg.cliques, cfg.p_max, rs);
      if (r % 2 == 1) detail::flip_init_signs(cp, dense);
    }

    detail::AscentOutcome run = detail::ascend(
        ws, std::move(cp), cfg,
        cfg.seed + 31ull * static_cast<std::uint64_t>(r) + 7ull);

    MaxCfuResult res;
    res.l = run.params.l;
    res.p = materialize(run.params);
    res.trace = std::move(run.trace);
    res.inner_failures = run.inner_failures;
    res.psd = psd_check(res.p);
    res.best_restart = r;
    res.p_max = cfg.p_max;

    // Converged full-data evaluation at the final correlation. The last
    // ascent step is applied after its gradient is measured, so it can
    // overshoot the positive-definite cone; retry at the last point whose
    // forward pass succeeded before writing the restart off.
    FitControls full;
    auto try_eval = [&]() {
      try {
        const CfuEvaluation eval = evaluate_cfu(data, art, res.p, full);
        res.cfu_final = eval.cfu;
        res.objective_final = eval.objective;
        return true;
      } catch (const NotPositiveDefinite&) {
        return false;
      } catch (const SingularNormalEquations&) {
        return false;
      }
    };
    bool evaluated = try_eval();
    if (!evaluated && run.last_good) {
      run.params.l = *run.last_good;
      res.l = run.params.l;
      res.p = materialize(run.params);
      res.psd = psd_check(res.p);
      evaluated = try_eval();
    }
    if (!evaluated) {
      res.diverged = true;
      res.cfu_final = std::numeric_limits<double>::quiet_NaN();
      res.objective_final = std::numeric_limits<double>::quiet_NaN();
    }

    if (cfg.gradient_check && evaluated) {
      Rng rng(cfg.seed + 999);
      const std::vector<std::size_t> probe =
          rng.sample(data.n(), std::min(cfg.gradient_check_batch, data.n()));
      try {
        res.gradient_check = check_gradient(ws, run.params, cfg, probe);
      } catch (const InnerFitFailure&) {
        res.gradient_check.ran = false;
      }
    }

    const bool better =
        !best || (evaluated && (std::isnan(best->cfu_final) ||
                                res.cfu_final > best->cfu_final));
    if (better) best = std::move(res);
  }
  return *best;
}

// Ascending-budget sweep; each budget warm-starts from the previous
// winner's raw parameters. A diverged budget contributes a flagged stub
// and the next budget cold-starts.
inline std::vector<MaxCfuResult> budget_sweep(const Dataset& data,
                                              const PipelineArtifacts& art,
                                              std::vector<double> budgets,
                                              OptimizerConfig cfg) {
  std::sort(budgets.begin(), budgets.end());
  std::vector<MaxCfuResult> out;
  std::optional<Mat<double>> warm;
  for (double b : budgets) {
    OptimizerConfig c = cfg;
    c.p_max = b;
    c.warm_start_l = warm;
    try {
      MaxCfuResult res = maximize(data, art, c);
      if (res.diverged)
        warm.reset();
      else
        warm = res.l;
      out.push_back(std::move(res));
    } catch (const DivergenceDetected& e) {
      MaxCfuResult stub;
      stub.diverged = true;
      stub.trace = e.trace;
      stub.p_max = b;
      stub.cfu_final = std::numeric_limits<double>::quiet_NaN();
      out.push_back(std::move(stub));
      warm.reset();
    }
  }
  return out;
}

}  // namespace cfsense
