#pragma once

// Bivariate sensitivity sweep: for two features, scan the single error
// correlation p over a grid, refit the correlated model at each point, and
// report the counterfactual unfairness of the fixed fair predictor. Fits
// warm-start from the previous grid point (single-threaded sweeps), or
// cold-start per point when running on several threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "cfsense/errors.hpp"
#include "cfsense/pipeline.hpp"

namespace cfsense {

// Warning bits attached to each curve point.
enum CurveWarning : unsigned {
  kWarnNone = 0u,
  kWarnJittered = 1u,
  kWarnMaxIterations = 2u,
  kWarnSkipped = 4u,
};

struct CurvePoint {
  double p = 0.0;
  double cfu = 0.0;
  double objective = 0.0;
  unsigned warnings = kWarnNone;
};

struct SensitivityCurve {
  std::vector<CurvePoint> points;  // sorted by p
  double unfairness_unconstrained = 0.0;
  double unfairness_blind = 0.0;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out;
  if (count == 0) return out;
  if (count == 1) {
    out.push_back(lo);
    return out;
  }
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(lo + (hi - lo) * static_cast<double>(i) /
                           static_cast<double>(count - 1));
  return out;
}

inline std::vector<double> default_p_grid() { return linspace(-0.99, 0.99, 41); }

// Runs the sweep. Requires exactly two features; grid values must lie in
// (-1, 1). Points where the fit fails are kept with NaN values and the
// skipped flag so the curve layout is stable.
inline SensitivityCurve sweep(const Dataset& data, const PipelineArtifacts& art,
                              std::vector<double> p_grid,
                              const FitControls& controls = FitControls{},
                              unsigned threads = 1) {
  if (data.m() != 2)
    throw NotBivariate("grid sweep requires exactly two features, got " +
                       std::to_string(data.m()));
  for (double p : p_grid)
    if (!(std::abs(p) < 1.0))
      throw NotPositiveDefinite("grid correlation must lie in (-1, 1)");
  std::sort(p_grid.begin(), p_grid.end());

  SensitivityCurve curve;
  curve.unfairness_unconstrained = art.unfairness_unconstrained;
  curve.unfairness_blind = art.unfairness_blind;
  curve.points.resize(p_grid.size());

  const DesignCache cache = build_design_cache(data, art.graph, art.bases);
  const GlsMoments moments = compute_moments(data, cache, art.bases);

  auto eval_point = [&](double p, const FittedAnm* warm,
                        FittedAnm* fitted_out) -> CurvePoint {
    CurvePoint pt;
    pt.p = p;
    Mat<double> corr = Mat<double>::identity(2);
    corr(0, 1) = p;
    corr(1, 0) = p;
    try {
      CfuEvaluation eval =
          evaluate_cfu(data, art, corr, controls, warm, &moments);
      pt.cfu = eval.cfu;
      pt.objective = eval.objective;
      if (eval.jittered) pt.warnings |= kWarnJittered;
      if (eval.max_iterations_hit) pt.warnings |= kWarnMaxIterations;
      if (fitted_out) *fitted_out = std::move(eval.model_b);
    } catch (const std::exception&) {
      pt.cfu = std::numeric_limits<double>::quiet_NaN();
      pt.objective = std::numeric_limits<double>::quiet_NaN();
      pt.warnings |= kWarnSkipped;
    }
    return pt;
  };

  if (threads <= 1) {
    FittedAnm warm;
    bool have_warm = false;
    for (std::size_t i = 0; i < p_grid.size(); ++i) {
      // Warm-starting from the neighboring fit keeps the sweep fast and
      // the fitted path continuous in p.
      FittedAnm fitted;
      curve.points[i] =
          eval_point(p_grid[i], have_warm ? &warm : nullptr, &fitted);
      if (!(curve.points[i].warnings & kWarnSkipped)) {
        warm = std::move(fitted);
        have_warm = true;
      }
    }
  } else {
    // Deterministic parallel mode: every point cold-starts, so results do
    // not depend on the schedule; output order is the sorted grid.
    std::vector<std::thread> pool;
    const std::size_t total = p_grid.size();
    std::vector<CurvePoint> pts(total);
    auto worker = [&](std::size_t begin, std::size_t stride) {
      for (std::size_t i = begin; i < total; i += stride)
        pts[i] = eval_point(p_grid[i], nullptr, nullptr);
    };
    const std::size_t nthreads = std::min<std::size_t>(threads, total);
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t)
      pool.emplace_back(worker, t, nthreads);
    for (auto& th : pool) th.join();
    curve.points = std::move(pts);
  }
  return curve;
}

}  // namespace cfsense
