#pragma once

// JSON and CSV serialization of fitted models and tool outputs. All output
// is deterministic: nlohmann::json orders keys, doubles render with
// shortest round-trip formatting, and nothing time- or pointer-dependent
// is written.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsense/anm.hpp"
#include "cfsense/gridtool.hpp"
#include "cfsense/maxcfu.hpp"
#include "cfsense/modelsel.hpp"
#include "cfsense/pipeline.hpp"

namespace cfsense {

using json = nlohmann::json;

inline json to_json(const Mat<double>& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat<double> mat_from_json(const json& j) {
  const std::size_t rows = j.size();
  const std::size_t cols = rows > 0 ? j.at(0).size() : 0;
  Mat<double> m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k)
      m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

// Fitted reference model, weights keyed by feature name.
inline json model_to_json(const FittedAnm& model, const CausalGraph& g,
                          const NodeBases& nb) {
  json weights = json::object();
  json sigmas = json::object();
  json degrees = json::object();
  for (std::size_t j = 0; j < g.num_features(); ++j) {
    json wj = json::array();
    for (std::size_t k = 0; k < nb.per_feature[j].dim; ++k)
      wj.push_back(model.w[nb.offset[j] + k]);
    weights[g.feature_name(j)] = std::move(wj);
    sigmas[g.feature_name(j)] = model.sigmas[j];
    degrees[g.feature_name(j)] = model.degrees[j];
  }
  json out;
  out["weights"] = std::move(weights);
  out["sigmas"] = std::move(sigmas);
  out["degrees"] = std::move(degrees);
  out["include_bias"] = model.include_bias;
  out["lambda"] = model.lambda;
  out["objective"] = model.objective;
  out["correlation"] = to_json(model.p);
  out["jittered"] = model.jittered;
  out["max_iterations_hit"] = model.max_iterations_hit;
  return out;
}

inline json selection_to_json(const SelectionReport& sel) {
  json out;
  out["degree"] = sel.degree;
  out["lambda"] = sel.lambda;
  out["degree_grid"] = sel.degree_grid;
  out["lambda_grid"] = sel.lambda_grid;
  json scores = json::array();
  for (std::size_t i = 0; i < sel.mean_scores.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < sel.mean_scores.cols(); ++j) {
      const double v = sel.mean_scores(i, j);
      if (std::isfinite(v)) row.push_back(v);
      else row.push_back(nullptr);
    }
    scores.push_back(std::move(row));
  }
  out["mean_scores"] = std::move(scores);
  return out;
}

inline json curve_to_json(const SensitivityCurve& curve) {
  json pts = json::array();
  for (const auto& pt : curve.points) {
    json p;
    p["p"] = pt.p;
    if (std::isfinite(pt.cfu)) p["cfu"] = pt.cfu;
    else p["cfu"] = nullptr;
    if (std::isfinite(pt.objective)) p["objective"] = pt.objective;
    else p["objective"] = nullptr;
    p["warn"] = pt.warnings;
    pts.push_back(std::move(p));
  }
  json out;
  out["points"] = std::move(pts);
  out["unfairness_unconstrained"] = curve.unfairness_unconstrained;
  out["unfairness_blind"] = curve.unfairness_blind;
  return out;
}

inline json maxcfu_to_json(const MaxCfuResult& res) {
  json out;
  out["p_max"] = res.p_max;
  out["diverged"] = res.diverged;
  if (std::isfinite(res.cfu_final)) out["cfu"] = res.cfu_final;
  else out["cfu"] = nullptr;
  out["objective"] = res.objective_final;
  out["iterations"] = res.trace.size();
  out["inner_failures"] = res.inner_failures;
  out["best_restart"] = res.best_restart;
  if (!res.diverged) {
    out["l"] = to_json(res.l);
    out["correlation"] = to_json(res.p);
    out["min_eigenvalue"] = res.psd.min_eigenvalue;
    out["is_psd"] = res.psd.is_psd;
  }
  if (res.gradient_check.ran) {
    json gc;
    gc["entries"] = res.gradient_check.entries;
    gc["max_rel_error"] = res.gradient_check.max_rel_error;
    out["gradient_check"] = std::move(gc);
  }
  return out;
}

namespace detail {

inline void append_g17(std::string& s, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  s += buf;
}

}  // namespace detail

// curve.csv: one row per grid point, `warn` is the warning bitmask
// (1 = jittered, 2 = iteration cap, 4 = skipped).
inline void write_curve_csv(const SensitivityCurve& curve,
                            const std::string& path) {
  std::string s = "p,cfu,objective,warn\n";
  for (const auto& pt : curve.points) {
    detail::append_g17(s, pt.p);
    s += ',';
    detail::append_g17(s, pt.cfu);
    s += ',';
    detail::append_g17(s, pt.objective);
    s += ',';
    s += std::to_string(pt.warnings);
    s += '\n';
  }
  std::ofstream out(path);
  out << s;
}

// trace_<budget>.csv: optimizer trajectory.
inline void write_trace_csv(const std::vector<IterationRecord>& trace,
                            const std::string& path) {
  std::string s = "iter,cfu,grad_norm,min_eig\n";
  for (const auto& rec : trace) {
    s += std::to_string(rec.iter);
    s += ',';
    detail::append_g17(s, rec.cfu);
    s += ',';
    detail::append_g17(s, rec.grad_norm);
    s += ',';
    detail::append_g17(s, rec.min_eig);
    s += '\n';
  }
  std::ofstream out(path);
  out << s;
}

// predictions.csv: per-sample target and the three predictors' outputs.
inline void write_predictions_csv(const Dataset& data,
                                  const PipelineArtifacts& art,
                                  const std::string& path) {
  std::string s = "id,y,y_cf,y_uc,y_buc\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    s += std::to_string(i);
    s += ',';
    detail::append_g17(s, data.y[i]);
    s += ',';
    detail::append_g17(s, art.cf_predictions[i]);
    s += ',';
    detail::append_g17(s, art.uc_predictions[i]);
    s += ',';
    detail::append_g17(s, art.buc_predictions[i]);
    s += '\n';
  }
  std::ofstream out(path);
  out << s;
}

}  // namespace cfsense
