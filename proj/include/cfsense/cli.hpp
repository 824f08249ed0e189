#pragma once

// Run configuration, orchestration, and the built-in self test. A run is
// described by one JSON document; command-line flags may override the
// tool, grids, seed, output directory, and thread count. Outputs land in
// the configured directory: summary.json and model_a.json always,
// predictions.csv always, curve.csv for grid sweeps, trace_<budget>.csv
// per optimizer budget.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsense/anm.hpp"
#include "cfsense/correlation.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/gridtool.hpp"
#include "cfsense/io.hpp"
#include "cfsense/maxcfu.hpp"
#include "cfsense/pipeline.hpp"
#include "cfsense/serialize.hpp"

namespace cfsense {

struct RunConfig {
  enum class Source { kCsv, kSynthetic };
  Source source = Source::kCsv;

  std::string csv_path;
  CsvSchema schema;
  bool standardize = true;

  // Synthetic generation (graph shared with the main graph section).
  std::size_t synthetic_n = 0;
  std::uint64_t synthetic_seed = 0;
  int synthetic_degree = 1;
  std::vector<std::vector<double>> synthetic_w;  // graph feature order
  std::vector<double> synthetic_sigmas;
  Mat<double> synthetic_p;
  TargetSpec synthetic_target;
  double synthetic_protected_rate = 0.5;

  CausalGraph graph;  // validated during parsing
  PipelineConfig pipeline;

  std::string tool = "grid";  // grid | maxcfu | baselines | all
  std::vector<double> p_grid = default_p_grid();
  std::vector<double> budgets = {0.5};
  OptimizerConfig optimizer;
  std::vector<std::vector<std::string>> clique_names;
  FitControls fit_controls;

  std::string out_dir = "out";
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

namespace cfg {

inline const json& require(const json& j, const std::string& key,
                           const std::string& path) {
  if (!j.is_object() || !j.contains(key))
    throw ConfigError(path.empty() ? key : path + "." + key, "missing");
  return j.at(key);
}

template <class T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("wrong type: ") + e.what());
  }
}

template <class T>
T require_as(const json& j, const std::string& key, const std::string& path) {
  return get_as<T>(require(j, key, path),
                   path.empty() ? key : path + "." + key);
}

template <class T>
T optional_as(const json& j, const std::string& key, const std::string& path,
              T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_as<T>(j.at(key), path.empty() ? key : path + "." + key);
}

// "lo:hi:count" or an explicit array of numbers.
inline std::vector<double> parse_grid(const json& j, const std::string& path) {
  if (j.is_array()) return get_as<std::vector<double>>(j, path);
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    double lo = 0.0;
    double hi = 0.0;
    int count = 0;
    if (std::sscanf(s.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 ||
        count < 1)
      throw ConfigError(path, "expected 'lo:hi:count' or an array");
    return linspace(lo, hi, static_cast<std::size_t>(count));
  }
  throw ConfigError(path, "expected 'lo:hi:count' or an array");
}

inline std::vector<double> parse_grid_string(const std::string& s,
                                             const std::string& path) {
  return parse_grid(json(s), path);
}

}  // namespace cfg

inline RunConfig parse_config(const json& j) {
  RunConfig rc;

  rc.seed = cfg::require_as<std::uint64_t>(j, "seed", "");

  // Graph.
  {
    const json& jg = cfg::require(j, "graph", "");
    rc.graph.nodes = cfg::require_as<std::vector<std::string>>(jg, "nodes", "graph");
    rc.graph.protected_node =
        cfg::require_as<std::string>(jg, "protected", "graph");
    const json& edges = cfg::require(jg, "edges", "graph");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const std::string e =
          cfg::get_as<std::string>(edges.at(i), "graph.edges[" + std::to_string(i) + "]");
      const auto arrow = e.find("->");
      if (arrow == std::string::npos)
        throw ConfigError("graph.edges[" + std::to_string(i) + "]",
                          "expected 'from->to'");
      auto trim = [](std::string s) {
        while (!s.empty() && s.front() == ' ') s.erase(s.begin());
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s;
      };
      rc.graph.edges.emplace_back(trim(e.substr(0, arrow)),
                                  trim(e.substr(arrow + 2)));
    }
    try {
      rc.graph = validate(rc.graph);
    } catch (const std::exception& e) {
      throw ConfigError("graph", e.what());
    }
  }

  // Data source.
  {
    const json& jd = cfg::require(j, "data", "");
    const std::string type = cfg::require_as<std::string>(jd, "type", "data");
    if (type == "csv") {
      rc.source = RunConfig::Source::kCsv;
      rc.csv_path = cfg::require_as<std::string>(jd, "path", "data");
      const json& js = cfg::require(jd, "schema", "data");
      rc.schema.protected_column =
          cfg::require_as<std::string>(js, "protected", "data.schema");
      rc.schema.target_column =
          cfg::require_as<std::string>(js, "target", "data.schema");
      rc.schema.feature_columns = cfg::require_as<std::vector<std::string>>(
          js, "features", "data.schema");
      rc.standardize = cfg::optional_as<bool>(jd, "standardize", "data", true);
    } else if (type == "synthetic") {
      rc.source = RunConfig::Source::kSynthetic;
      rc.synthetic_n = cfg::require_as<std::size_t>(jd, "n", "data");
      rc.synthetic_seed =
          cfg::optional_as<std::uint64_t>(jd, "seed", "data", rc.seed);
      rc.synthetic_degree = cfg::optional_as<int>(jd, "degree", "data", 1);
      rc.synthetic_protected_rate =
          cfg::optional_as<double>(jd, "protected_rate", "data", 0.5);
      rc.standardize = cfg::optional_as<bool>(jd, "standardize", "data", false);

      const std::size_t m = rc.graph.num_features();
      const json& jw = cfg::require(jd, "w_true", "data");
      const json& jsig = cfg::require(jd, "sigmas", "data");
      rc.synthetic_w.resize(m);
      rc.synthetic_sigmas.resize(m);
      for (std::size_t f = 0; f < m; ++f) {
        const std::string& name = rc.graph.feature_name(f);
        rc.synthetic_w[f] = cfg::get_as<std::vector<double>>(
            cfg::require(jw, name, "data.w_true"), "data.w_true." + name);
        rc.synthetic_sigmas[f] = cfg::get_as<double>(
            cfg::require(jsig, name, "data.sigmas"), "data.sigmas." + name);
      }
      const json& jp = cfg::require(jd, "p_true", "data");
      if (jp.is_number()) {
        const double p = jp.get<double>();
        rc.synthetic_p = Mat<double>::identity(m);
        for (std::size_t a = 0; a < m; ++a)
          for (std::size_t b = 0; b < m; ++b)
            if (a != b) rc.synthetic_p(a, b) = p;
      } else {
        rc.synthetic_p = mat_from_json(jp);
      }
      if (jd.contains("target")) {
        const json& jt = jd.at("target");
        rc.synthetic_target.bias =
            cfg::optional_as<double>(jt, "bias", "data.target", 0.0);
        rc.synthetic_target.on_protected =
            cfg::optional_as<double>(jt, "on_protected", "data.target", 0.0);
        rc.synthetic_target.noise_std =
            cfg::optional_as<double>(jt, "noise_std", "data.target", 0.0);
        rc.synthetic_target.on_eps.assign(m, 0.0);
        rc.synthetic_target.on_x.assign(m, 0.0);
        for (std::size_t f = 0; f < m; ++f) {
          const std::string& name = rc.graph.feature_name(f);
          if (jt.contains("on_eps"))
            rc.synthetic_target.on_eps[f] = cfg::optional_as<double>(
                jt.at("on_eps"), name, "data.target.on_eps", 0.0);
          if (jt.contains("on_x"))
            rc.synthetic_target.on_x[f] = cfg::optional_as<double>(
                jt.at("on_x"), name, "data.target.on_x", 0.0);
        }
      }
    } else {
      throw ConfigError("data.type", "expected 'csv' or 'synthetic'");
    }
  }

  // Structural fit and predictor settings.
  if (j.contains("basis")) {
    const json& jb = j.at("basis");
    if (jb.contains("degree")) {
      const json& jd = jb.at("degree");
      if (jd.is_number_integer())
        rc.pipeline.degree = jd.get<int>();
      else if (!(jd.is_string() && jd.get<std::string>() == "cv"))
        throw ConfigError("basis.degree", "expected an integer or 'cv'");
    }
    if (jb.contains("degree_grid"))
      rc.pipeline.degree_grid =
          cfg::get_as<std::vector<int>>(jb.at("degree_grid"), "basis.degree_grid");
  }
  if (j.contains("lambda")) {
    const json& jl = j.at("lambda");
    if (jl.is_number())
      rc.pipeline.lambda = jl.get<double>();
    else if (jl.is_object()) {
      if (jl.contains("value"))
        rc.pipeline.lambda = cfg::get_as<double>(jl.at("value"), "lambda.value");
      if (jl.contains("grid"))
        rc.pipeline.lambda_grid =
            cfg::get_as<std::vector<double>>(jl.at("grid"), "lambda.grid");
    } else if (!(jl.is_string() && jl.get<std::string>() == "cv")) {
      throw ConfigError("lambda", "expected a number, 'cv', or an object");
    }
  }
  if (j.contains("predictor")) {
    const json& jp = j.at("predictor");
    if (jp.contains("degree")) {
      const json& jd = jp.at("degree");
      if (jd.is_number_integer())
        rc.pipeline.predictor_degree = jd.get<int>();
      else if (!(jd.is_string() && jd.get<std::string>() == "cv"))
        throw ConfigError("predictor.degree", "expected an integer or 'cv'");
    }
    if (jp.contains("lambda") && jp.at("lambda").is_number())
      rc.pipeline.predictor_lambda = jp.at("lambda").get<double>();
    if (jp.contains("degree_grid"))
      rc.pipeline.predictor_degree_grid = cfg::get_as<std::vector<int>>(
          jp.at("degree_grid"), "predictor.degree_grid");
    if (jp.contains("lambda_grid"))
      rc.pipeline.predictor_lambda_grid = cfg::get_as<std::vector<double>>(
          jp.at("lambda_grid"), "predictor.lambda_grid");
  }
  if (j.contains("path_mask")) {
    const json& jm = j.at("path_mask");
    PathSpecMask mask;
    mask.unfair_nodes = cfg::require_as<std::vector<std::string>>(
        jm, "unfair", "path_mask");
    mask.fair_nodes =
        cfg::require_as<std::vector<std::string>>(jm, "fair", "path_mask");
    try {
      validate_mask(rc.graph, mask);
    } catch (const std::exception& e) {
      throw ConfigError("path_mask", e.what());
    }
    rc.pipeline.path_mask = std::move(mask);
  }
  rc.pipeline.seed = rc.seed;

  rc.tool = cfg::optional_as<std::string>(j, "tool", "", std::string("grid"));
  if (rc.tool != "grid" && rc.tool != "maxcfu" && rc.tool != "baselines" &&
      rc.tool != "all")
    throw ConfigError("tool", "expected grid, maxcfu, baselines, or all");

  if (j.contains("grid")) {
    const json& jg = j.at("grid");
    if (jg.contains("p_grid"))
      rc.p_grid = cfg::parse_grid(jg.at("p_grid"), "grid.p_grid");
    rc.fit_controls.max_alternations = cfg::optional_as<int>(
        jg, "max_alternations", "grid", rc.fit_controls.max_alternations);
    rc.fit_controls.tol =
        cfg::optional_as<double>(jg, "tol", "grid", rc.fit_controls.tol);
  }

  if (j.contains("maxcfu")) {
    const json& jm = j.at("maxcfu");
    if (jm.contains("budgets"))
      rc.budgets = cfg::parse_grid(jm.at("budgets"), "maxcfu.budgets");
    rc.optimizer.learning_rate = cfg::optional_as<double>(
        jm, "learning_rate", "maxcfu", rc.optimizer.learning_rate);
    rc.optimizer.iterations = cfg::optional_as<int>(
        jm, "iterations", "maxcfu", rc.optimizer.iterations);
    rc.optimizer.minibatch = cfg::optional_as<std::size_t>(
        jm, "minibatch", "maxcfu", rc.optimizer.minibatch);
    rc.optimizer.restarts = cfg::optional_as<int>(
        jm, "restarts", "maxcfu", rc.optimizer.restarts);
    rc.optimizer.step_decay = cfg::optional_as<bool>(
        jm, "step_decay", "maxcfu", rc.optimizer.step_decay);
    rc.optimizer.gradient_check = cfg::optional_as<bool>(
        jm, "gradient_check", "maxcfu", rc.optimizer.gradient_check);
    rc.optimizer.inner.max_alternations = cfg::optional_as<int>(
        jm, "unroll", "maxcfu", rc.optimizer.inner.max_alternations);
    rc.optimizer.inner.sigma_steps = cfg::optional_as<int>(
        jm, "sigma_steps", "maxcfu", rc.optimizer.inner.sigma_steps);
    if (jm.contains("cliques")) {
      const json& jc = jm.at("cliques");
      for (std::size_t c = 0; c < jc.size(); ++c)
        rc.clique_names.push_back(cfg::get_as<std::vector<std::string>>(
            jc.at(c), "maxcfu.cliques[" + std::to_string(c) + "]"));
    }
  }
  rc.optimizer.seed = rc.seed;

  rc.out_dir = cfg::optional_as<std::string>(j, "out", "", std::string("out"));
  rc.threads = cfg::optional_as<unsigned>(j, "threads", "", 1u);
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

namespace detail {

// Reorders dataset columns into the graph's topological feature order.
inline void align_to_graph(Dataset& ds, const CausalGraph& g) {
  const std::size_t m = g.num_features();
  if (ds.m() != m)
    throw DimensionMismatch("dataset has " + std::to_string(ds.m()) +
                            " features, graph expects " + std::to_string(m));
  std::vector<std::size_t> src(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::string& want = g.feature_name(j);
    bool found = false;
    for (std::size_t k = 0; k < m; ++k)
      if (ds.feature_names[k] == want) {
        src[j] = k;
        found = true;
        break;
      }
    if (!found)
      throw MissingColumn("graph node '" + want + "' has no dataset column");
  }
  Mat<double> x(ds.n(), m);
  std::vector<std::string> names(m);
  std::vector<ColumnStats> stats(m);
  for (std::size_t j = 0; j < m; ++j) {
    names[j] = ds.feature_names[src[j]];
    if (src[j] < ds.feature_stats.size()) stats[j] = ds.feature_stats[src[j]];
    for (std::size_t i = 0; i < ds.n(); ++i) x(i, j) = ds.x(i, src[j]);
  }
  ds.x = std::move(x);
  ds.feature_names = std::move(names);
  ds.feature_stats = std::move(stats);
}

inline std::string budget_label(double b) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", b);
  return buf;
}

}  // namespace detail

inline Dataset build_dataset(const RunConfig& rc) {
  if (rc.source == RunConfig::Source::kCsv) {
    Dataset ds = load_csv(rc.csv_path, rc.schema);
    detail::align_to_graph(ds, rc.graph);
    if (rc.standardize) standardize_features(ds);
    return ds;
  }
  SyntheticSpec spec;
  spec.graph = rc.graph;
  spec.bases = make_bases(rc.graph, rc.synthetic_degree);
  spec.w_true = rc.synthetic_w;
  spec.sigmas = rc.synthetic_sigmas;
  spec.p_true = rc.synthetic_p;
  spec.target = rc.synthetic_target;
  spec.n = rc.synthetic_n;
  spec.seed = rc.synthetic_seed;
  spec.protected_rate = rc.synthetic_protected_rate;
  Dataset ds = generate(spec).data;
  if (rc.standardize) standardize_features(ds);
  return ds;
}

// Executes a configured run; returns the process exit code. Partial
// artifacts already written stay on disk if a later stage fails.
inline int run(const RunConfig& rc) {
  namespace fs = std::filesystem;
  fs::create_directories(rc.out_dir);
  const auto path = [&](const std::string& name) {
    return (fs::path(rc.out_dir) / name).string();
  };

  Dataset data = build_dataset(rc);
  const CausalGraph& g = rc.graph;

  PipelineArtifacts art = fit_pipeline(data, g, rc.pipeline);

  json summary;
  summary["seed"] = rc.seed;
  summary["tool"] = rc.tool;
  summary["dataset"] = {{"n", data.n()},
                        {"m", data.m()},
                        {"dropped", data.n_dropped},
                        {"standardized", data.standardized}};
  summary["model_a"] = {{"degree", art.degree},
                        {"lambda", art.lambda},
                        {"objective", art.model_a.objective}};
  summary["predictor"] = {{"degree", art.predictor_degree},
                          {"lambda", art.predictor_lambda}};
  summary["baselines"] = {
      {"unfairness_unconstrained", art.unfairness_unconstrained},
      {"unfairness_blind", art.unfairness_blind},
      {"degree", art.baseline_degree},
      {"lambda", art.baseline_lambda}};
  if (art.structural_selection)
    summary["selection"]["structural"] =
        selection_to_json(*art.structural_selection);
  if (art.predictor_selection)
    summary["selection"]["predictor"] =
        selection_to_json(*art.predictor_selection);
  if (art.baseline_selection)
    summary["selection"]["baseline"] =
        selection_to_json(*art.baseline_selection);

  json model_doc = model_to_json(art.model_a, g, art.bases);
  {
    json pred;
    pred["theta"] = art.predictor.theta;
    pred["degree"] = art.predictor_degree;
    pred["lambda"] = art.predictor_lambda;
    pred["input_dim"] = art.predictor.basis.spec.input_dim;
    model_doc["predictor"] = std::move(pred);
    std::ofstream out(path("model_a.json"));
    out << model_doc.dump(2) << '\n';
  }
  write_predictions_csv(data, art, path("predictions.csv"));

  int exit_code = 0;
  const bool want_grid = rc.tool == "grid" || rc.tool == "all";
  const bool want_max = rc.tool == "maxcfu" || rc.tool == "all";

  if (want_grid) {
    if (data.m() != 2 && rc.tool == "all") {
      summary["grid"] = {{"skipped", "not bivariate"}};
    } else {
      const SensitivityCurve curve =
          sweep(data, art, rc.p_grid, rc.fit_controls, rc.threads);
      write_curve_csv(curve, path("curve.csv"));
      summary["grid"] = curve_to_json(curve);
    }
  }

  if (want_max) {
    OptimizerConfig oc = rc.optimizer;
    for (const auto& clique : rc.clique_names) {
      std::vector<std::size_t> ids;
      for (const auto& name : clique) ids.push_back(g.index_of(name) - 1);
      oc.cliques.push_back(std::move(ids));
    }
    const std::vector<MaxCfuResult> results =
        budget_sweep(data, art, rc.budgets, oc);
    json arr = json::array();
    for (const auto& res : results) {
      write_trace_csv(res.trace,
                      path("trace_" + detail::budget_label(res.p_max) + ".csv"));
      arr.push_back(maxcfu_to_json(res));
      if (res.diverged) exit_code = 1;
    }
    summary["maxcfu"] = std::move(arr);
  }

  std::ofstream out(path("summary.json"));
  out << summary.dump(2) << '\n';
  return exit_code;
}

// Built-in verification battery: hub-correlation positive-semidefinite
// thresholds, autodiff-vs-finite-difference gradient agreement, and
// zero-correlation CFU on a synthetic fixture. Prints one line per check;
// returns nonzero if any fails.
inline int selftest(std::ostream& os = std::cout) {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok,
                    const std::string& detail = "") {
    os << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!detail.empty()) os << "  (" << detail << ")";
    os << '\n';
    if (!ok) ++failures;
  };

  // Hub-correlation PSD threshold: 1/sqrt(n-1), eigenvalues known in
  // closed form.
  {
    bool ok = true;
    std::string why;
    for (std::size_t n : {3u, 4u, 5u, 8u}) {
      const double threshold = 1.0 / std::sqrt(static_cast<double>(n - 1));
      for (double p : linspace(0.0, 0.99, 50)) {
        const PsdReport rep = psd_check(star_matrix(n, p));
        const bool expect = p <= threshold;
        if (rep.is_psd != expect && std::abs(p - threshold) > 1e-9) {
          ok = false;
          why = "n=" + std::to_string(n) + " p=" + std::to_string(p);
        }
      }
    }
    report("hub correlation psd threshold", ok, why);
  }

  // Shared synthetic fixture: three-feature chain.
  CausalGraph g;
  g.nodes = {"A", "X1", "X2", "X3"};
  g.protected_node = "A";
  g.edges = {{"A", "X1"}, {"A", "X2"}, {"X1", "X2"}, {"X2", "X3"}};
  g = validate(g);
  SyntheticSpec spec;
  spec.graph = g;
  spec.bases = make_bases(g, 1);
  spec.w_true = {{0.4, -0.7}, {0.2, -0.4, 0.8}, {0.1, 0.6}};
  spec.sigmas = {0.8, 0.6, 0.7};
  spec.p_true = Mat<double>::identity(3);
  spec.target.bias = 0.2;
  spec.target.on_eps = {0.9, 0.7, 0.5};
  spec.target.on_x = {0.3, 0.2, 0.1};
  spec.target.on_protected = 0.4;
  spec.target.noise_std = 0.05;
  spec.n = 400;
  spec.seed = 2024;
  const Dataset data = generate(spec).data;

  PipelineConfig pc;
  pc.degree = 1;
  pc.lambda = 1e-6;
  pc.predictor_degree = 2;
  pc.predictor_lambda = 1e-4;
  pc.seed = 11;
  const PipelineArtifacts art = fit_pipeline(data, g, pc);

  // Gradient check at a few random raw-parameter draws.
  {
    const CfuWorkspace ws = make_cfu_workspace(data, art);
    OptimizerConfig oc;
    oc.p_max = 0.4;
    oc.seed = 5;
    Rng rng(77);
    double worst = 0.0;
    for (int draw = 0; draw < 5; ++draw) {
      CorrelationParams cp = dense_params(3, oc.p_max, 100 + draw);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t jx = 0; jx <= i; ++jx)
          cp.l(i, jx) = rng.uniform(-0.8, 0.8);
      const std::vector<std::size_t> probe = Rng(42 + draw).sample(data.n(), 64);
      const GradientCheckReport rep = check_gradient(ws, cp, oc, probe);
      worst = std::max(worst, rep.max_rel_error);
    }
    report("ascent gradient matches finite differences", worst <= 1e-3,
           "max rel err " + std::to_string(worst));
  }

  // Zero correlation must evaluate to (numerically) zero unfairness.
  {
    const CfuEvaluation eval =
        evaluate_cfu(data, art, Mat<double>::identity(3));
    report("zero-correlation CFU is zero (direct evaluation)",
           std::abs(eval.cfu) <= 1e-8, "cfu " + std::to_string(eval.cfu));

    OptimizerConfig oc;
    oc.p_max = 0.0;
    oc.iterations = 5;
    oc.restarts = 1;
    oc.seed = 3;
    oc.gradient_check = false;
    const MaxCfuResult res = maximize(data, art, oc);
    report("zero-budget search reports zero CFU",
           std::abs(res.cfu_final) <= 1e-8,
           "cfu " + std::to_string(res.cfu_final));
  }

  os << (failures == 0 ? "selftest passed" : "selftest FAILED") << '\n';
  return failures == 0 ? 0 : 1;
}

}  // namespace cfsense
