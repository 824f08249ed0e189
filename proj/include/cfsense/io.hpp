#pragma once

// Dataset loading, standardization, CSV round-tripping, and synthetic data
// generation from a known ground-truth structural model.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cfsense/basis.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/linalg.hpp"
#include "cfsense/rng.hpp"

namespace cfsense {

struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct Dataset {
  std::string protected_name;
  std::vector<std::string> feature_names;
  std::string target_name;

  std::vector<double> a;  // protected attribute, each value 0 or 1
  Mat<double> x;          // n x m feature matrix, columns in graph order
  std::vector<double> y;  // prediction target

  std::size_t n_dropped = 0;  // rows removed for missing/unparseable cells
  std::vector<ColumnStats> feature_stats;
  bool standardized = false;

  std::size_t n() const { return a.size(); }
  std::size_t m() const { return x.cols(); }

  std::vector<double> x_row(std::size_t i) const {
    std::vector<double> row(m());
    for (std::size_t j = 0; j < m(); ++j) row[j] = x(i, j);
    return row;
  }
};

struct CsvSchema {
  std::string protected_column;
  std::vector<std::string> feature_columns;
  std::string target_column;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

// Loads a dataset, keeping only the schema columns. Rows with missing or
// unparseable cells in those columns are dropped and counted.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw MissingColumn("cannot open csv file '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw EmptyAfterFiltering("csv file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);

  auto col_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw MissingColumn("column '" + name + "' not found in '" + path + "'");
  };

  const std::size_t a_col = col_of(schema.protected_column);
  const std::size_t y_col = col_of(schema.target_column);
  std::vector<std::size_t> x_cols;
  for (const auto& f : schema.feature_columns) x_cols.push_back(col_of(f));

  Dataset ds;
  ds.protected_name = schema.protected_column;
  ds.feature_names = schema.feature_columns;
  ds.target_name = schema.target_column;

  std::vector<double> a_vals;
  std::vector<double> y_vals;
  std::vector<std::vector<double>> x_rows;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    auto cell = [&](std::size_t c) -> std::optional<double> {
      if (c >= cells.size()) return std::nullopt;
      return detail::parse_double(cells[c]);
    };
    bool ok = true;
    const auto av = cell(a_col);
    const auto yv = cell(y_col);
    ok = av.has_value() && yv.has_value();
    std::vector<double> row(x_cols.size());
    for (std::size_t j = 0; ok && j < x_cols.size(); ++j) {
      const auto xv = cell(x_cols[j]);
      if (!xv) ok = false;
      else row[j] = *xv;
    }
    if (!ok) {
      ++ds.n_dropped;
      continue;
    }
    if (*av != 0.0 && *av != 1.0)
      throw NonBinaryProtected("protected column '" +
                               schema.protected_column +
                               "' must be 0 or 1, got " + std::to_string(*av));
    a_vals.push_back(*av);
    y_vals.push_back(*yv);
    x_rows.push_back(std::move(row));
  }

  if (a_vals.empty())
    throw EmptyAfterFiltering("no usable rows in '" + path + "'");

  ds.a = std::move(a_vals);
  ds.y = std::move(y_vals);
  ds.x = Mat<double>(ds.a.size(), x_cols.size());
  for (std::size_t i = 0; i < ds.a.size(); ++i)
    for (std::size_t j = 0; j < x_cols.size(); ++j) ds.x(i, j) = x_rows[i][j];
  ds.feature_stats.assign(ds.m(), ColumnStats{});
  return ds;
}

// Writes the dataset with full double precision so a round trip through
// load_csv reproduces the values exactly.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  out << ds.protected_name;
  for (const auto& f : ds.feature_names) out << ',' << f;
  out << ',' << ds.target_name << '\n';
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (std::size_t i = 0; i < ds.n(); ++i) {
    put(ds.a[i]);
    for (std::size_t j = 0; j < ds.m(); ++j) {
      out << ',';
      put(ds.x(i, j));
    }
    out << ',';
    put(ds.y[i]);
    out << '\n';
  }
}

// Z-scores each feature column in place (population standard deviation).
// Constant columns are left untouched. Returns the stats used, so the same
// transform can be replayed on held-out data.
inline std::vector<ColumnStats> standardize_features(Dataset& ds) {
  const std::size_t n = ds.n();
  const std::size_t m = ds.m();
  std::vector<ColumnStats> stats(m);
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += ds.x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ds.x(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    stats[j].mean = mean;
    stats[j].stddev = sd > 0.0 ? sd : 1.0;
    for (std::size_t i = 0; i < n; ++i)
      ds.x(i, j) = (ds.x(i, j) - stats[j].mean) / stats[j].stddev;
  }
  ds.feature_stats = stats;
  ds.standardized = true;
  return stats;
}

// Target-generation recipe for synthetic data: a linear blend of the true
// noise terms, the realized features, and the protected value, plus
// independent Gaussian noise.
struct TargetSpec {
  double bias = 0.0;
  std::vector<double> on_eps;  // one weight per feature's noise term
  std::vector<double> on_x;    // one weight per feature value
  double on_protected = 0.0;
  double noise_std = 0.0;
};

struct SyntheticSpec {
  CausalGraph graph;  // validated
  NodeBases bases;
  std::vector<std::vector<double>> w_true;  // per-feature weights
  std::vector<double> sigmas;               // true noise scales
  Mat<double> p_true;                       // true error correlation
  TargetSpec target;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double protected_rate = 0.5;
};

struct GeneratedData {
  Dataset data;
  Mat<double> true_eps;  // n x m realized noise, for diagnostics
};

// Samples a dataset from the ground-truth model: correlated Gaussian
// errors, features propagated in topological order, target from the
// TargetSpec recipe.
inline GeneratedData generate(const SyntheticSpec& spec) {
  if (spec.n == 0) throw EmptyAfterFiltering("synthetic n must be positive");
  if (!spec.graph.validated)
    throw UnknownNode("synthetic graph must be validated");
  const std::size_t m = spec.graph.num_features();
  if (spec.w_true.size() != m || spec.sigmas.size() != m)
    throw DimensionMismatch("w_true and sigmas must have one entry per feature");
  for (std::size_t j = 0; j < m; ++j)
    if (spec.w_true[j].size() != spec.bases.per_feature[j].dim)
      throw DimensionMismatch("w_true[" + std::to_string(j) +
                              "] does not match basis dim");
  for (double s : spec.sigmas)
    if (!(s > 0.0)) throw NotPositiveDefinite("sigmas must be positive");
  if (spec.p_true.rows() != m || spec.p_true.cols() != m)
    throw DimensionMismatch("p_true must be m x m");
  if (!is_symmetric(spec.p_true, 1e-12))
    throw NonSymmetricInput("p_true must be symmetric");

  // Error covariance and its factor; a non-PSD correlation fails here.
  Mat<double> cov(m, m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < m; ++k)
      cov(j, k) = spec.sigmas[j] * spec.p_true(j, k) * spec.sigmas[k];
  auto chol = cholesky(cov);
  if (!chol) throw NotPositiveDefinite("true error covariance is not positive definite");

  Rng rng(spec.seed);
  Dataset ds;
  ds.protected_name = spec.graph.protected_node;
  for (std::size_t j = 0; j < m; ++j)
    ds.feature_names.push_back(spec.graph.feature_name(j));
  ds.target_name = "y";
  ds.a.resize(spec.n);
  ds.x = Mat<double>(spec.n, m);
  ds.y.resize(spec.n);
  ds.feature_stats.assign(m, ColumnStats{});

  Mat<double> eps(spec.n, m);
  std::vector<double> z(m);
  std::vector<double> xrow(m);
  for (std::size_t i = 0; i < spec.n; ++i) {
    ds.a[i] = rng.bernoulli(spec.protected_rate) ? 1.0 : 0.0;
    for (std::size_t j = 0; j < m; ++j) z[j] = rng.normal();
    for (std::size_t j = 0; j < m; ++j) {
      double e = 0.0;
      for (std::size_t k = 0; k <= j; ++k) e += (*chol)(j, k) * z[k];
      eps(i, j) = e;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const std::vector<double> phi = embed_feature<double>(
          spec.graph, spec.bases, j, ds.a[i], std::span<const double>(xrow));
      double v = 0.0;
      for (std::size_t k = 0; k < phi.size(); ++k)
        v += phi[k] * spec.w_true[j][k];
      xrow[j] = v + eps(i, j);
      ds.x(i, j) = xrow[j];
    }
    double y = spec.target.bias + spec.target.on_protected * ds.a[i];
    for (std::size_t j = 0; j < m; ++j) {
      if (j < spec.target.on_eps.size()) y += spec.target.on_eps[j] * eps(i, j);
      if (j < spec.target.on_x.size()) y += spec.target.on_x[j] * xrow[j];
    }
    if (spec.target.noise_std > 0.0) y += spec.target.noise_std * rng.normal();
    ds.y[i] = y;
  }
  return GeneratedData{std::move(ds), std::move(eps)};
}

}  // namespace cfsense
