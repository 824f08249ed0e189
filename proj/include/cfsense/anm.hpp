#pragma once

// Additive-noise structural model fitting.
//
// Every structural equation is x_j = phi_j(parents)' w_j + eps_j with
// jointly Gaussian errors eps ~ N(0, diag(sigma) P diag(sigma)). Fitting
// minimizes the penalized Gaussian negative log-likelihood (up to
// constants):
//
//   sum_i r_i' Sigma^{-1} r_i  +  lambda ||w||^2  +  n log det Sigma
//
// The independent-error fit ("model A") has a closed form in two stages;
// the correlated-error fit ("model B") alternates gradient steps on
// log sigma with an exact generalized-least-squares weight update.
//
// All data enters through per-batch moment matrices, so one alternation
// costs O(d^2 + d^3) regardless of batch size, and the alternating loop is
// generic over the scalar type: instantiated with doubles for plain fits
// and with autodiff variables when the worst-case search differentiates
// through an unrolled fit.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfsense/basis.hpp"
#include "cfsense/errors.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/io.hpp"
#include "cfsense/linalg.hpp"

namespace cfsense {

struct FitControls {
  int max_alternations = 100;
  int sigma_steps = 6;        // log-sigma gradient steps per alternation
  double tol = 1e-9;          // absolute objective decrease for convergence
  double sigma_step = 0.25;   // base step scale for log-sigma moves
  double sigma_max_step = 1.0;  // bound on a single log-sigma move
  // Unrolled mode: run exactly max_alternations alternations with smooth
  // clamped sigma steps and no tolerance break, so the computation is a
  // fixed differentiable program.
  bool fixed_iterations = false;
};

// Per-sample parent embeddings; constants during any fit.
struct DesignCache {
  // phi[i][j] is feature j's embedded parent vector at sample i.
  std::vector<std::vector<std::vector<double>>> phi;
};

inline DesignCache build_design_cache(const Dataset& data,
                                      const CausalGraph& g,
                                      const NodeBases& nb) {
  const std::size_t n = data.n();
  const std::size_t m = g.num_features();
  DesignCache cache;
  cache.phi.resize(n);
  std::vector<double> xrow(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) xrow[j] = data.x(i, j);
    cache.phi[i].reserve(m);
    for (std::size_t j = 0; j < m; ++j)
      cache.phi[i].push_back(embed_feature<double>(
          g, nb, j, data.a[i], std::span<const double>(xrow)));
  }
  return cache;
}

// Sufficient statistics of a batch for the penalized GLS objective:
//   sxx(j,k)   = sum_i x_{j,i} x_{k,i}
//   u[j,k]     = sum_i phi_{j,i} x_{k,i}
//   m2[j,k]    = sum_i phi_{j,i} phi_{k,i}'
// Everything the fit needs is a function of these and the batch size.
struct GlsMoments {
  std::size_t count = 0;
  std::size_t m = 0;
  std::vector<std::size_t> dims;
  std::vector<std::size_t> offsets;
  std::size_t total_dim = 0;
  Mat<double> sxx;
  std::vector<std::vector<double>> u;   // index j * m + k
  std::vector<Mat<double>> m2;          // index j * m + k

  const std::vector<double>& u_at(std::size_t j, std::size_t k) const {
    return u[j * m + k];
  }
  const Mat<double>& m2_at(std::size_t j, std::size_t k) const {
    return m2[j * m + k];
  }
};

inline GlsMoments compute_moments(const Dataset& data, const DesignCache& cache,
                                  const NodeBases& nb,
                                  std::span<const std::size_t> rows) {
  GlsMoments mom;
  mom.count = rows.size();
  mom.m = nb.per_feature.size();
  mom.offsets = nb.offset;
  mom.total_dim = nb.total_dim;
  for (const auto& b : nb.per_feature) mom.dims.push_back(b.dim);
  mom.sxx = Mat<double>(mom.m, mom.m);
  mom.u.assign(mom.m * mom.m, {});
  mom.m2.assign(mom.m * mom.m, {});
  for (std::size_t j = 0; j < mom.m; ++j)
    for (std::size_t k = 0; k < mom.m; ++k) {
      mom.u[j * mom.m + k].assign(mom.dims[j], 0.0);
      mom.m2[j * mom.m + k] = Mat<double>(mom.dims[j], mom.dims[k]);
    }
  for (std::size_t i : rows) {
    const auto& phi_i = cache.phi[i];
    for (std::size_t j = 0; j < mom.m; ++j) {
      const double xj = data.x(i, j);
      for (std::size_t k = 0; k < mom.m; ++k) {
        mom.sxx(j, k) += xj * data.x(i, k);
        auto& ujk = mom.u[j * mom.m + k];
        const double xk = data.x(i, k);
        for (std::size_t r = 0; r < mom.dims[j]; ++r)
          ujk[r] += phi_i[j][r] * xk;
        if (k >= j) {
          auto& m2jk = mom.m2[j * mom.m + k];
          for (std::size_t r = 0; r < mom.dims[j]; ++r)
            for (std::size_t c = 0; c < mom.dims[k]; ++c)
              m2jk(r, c) += phi_i[j][r] * phi_i[k][c];
        }
      }
    }
  }
  // Mirror the upper blocks.
  for (std::size_t j = 0; j < mom.m; ++j)
    for (std::size_t k = 0; k < j; ++k)
      mom.m2[j * mom.m + k] = transpose(mom.m2[k * mom.m + j]);
  return mom;
}

inline GlsMoments compute_moments(const Dataset& data, const DesignCache& cache,
                                  const NodeBases& nb) {
  std::vector<std::size_t> rows(data.n());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return compute_moments(data, cache, nb, rows);
}

namespace detail {

// w_j' M w_k for a block moment matrix.
template <class T>
T quad_form(const Mat<double>& m2, std::span<const T> wj,
            std::span<const T> wk) {
  T acc{};
  for (std::size_t r = 0; r < m2.rows(); ++r) {
    T inner{};
    for (std::size_t c = 0; c < m2.cols(); ++c)
      inner = inner + m2(r, c) * wk[c];
    acc = acc + wj[r] * inner;
  }
  return acc;
}

template <class T>
T dot_const(const std::vector<double>& a, std::span<const T> b) {
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc = acc + a[i] * b[i];
  return acc;
}

}  // namespace detail

template <class T>
struct AltFit {
  std::vector<T> w;
  std::vector<T> log_sigma;
  T objective{};
  bool jittered = false;
  bool max_iterations_hit = false;
  int alternations = 0;
};

// Residual Gram matrix S(w)_{jk} = sum_i r_{j,i} r_{k,i} from moments.
template <class T>
Mat<T> residual_gram(const GlsMoments& mom, const std::vector<T>& w) {
  const std::size_t m = mom.m;
  Mat<T> s(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    std::span<const T> wj(w.data() + mom.offsets[j], mom.dims[j]);
    for (std::size_t k = j; k < m; ++k) {
      std::span<const T> wk(w.data() + mom.offsets[k], mom.dims[k]);
      T v = T{mom.sxx(j, k)} - detail::dot_const<T>(mom.u_at(j, k), wj) -
            detail::dot_const<T>(mom.u_at(k, j), wk) +
            detail::quad_form<T>(mom.m2_at(j, k), wj, wk);
      s(j, k) = v;
      if (k != j) s(k, j) = v;
    }
  }
  return s;
}

// Penalized GLS negative log-likelihood at (w, log sigma) for a fixed
// correlation matrix whose inverse is `q` and log determinant `logdet_p`.
template <class T>
T gls_objective(const GlsMoments& mom, const Mat<T>& q, const T& logdet_p,
                const std::vector<T>& w, const std::vector<T>& log_sigma,
                double lambda, const Mat<T>& s) {
  using std::exp;
  const std::size_t m = mom.m;
  T trace{};
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < m; ++k)
      trace = trace +
              exp(-log_sigma[j] - log_sigma[k]) * q(j, k) * s(j, k);
  T penalty{};
  for (const T& v : w) penalty = penalty + v * v;
  T logdet_sigma{};
  for (const T& u : log_sigma) logdet_sigma = logdet_sigma + u;
  return trace + lambda * penalty +
         static_cast<double>(mom.count) * (2.0 * logdet_sigma + logdet_p);
}

// Alternating minimizer for the correlated-error objective. Each
// alternation runs `sigma_steps` gradient steps on log sigma (holding w),
// then solves the GLS normal equations exactly for w, so the returned
// weights are stationary for the returned sigmas.
template <class T>
AltFit<T> fit_alternating(const GlsMoments& mom, const Mat<T>& p_corr,
                          double lambda, std::vector<T> w,
                          std::vector<T> log_sigma, const FitControls& c) {
  using std::exp;
  using std::tanh;
  const std::size_t m = mom.m;
  const double count = static_cast<double>(mom.count);

  AltFit<T> fit;
  auto cholp = cholesky_with_jitter(p_corr);
  fit.jittered = cholp.jittered;
  const Mat<T> q = cholesky_inverse(cholp.lower);
  const T logdet_p = logdet_from_cholesky(cholp.lower);

  auto sigma_inv = [&](const std::vector<T>& ls) {
    Mat<T> si(m, m);
    std::vector<T> d(m);
    for (std::size_t j = 0; j < m; ++j) d[j] = exp(-ls[j]);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) si(j, k) = d[j] * d[k] * q(j, k);
    return si;
  };

  // Objective as a function of log sigma only (w and S fixed); used by the
  // backtracking line search.
  auto sigma_objective = [&](const std::vector<T>& ls, const Mat<T>& s) {
    T trace{};
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k)
        trace = trace + exp(-ls[j] - ls[k]) * q(j, k) * s(j, k);
    T sum{};
    for (const T& u : ls) sum = sum + u;
    return trace + count * 2.0 * sum;
  };

  Mat<T> s = residual_gram(mom, w);
  T objective{std::numeric_limits<double>::infinity()};
  double prev = std::numeric_limits<double>::infinity();
  bool converged = false;

  int alt = 0;
  for (; alt < c.max_alternations; ++alt) {
    // Log-sigma steps at fixed w. Gradient: d f / d log sigma_j =
    // 2 (count - [Sigma^{-1} S]_jj).
    for (int step = 0; step < c.sigma_steps; ++step) {
      Mat<T> si = sigma_inv(log_sigma);
      std::vector<T> grad(m);
      for (std::size_t j = 0; j < m; ++j) {
        T diag{};
        for (std::size_t k = 0; k < m; ++k)
          diag = diag + si(j, k) * s(j, k);
        grad[j] = 2.0 * (count - diag);
      }
      if (c.fixed_iterations) {
        // Smooth clamped step: behaves like a scaled gradient step for
        // small gradients and saturates at sigma_max_step, with no
        // branches, so finite differences see the same program.
        for (std::size_t j = 0; j < m; ++j) {
          T raw = grad[j] * (c.sigma_step / (2.0 * count * c.sigma_max_step));
          log_sigma[j] = log_sigma[j] - c.sigma_max_step * tanh(raw);
        }
      } else {
        double g2 = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double gj = scalar_value(grad[j]);
          g2 += gj * gj;
        }
        if (g2 < 1e-30) break;
        const double f0 = scalar_value(sigma_objective(log_sigma, s));
        double stepsize = c.sigma_step;
        bool accepted = false;
        for (int bt = 0; bt < 40 && !accepted; ++bt) {
          std::vector<T> trial = log_sigma;
          for (std::size_t j = 0; j < m; ++j)
            trial[j] = trial[j] - (stepsize / (2.0 * count)) * grad[j];
          const double f1 = scalar_value(sigma_objective(trial, s));
          if (f1 <= f0 - 1e-4 * stepsize * g2 / (2.0 * count)) {
            log_sigma = std::move(trial);
            accepted = true;
          } else {
            stepsize *= 0.5;
          }
        }
        if (!accepted) break;
      }
    }

    // Exact GLS weight update for the current sigmas.
    Mat<T> si = sigma_inv(log_sigma);
    Mat<T> a(mom.total_dim, mom.total_dim);
    std::vector<T> rhs(mom.total_dim, T{});
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < m; ++k) {
        const Mat<double>& m2 = mom.m2_at(j, k);
        const T& sjk = si(j, k);
        for (std::size_t r = 0; r < mom.dims[j]; ++r)
          for (std::size_t cc = 0; cc < mom.dims[k]; ++cc)
            a(mom.offsets[j] + r, mom.offsets[k] + cc) =
                a(mom.offsets[j] + r, mom.offsets[k] + cc) + sjk * m2(r, cc);
        const std::vector<double>& ujk = mom.u_at(j, k);
        for (std::size_t r = 0; r < mom.dims[j]; ++r)
          rhs[mom.offsets[j] + r] = rhs[mom.offsets[j] + r] + sjk * ujk[r];
      }
    }
    for (std::size_t i = 0; i < mom.total_dim; ++i)
      a(i, i) = a(i, i) + lambda;
    auto chola = cholesky(a);
    if (!chola)
      throw SingularNormalEquations(
          "GLS normal equations are not positive definite");
    w = cholesky_solve(*chola, rhs);

    s = residual_gram(mom, w);
    objective = gls_objective(mom, q, logdet_p, w, log_sigma, lambda, s);

    const double cur = scalar_value(objective);
    if (!c.fixed_iterations && prev - cur < c.tol) {
      converged = true;
      ++alt;
      break;
    }
    prev = cur;
  }
  fit.max_iterations_hit = !c.fixed_iterations && !converged;
  fit.alternations = alt;
  fit.w = std::move(w);
  fit.log_sigma = std::move(log_sigma);
  fit.objective = objective;
  return fit;
}

struct FittedAnm {
  std::vector<double> w;       // stacked per-feature weights
  std::vector<double> sigmas;  // noise scales, strictly positive
  Mat<double> p;               // error correlation assumed by the fit
  double lambda = 0.0;
  double objective = 0.0;
  bool jittered = false;
  bool max_iterations_hit = false;
  int alternations = 0;
  std::vector<int> degrees;
  bool include_bias = true;
};

namespace detail {

inline void check_finite(const Dataset& data) {
  for (double v : data.a)
    if (!std::isfinite(v)) throw NonFiniteData("protected column has non-finite value");
  for (double v : data.x.data())
    if (!std::isfinite(v)) throw NonFiniteData("feature matrix has non-finite value");
}

}  // namespace detail

// Independent-error fit in two closed-form stages: a ridge fit per
// equation at unit noise, noise scales from the residual second moments,
// then a ridge refit weighted by those scales. The objective reported is
// the penalized likelihood at the refit weights.
inline FittedAnm fit_model_a(const Dataset& data, const CausalGraph& g,
                             const NodeBases& nb, double lambda,
                             const GlsMoments* precomputed = nullptr) {
  detail::check_finite(data);
  const std::size_t m = g.num_features();
  const double n = static_cast<double>(data.n());
  GlsMoments local;
  const GlsMoments* mom = precomputed;
  if (!mom) {
    const DesignCache cache = build_design_cache(data, g, nb);
    local = compute_moments(data, cache, nb);
    mom = &local;
  }

  FittedAnm fit;
  fit.lambda = lambda;
  fit.p = Mat<double>::identity(m);
  fit.include_bias = nb.per_feature.empty() ? true
                                            : nb.per_feature[0].spec.include_bias;
  for (const auto& b : nb.per_feature) fit.degrees.push_back(b.spec.degree);
  fit.w.assign(nb.total_dim, 0.0);
  fit.sigmas.assign(m, 0.0);

  // Stage 1: per-equation ridge at unit noise.
  std::vector<double> w_stage1(nb.total_dim, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    Mat<double> a = mom->m2_at(j, j);
    for (std::size_t i = 0; i < mom->dims[j]; ++i) a(i, i) += lambda;
    auto chol = cholesky(a);
    if (!chol)
      throw SingularNormalEquations("normal equations singular for equation " +
                                    std::to_string(j));
    const std::vector<double> wj = cholesky_solve(*chol, mom->u_at(j, j));
    for (std::size_t i = 0; i < wj.size(); ++i)
      w_stage1[mom->offsets[j] + i] = wj[i];
  }

  // Stage 2: noise scales from residual second moments (no mean removal),
  // then a per-equation refit weighted by them. With a diagonal Sigma the
  // joint GLS system stays block diagonal.
  const Mat<double> s1 = residual_gram(*mom, w_stage1);
  for (std::size_t j = 0; j < m; ++j)
    fit.sigmas[j] =
        std::sqrt(std::max(s1(j, j) / n, std::numeric_limits<double>::min()));

  for (std::size_t j = 0; j < m; ++j) {
    const double inv_var = 1.0 / (fit.sigmas[j] * fit.sigmas[j]);
    Mat<double> a = mom->m2_at(j, j);
    for (auto& v : a.data()) v *= inv_var;
    for (std::size_t i = 0; i < mom->dims[j]; ++i) a(i, i) += lambda;
    auto chol = cholesky(a);
    if (!chol)
      throw SingularNormalEquations("weighted normal equations singular for equation " +
                                    std::to_string(j));
    std::vector<double> rhs = mom->u_at(j, j);
    for (auto& v : rhs) v *= inv_var;
    const std::vector<double> wj = cholesky_solve(*chol, rhs);
    for (std::size_t i = 0; i < wj.size(); ++i)
      fit.w[mom->offsets[j] + i] = wj[i];
  }

  const Mat<double> s2 = residual_gram(*mom, fit.w);
  double trace = 0.0;
  double logdet = 0.0;
  double penalty = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    trace += s2(j, j) / (fit.sigmas[j] * fit.sigmas[j]);
    logdet += 2.0 * std::log(fit.sigmas[j]);
  }
  for (double v : fit.w) penalty += v * v;
  fit.objective = trace + lambda * penalty + n * logdet;
  fit.alternations = 0;
  return fit;
}

// Correlated-error fit at a fixed correlation matrix. Starts from the
// independent-error solution (or a caller-provided warm start) and
// alternates to convergence.
inline FittedAnm fit_model_b(const Dataset& data, const CausalGraph& g,
                             const NodeBases& nb, double lambda,
                             const Mat<double>& p_corr,
                             const FitControls& controls = FitControls{},
                             const FittedAnm* warm_start = nullptr,
                             const GlsMoments* precomputed = nullptr) {
  detail::check_finite(data);
  const std::size_t m = g.num_features();
  if (p_corr.rows() != m || p_corr.cols() != m)
    throw DimensionMismatch("correlation matrix must be m x m");
  if (!is_symmetric(p_corr, 1e-12))
    throw NonSymmetricInput("correlation matrix must be symmetric");
  for (std::size_t j = 0; j < m; ++j)
    if (std::abs(p_corr(j, j) - 1.0) > 1e-12)
      throw NonSymmetricInput("correlation matrix must have unit diagonal");

  GlsMoments local;
  const GlsMoments* mom = precomputed;
  if (!mom) {
    const DesignCache cache = build_design_cache(data, g, nb);
    local = compute_moments(data, cache, nb);
    mom = &local;
  }

  std::vector<double> w0;
  std::vector<double> ls0;
  if (warm_start) {
    w0 = warm_start->w;
    for (double sdev : warm_start->sigmas) ls0.push_back(std::log(sdev));
  } else {
    const FittedAnm a = fit_model_a(data, g, nb, lambda, mom);
    w0 = a.w;
    for (double sdev : a.sigmas) ls0.push_back(std::log(sdev));
  }

  AltFit<double> alt =
      fit_alternating<double>(*mom, p_corr, lambda, std::move(w0),
                              std::move(ls0), controls);

  FittedAnm fit;
  fit.w = std::move(alt.w);
  for (double ls : alt.log_sigma) fit.sigmas.push_back(std::exp(ls));
  fit.p = p_corr;
  fit.lambda = lambda;
  fit.objective = alt.objective;
  fit.jittered = alt.jittered;
  fit.max_iterations_hit = alt.max_iterations_hit;
  fit.alternations = alt.alternations;
  for (const auto& b : nb.per_feature) fit.degrees.push_back(b.spec.degree);
  fit.include_bias = nb.per_feature.empty() ? true
                                            : nb.per_feature[0].spec.include_bias;
  return fit;
}

// Residual matrix: eps_hat(i, j) = x_ij - phi_j(parents_i)' w_j.
inline Mat<double> residuals(const FittedAnm& model, const Dataset& data,
                             const CausalGraph& g, const NodeBases& nb) {
  const std::size_t n = data.n();
  const std::size_t m = g.num_features();
  Mat<double> eps(n, m);
  std::vector<double> xrow(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) xrow[j] = data.x(i, j);
    for (std::size_t j = 0; j < m; ++j) {
      const std::vector<double> phi = embed_feature<double>(
          g, nb, j, data.a[i], std::span<const double>(xrow));
      double pred = 0.0;
      for (std::size_t k = 0; k < phi.size(); ++k)
        pred += phi[k] * model.w[nb.offset[j] + k];
      eps(i, j) = data.x(i, j) - pred;
    }
  }
  return eps;
}

template <class T>
struct CounterfactualResult {
  std::vector<T> x_cf;    // counterfactual feature values, graph order
  std::vector<T> eps_cf;  // residuals of those values under the reference weights
};

// Abduction-action-prediction for one sample. `delta` holds the abducted
// noise terms under the propagation weights `w_prop`; the intervention
// sets the protected value to a_cf and the structural equations are
// replayed in topological order:
//   x'_j = phi_j(a', parents')' w_prop_j + delta_j.
// Residuals of the counterfactual world are re-derived under the
// (typically independent-error) reference weights `w_ref`, which is what
// a residual-based predictor consumes.
template <class T>
CounterfactualResult<T> propagate_counterfactual(
    const CausalGraph& g, const NodeBases& nb, const std::vector<T>& w_prop,
    const std::vector<double>& w_ref, double a_cf,
    const std::vector<T>& delta) {
  const std::size_t m = g.num_features();
  CounterfactualResult<T> out;
  out.x_cf.assign(m, T{});
  out.eps_cf.assign(m, T{});
  const T a{a_cf};
  for (std::size_t j = 0; j < m; ++j) {
    const std::vector<T> phi = embed_feature<T>(
        g, nb, j, a, std::span<const T>(out.x_cf));
    T mean_prop{};
    T mean_ref{};
    for (std::size_t k = 0; k < phi.size(); ++k) {
      mean_prop = mean_prop + phi[k] * w_prop[nb.offset[j] + k];
      mean_ref = mean_ref + phi[k] * w_ref[nb.offset[j] + k];
    }
    out.x_cf[j] = mean_prop + delta[j];
    out.eps_cf[j] = out.x_cf[j] - mean_ref;
  }
  return out;
}

// Counterfactual for one dataset sample under a single fitted model
// (abduction and propagation share the model's weights).
inline CounterfactualResult<double> counterfactual(const FittedAnm& model,
                                                   const CausalGraph& g,
                                                   const NodeBases& nb,
                                                   double a_factual,
                                                   const std::vector<double>& x_factual,
                                                   double a_cf) {
  const std::size_t m = g.num_features();
  std::vector<double> delta(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::vector<double> phi = embed_feature<double>(
        g, nb, j, a_factual, std::span<const double>(x_factual));
    double pred = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k)
      pred += phi[k] * model.w[nb.offset[j] + k];
    delta[j] = x_factual[j] - pred;
  }
  if (a_cf == a_factual) {
    // No intervention: the factual world is its own counterfactual, and
    // replaying the equations would only reassociate the arithmetic.
    CounterfactualResult<double> out;
    out.x_cf = x_factual;
    out.eps_cf = std::move(delta);
    return out;
  }
  return propagate_counterfactual<double>(g, nb, model.w, model.w, a_cf, delta);
}

}  // namespace cfsense
