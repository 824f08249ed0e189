#pragma once

// Shared synthetic fixtures in four graph shapes.
//
// pair_fixture and triple_fixture are fully adjusted: every structural
// equation regresses on the protected attribute and on all earlier
// features. Under that shape the correlated refit moves weights only
// along directions that the reference-residual extraction removes, so
// the factual/counterfactual prediction gap collapses to ridge leakage
// (order (lambda/n)^2) no matter the correlation. They exercise fitting,
// identities, and the collapse itself.
//
// chain_fixture and survey_fixture omit the direct protected edge from
// the downstream equations, which breaks that span alignment and yields
// prediction gaps at data scale. They exercise everything that needs a
// visibly confounding-sensitive pipeline.

#include <cstdint>
#include <vector>

#include "cfsense/anm.hpp"
#include "cfsense/graph.hpp"
#include "cfsense/io.hpp"
#include "cfsense/pipeline.hpp"

namespace testsupport {

struct Fixture {
  cfsense::CausalGraph graph;
  cfsense::NodeBases gen_bases;  // bases used for generation (degree 1)
  cfsense::Dataset data;
  cfsense::Mat<double> true_eps;
  cfsense::SyntheticSpec spec;
};

// Two features G and L: A -> G, A -> L, G -> L.
inline Fixture pair_fixture(std::size_t n, std::uint64_t seed,
                            double p_true = 0.0) {
  Fixture fx;
  fx.graph.nodes = {"A", "G", "L"};
  fx.graph.protected_node = "A";
  fx.graph.edges = {{"A", "G"}, {"A", "L"}, {"G", "L"}};
  fx.graph = cfsense::validate(fx.graph);
  fx.gen_bases = cfsense::make_bases(fx.graph, 1);

  fx.spec.graph = fx.graph;
  fx.spec.bases = fx.gen_bases;
  fx.spec.w_true = {{0.5, -0.8}, {0.2, -0.5, 0.9}};
  fx.spec.sigmas = {0.8, 0.6};
  fx.spec.p_true = cfsense::Mat<double>::identity(2);
  fx.spec.p_true(0, 1) = p_true;
  fx.spec.p_true(1, 0) = p_true;
  fx.spec.target.bias = 0.1;
  fx.spec.target.on_eps = {1.0, 0.8};
  fx.spec.target.on_x = {0.4, 0.4};
  fx.spec.target.on_protected = 0.5;
  fx.spec.target.noise_std = 0.1;
  fx.spec.n = n;
  fx.spec.seed = seed;

  cfsense::GeneratedData gen = cfsense::generate(fx.spec);
  fx.data = std::move(gen.data);
  fx.true_eps = std::move(gen.true_eps);
  return fx;
}

// Three features O, M, J: A feeds all three, O -> M, O -> J, M -> J.
inline Fixture triple_fixture(std::size_t n, std::uint64_t seed,
                              double p_common = 0.0) {
  Fixture fx;
  fx.graph.nodes = {"A", "O", "M", "J"};
  fx.graph.protected_node = "A";
  fx.graph.edges = {{"A", "O"}, {"A", "M"}, {"A", "J"},
                    {"O", "M"}, {"O", "J"}, {"M", "J"}};
  fx.graph = cfsense::validate(fx.graph);
  fx.gen_bases = cfsense::make_bases(fx.graph, 1);

  fx.spec.graph = fx.graph;
  fx.spec.bases = fx.gen_bases;
  fx.spec.w_true = {{0.3, -0.6}, {0.2, -0.4, 0.7}, {0.1, -0.3, 0.5, 0.6}};
  fx.spec.sigmas = {0.7, 0.6, 0.5};
  fx.spec.p_true = cfsense::Mat<double>::identity(3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      if (a != b) fx.spec.p_true(a, b) = p_common;
  fx.spec.target.bias = 0.2;
  fx.spec.target.on_eps = {0.9, 0.7, 0.6};
  fx.spec.target.on_x = {0.3, 0.2, 0.2};
  fx.spec.target.on_protected = 0.4;
  fx.spec.target.noise_std = 0.1;
  fx.spec.n = n;
  fx.spec.seed = seed;

  cfsense::GeneratedData gen = cfsense::generate(fx.spec);
  fx.data = std::move(gen.data);
  fx.true_eps = std::move(gen.true_eps);
  return fx;
}

// Two features G and L: A -> G -> L. The protected attribute reaches L
// only through G, so the L equation never regresses on A and the
// correlated refit produces genuine counterfactual prediction gaps.
inline Fixture chain_fixture(std::size_t n, std::uint64_t seed,
                             double p_true = 0.0) {
  Fixture fx;
  fx.graph.nodes = {"A", "G", "L"};
  fx.graph.protected_node = "A";
  fx.graph.edges = {{"A", "G"}, {"G", "L"}};
  fx.graph = cfsense::validate(fx.graph);
  fx.gen_bases = cfsense::make_bases(fx.graph, 1);

  fx.spec.graph = fx.graph;
  fx.spec.bases = fx.gen_bases;
  fx.spec.w_true = {{0.3, 0.9}, {-0.2, 1.1}};
  fx.spec.sigmas = {0.8, 0.6};
  fx.spec.p_true = cfsense::Mat<double>::identity(2);
  fx.spec.p_true(0, 1) = p_true;
  fx.spec.p_true(1, 0) = p_true;
  fx.spec.target.bias = 0.1;
  fx.spec.target.on_eps = {1.0, 0.8};
  fx.spec.target.on_x = {0.4, 0.4};
  fx.spec.target.on_protected = 0.5;
  fx.spec.target.noise_std = 0.1;
  fx.spec.n = n;
  fx.spec.seed = seed;

  cfsense::GeneratedData gen = cfsense::generate(fx.spec);
  fx.data = std::move(gen.data);
  fx.true_eps = std::move(gen.true_eps);
  return fx;
}

// Three features X1, X2, X3: A -> X1, X1 -> X2, {X1, X2} -> X3. Only the
// first equation sees A, so all three error correlations carry real
// counterfactual signal.
inline Fixture survey_fixture(std::size_t n, std::uint64_t seed,
                              double p_common = 0.0) {
  Fixture fx;
  fx.graph.nodes = {"A", "X1", "X2", "X3"};
  fx.graph.protected_node = "A";
  fx.graph.edges = {{"A", "X1"}, {"X1", "X2"}, {"X1", "X3"}, {"X2", "X3"}};
  fx.graph = cfsense::validate(fx.graph);
  fx.gen_bases = cfsense::make_bases(fx.graph, 1);

  fx.spec.graph = fx.graph;
  fx.spec.bases = fx.gen_bases;
  fx.spec.w_true = {{0.3, 0.8}, {0.2, 0.7}, {0.1, 0.5, 0.6}};
  fx.spec.sigmas = {0.7, 0.6, 0.5};
  fx.spec.p_true = cfsense::Mat<double>::identity(3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      if (a != b) fx.spec.p_true(a, b) = p_common;
  fx.spec.target.bias = 0.2;
  fx.spec.target.on_eps = {0.9, 0.7, 0.6};
  fx.spec.target.on_x = {0.3, 0.2, 0.2};
  fx.spec.target.on_protected = 0.4;
  fx.spec.target.noise_std = 0.1;
  fx.spec.n = n;
  fx.spec.seed = seed;

  cfsense::GeneratedData gen = cfsense::generate(fx.spec);
  fx.data = std::move(gen.data);
  fx.true_eps = std::move(gen.true_eps);
  return fx;
}

// Standard pipeline settings used across tests: degree-1 structural fit
// with a tiny ridge (so the independent-error fit is effectively the joint
// optimum), quadratic residual predictor.
inline cfsense::PipelineConfig test_pipeline_config(std::uint64_t seed = 7,
                                                    double lambda = 1e-8) {
  cfsense::PipelineConfig pc;
  pc.degree = 1;
  pc.lambda = lambda;
  pc.predictor_degree = 2;
  pc.predictor_lambda = 1e-4;
  pc.baseline_degree = 2;
  pc.baseline_lambda = 1e-4;
  pc.seed = seed;
  return pc;
}

}  // namespace testsupport
