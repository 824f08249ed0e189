#include "cfsense/modelsel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "cfsense/errors.hpp"
#include "cfsense/rng.hpp"
#include "support/fixtures.hpp"

namespace {

using cfsense::CvPlan;
using cfsense::SelectionReport;

TEST(ModelSel, FoldsPartitionTheIndexRange) {
  const CvPlan plan = cfsense::make_cv_plan(53, {1, 2}, {0.1}, 9, 5);
  ASSERT_EQ(plan.folds.size(), 5u);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& f : plan.folds) {
    total += f.size();
    for (std::size_t i : f) {
      EXPECT_LT(i, 53u);
      EXPECT_TRUE(seen.insert(i).second) << "index " << i << " repeated";
    }
  }
  EXPECT_EQ(total, 53u);
  // Sizes differ by at most one.
  std::size_t lo = 53, hi = 0;
  for (const auto& f : plan.folds) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
  }
  EXPECT_LE(hi - lo, 1u);
}

TEST(ModelSel, PlanIsSeedDeterministic) {
  const CvPlan p1 = cfsense::make_cv_plan(40, {1}, {0.1}, 7, 5);
  const CvPlan p2 = cfsense::make_cv_plan(40, {1}, {0.1}, 7, 5);
  const CvPlan p3 = cfsense::make_cv_plan(40, {1}, {0.1}, 8, 5);
  EXPECT_EQ(p1.folds, p2.folds);
  EXPECT_NE(p1.folds, p3.folds);
}

TEST(ModelSel, TinyDatasetsShrinkFoldCount) {
  const CvPlan plan = cfsense::make_cv_plan(3, {1}, {0.1}, 1, 5);
  EXPECT_EQ(plan.folds.size(), 3u);
}

TEST(ModelSel, GridSearchFindsPlantedMinimum) {
  const CvPlan plan = cfsense::make_cv_plan(20, {1, 2, 3}, {0.01, 0.1, 1.0},
                                            3, 4);
  auto eval = [](int degree, double lambda, const std::vector<std::size_t>&,
                 const std::vector<std::size_t>&) {
    return std::abs(degree - 2) + std::abs(std::log10(lambda) + 1.0);
  };
  const SelectionReport report = cfsense::select_over_grid(plan, eval);
  EXPECT_EQ(report.degree, 2);
  EXPECT_DOUBLE_EQ(report.lambda, 0.1);
  EXPECT_EQ(report.mean_scores.rows(), 3u);
  EXPECT_EQ(report.mean_scores.cols(), 3u);
  EXPECT_DOUBLE_EQ(report.mean_scores(1, 1), 0.0);
}

TEST(ModelSel, TieBreaksTowardSmallerDegreeThenLargerLambda) {
  const CvPlan plan = cfsense::make_cv_plan(20, {1, 2}, {0.01, 1.0}, 3, 4);
  auto flat = [](int, double, const std::vector<std::size_t>&,
                 const std::vector<std::size_t>&) { return 1.0; };
  const SelectionReport report = cfsense::select_over_grid(plan, flat);
  EXPECT_EQ(report.degree, 1);
  EXPECT_DOUBLE_EQ(report.lambda, 1.0);
}

TEST(ModelSel, FailingCandidatesAreExcluded) {
  const CvPlan plan = cfsense::make_cv_plan(20, {1, 2}, {0.1}, 3, 4);
  auto eval = [](int degree, double, const std::vector<std::size_t>&,
                 const std::vector<std::size_t>&) -> double {
    if (degree == 1) throw std::runtime_error("candidate fails");
    return 5.0;
  };
  const SelectionReport report = cfsense::select_over_grid(plan, eval);
  EXPECT_EQ(report.degree, 2);
  EXPECT_TRUE(std::isnan(report.mean_scores(0, 0)));
  EXPECT_DOUBLE_EQ(report.mean_scores(1, 0), 5.0);
}

TEST(ModelSel, NonFiniteScoresAreExcluded) {
  const CvPlan plan = cfsense::make_cv_plan(20, {1, 2}, {0.1}, 3, 4);
  auto eval = [](int degree, double, const std::vector<std::size_t>&,
                 const std::vector<std::size_t>&) {
    return degree == 1 ? std::numeric_limits<double>::infinity() : 2.0;
  };
  const SelectionReport report = cfsense::select_over_grid(plan, eval);
  EXPECT_EQ(report.degree, 2);
}

TEST(ModelSel, AllFailingThrows) {
  const CvPlan plan = cfsense::make_cv_plan(20, {1}, {0.1}, 3, 4);
  auto eval = [](int, double, const std::vector<std::size_t>&,
                 const std::vector<std::size_t>&) -> double {
    throw std::runtime_error("nope");
  };
  EXPECT_THROW(cfsense::select_over_grid(plan, eval),
               cfsense::AllCandidatesFailed);
}

TEST(ModelSel, StructuralSelectionPrefersTrueDegree) {
  // Data generated by degree-1 equations: degree 1 should win against
  // degree 3 on held-out structural error, at least not lose to it.
  const auto fx = testsupport::pair_fixture(600, 77, 0.0);
  const CvPlan plan =
      cfsense::make_cv_plan(fx.data.n(), {1, 3}, {1e-6, 1e-2}, 5, 5);
  const SelectionReport report =
      cfsense::select_structural(fx.data, fx.graph, plan);
  EXPECT_EQ(report.degree, 1);
}

TEST(ModelSel, PredictorSelectionPrefersQuadraticForQuadraticTarget) {
  cfsense::Rng rng(15);
  std::vector<std::vector<double>> inputs;
  std::vector<double> y;
  for (int i = 0; i < 400; ++i) {
    const double e0 = rng.normal();
    const double e1 = rng.normal();
    inputs.push_back({e0, e1});
    y.push_back(1.0 + e0 - 2.0 * e0 * e1 + 0.05 * rng.normal());
  }
  const CvPlan plan =
      cfsense::make_cv_plan(inputs.size(), {1, 2}, {1e-6, 1e-3}, 5, 5);
  const SelectionReport report = cfsense::select_predictor(inputs, y, plan);
  EXPECT_EQ(report.degree, 2);
}

TEST(ModelSel, StructuralScoresImproveWithSampleSizeConsistency) {
  // Same data, same plan: the report is deterministic.
  const auto fx = testsupport::pair_fixture(200, 99, 0.0);
  const CvPlan plan =
      cfsense::make_cv_plan(fx.data.n(), {1, 2}, {1e-6}, 5, 5);
  const SelectionReport r1 =
      cfsense::select_structural(fx.data, fx.graph, plan);
  const SelectionReport r2 =
      cfsense::select_structural(fx.data, fx.graph, plan);
  EXPECT_EQ(r1.degree, r2.degree);
  EXPECT_DOUBLE_EQ(r1.lambda, r2.lambda);
  for (std::size_t i = 0; i < r1.mean_scores.rows(); ++i)
    for (std::size_t j = 0; j < r1.mean_scores.cols(); ++j)
      EXPECT_DOUBLE_EQ(r1.mean_scores(i, j), r2.mean_scores(i, j));
}

}  // namespace
