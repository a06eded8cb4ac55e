#include "mfacv/allocator.hpp"
#include "mfacv/models.hpp"
#include "mfacv/oracle.hpp"

#include <gtest/gtest.h>

using namespace mfacv;

namespace {

const PilotStatistics& trig_pilot() {
  static const PilotStatistics p = quadrature_pilot(polynomial_trig_suite(), {0, 1, 2}, PilotNeeds{true, false});
  return p;
}

const std::vector<double> kTrigCosts{1.0, 0.01, 0.001};

}  // namespace

TEST(Cost, CountsUnionsAndCompanionEvaluations) {
  const EstimatorSpec mean{Family::Mean, 1, {}};
  EXPECT_DOUBLE_EQ(allocation_cost<std::int64_t>(mean, kTrigCosts, 4, {504, 627}), 4 + 0.01 * 508 + 0.001 * 631);
  EXPECT_DOUBLE_EQ(allocation_cost<std::int64_t>(mean, kTrigCosts, 4, {0, 10}), 4 + 0.001 * 14);
  const EstimatorSpec me{Family::MainEffect, 1, {{0}, {1}}};
  EXPECT_DOUBLE_EQ(allocation_cost<std::int64_t>(me, kTrigCosts, 2, {3, 0}), 3 * (2 + 0.01 * 5));
  EXPECT_THROW(allocation_cost<std::int64_t>(mean, kTrigCosts, 2, {3}), std::invalid_argument);
}

TEST(Objective, MoreSamplesNeverHurt) {
  const EstimatorSpec spec{Family::MeanVariance, 3, {}};
  for (Scheme s : {Scheme::AcvIs, Scheme::AcvIsNested}) {
    const double base = allocation_objective<std::int64_t>(spec, trig_pilot(), s, 4, {100, 200});
    const double doubled = allocation_objective<std::int64_t>(spec, trig_pilot(), s, 8, {200, 400});
    EXPECT_LT(doubled, base) << to_string(s);
    const double more_fresh = allocation_objective<std::int64_t>(spec, trig_pilot(), s, 4, {100, 900});
    EXPECT_LE(more_fresh, base + 1e-12) << to_string(s);
  }
}

TEST(Optimize, BeatsTheReferenceNestedAllocation) {
  const EstimatorSpec spec{Family::Mean, 3, {}};
  const Allocation a = optimize_allocation(spec, trig_pilot(), CostModel{kTrigCosts, 10.0}, Scheme::AcvIsNested);
  const double ref = allocation_objective<std::int64_t>(spec, trig_pilot(), Scheme::AcvIsNested, 4, {504, 627});
  EXPECT_LE(a.objective, ref + 1e-9 * std::abs(ref));
  EXPECT_LE(a.cost, 10.0 * (1 + 1e-12));
  EXPECT_GE(a.cost, 9.5);
  EXPECT_NEAR(a.objective, allocation_objective<std::int64_t>(spec, trig_pilot(), a), 1e-12 * std::abs(a.objective));
  EXPECT_FALSE(a.trace.empty());
}

TEST(Optimize, NoRandomFeasibleAllocationIsBetter) {
  const EstimatorSpec spec{Family::Mean, 3, {}};
  const CostModel cm{kTrigCosts, 10.0};
  const Allocation a = optimize_allocation(spec, trig_pilot(), cm, Scheme::AcvIs);
  Rng rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  while (checked < 200) {
    const auto n0 = static_cast<std::int64_t>(1 + 9 * u(rng));
    const double left = 10.0 - n0 * (1.0 + 0.01 + 0.001);
    if (left <= 0) continue;
    const double share = u(rng);
    std::vector<std::int64_t> fresh{static_cast<std::int64_t>(share * left / 0.01),
                                    static_cast<std::int64_t>((1 - share) * left / 0.001)};
    if (fresh[0] < 1 || fresh[1] < 1 || allocation_cost<std::int64_t>(spec, kTrigCosts, n0, fresh) > 10.0) continue;
    const double v = allocation_objective<std::int64_t>(spec, trig_pilot(), Scheme::AcvIs, n0, fresh);
    EXPECT_GE(v, a.objective - 1e-9 * std::abs(a.objective)) << n0 << " " << fresh[0] << " " << fresh[1];
    ++checked;
  }
}

TEST(Optimize, LargerBudgetsGiveSmallerObjectives) {
  const EstimatorSpec spec{Family::MeanVariance, 3, {}};
  double prev = std::numeric_limits<double>::infinity();
  for (double budget : {5.0, 10.0, 20.0, 40.0}) {
    const Allocation a = optimize_allocation(spec, trig_pilot(), CostModel{kTrigCosts, budget}, Scheme::AcvIs);
    EXPECT_LT(a.objective, prev) << budget;
    EXPECT_LE(a.cost, budget * (1 + 1e-12));
    prev = a.objective;
  }
}

TEST(Optimize, HighFidelityOnly) {
  const EstimatorSpec spec{Family::Mean, 3, {}};
  const Allocation a = optimize_allocation(spec, trig_pilot().select_models({0}), CostModel{{2.0}, 9.0}, Scheme::AcvIs);
  EXPECT_EQ(a.n0, 4);
  EXPECT_TRUE(a.fresh.empty());
  EXPECT_NEAR(a.objective, log_det(trig_pilot().a(0, 0) / 4.0), 1e-12);
}

TEST(Optimize, MinimumCountsCanBeRaised) {
  const EstimatorSpec spec{Family::Mean, 3, {}};
  OptimizerOptions opt;
  opt.min_n0 = 3;
  opt.min_fresh = 5;
  const Allocation a = optimize_allocation(spec, trig_pilot(), CostModel{kTrigCosts, 10.0}, Scheme::AcvIs, opt);
  EXPECT_GE(a.n0, 3);
  for (auto n : a.fresh) EXPECT_TRUE(n == 0 || n >= 5) << n;
  EXPECT_LE(a.cost, 10.0 * (1 + 1e-12));
}

TEST(Optimize, InfeasibleBudgets) {
  const EstimatorSpec spec{Family::Variance, 3, {}};
  EXPECT_THROW(optimize_allocation(spec, trig_pilot(), CostModel{kTrigCosts, 1.5}, Scheme::AcvIs), std::invalid_argument);
  EXPECT_THROW(optimize_allocation(spec, trig_pilot(), CostModel{kTrigCosts, 0.0}, Scheme::AcvIs), std::invalid_argument);
  EXPECT_THROW(optimize_allocation(spec, trig_pilot(), CostModel{{1.0, -0.1, 0.1}, 5.0}, Scheme::AcvIs),
               std::invalid_argument);
}

TEST(Optimize, IdenticalModelsShareSamplesEvenly) {
  auto hi = [](const Vector& x) { Vector y(1); y << x[0] * x[0] + x[0]; return y; };
  auto lo = [](const Vector& x) { Vector y(1); y << x[0] * x[0]; return y; };
  const DiscreteCase c = DiscreteCase::from_functions({0.0, 1.0, 2.0}, {0.3, 0.3, 0.4}, 1, {hi, lo, lo});
  const PilotStatistics p = exact_pilot(c, PilotNeeds{});
  const Allocation a = optimize_allocation({Family::Mean, 1, {}}, p, CostModel{{1.0, 0.05, 0.05}, 20.0}, Scheme::AcvIs);
  ASSERT_EQ(a.fresh.size(), 2u);
  if (a.fresh[0] > 0 && a.fresh[1] > 0) {
    EXPECT_LE(std::abs(a.fresh[0] - a.fresh[1]), 1);
  }
  const auto s = a.active();
  EXPECT_FALSE(s.empty());
}

TEST(Optimize, OrderingViolationsAreReported) {
  EXPECT_EQ((CostModel{{1.0, 2.0, 0.5}, 3.0}).ordering_violations(), (std::vector<std::size_t>{1}));
}
