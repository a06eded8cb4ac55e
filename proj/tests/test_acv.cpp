#include "mfacv/acv.hpp"
#include "mfacv/oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mfacv;

namespace {

// Joint covariance of [Q; Delta] from a random factor model.
AssembledSystem random_system(Index len, Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  const Index dim = len * (k + 1);
  Matrix x(dim, dim + 4);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = n(rng);
  const Matrix s = x * x.transpose();
  return split_system(s, len);
}

}  // namespace

TEST(Weights, VarianceIsTheSchurComplement) {
  std::mt19937_64 rng(1);
  const AssembledSystem s = random_system(3, 2, rng);
  const WeightResult w = optimal_weights(s.var_delta, s.cov_q_delta);
  EXPECT_FALSE(w.pseudo_inverse);
  const Matrix var = acv_variance(s.var_delta, s.cov_q_delta, s.var_q, w.alpha);
  const Matrix schur = s.var_q - s.cov_q_delta * s.var_delta.inverse() * s.cov_q_delta.transpose();
  EXPECT_LT((var - schur).norm(), 1e-10 * schur.norm());
}

TEST(Weights, OptimalInTheLoewnerOrder) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  const AssembledSystem s = random_system(2, 3, rng);
  const Matrix best = acv_variance(s.var_delta, s.cov_q_delta, s.var_q, optimal_weights(s.var_delta, s.cov_q_delta).alpha);
  for (int t = 0; t < 50; ++t) {
    Matrix alpha = optimal_weights(s.var_delta, s.cov_q_delta).alpha;
    for (Index i = 0; i < alpha.rows(); ++i)
      for (Index j = 0; j < alpha.cols(); ++j) alpha(i, j) += 0.1 * n(rng);
    const Matrix diff = acv_variance(s.var_delta, s.cov_q_delta, s.var_q, alpha) - best;
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(diff).eigenvalues().minCoeff(), -1e-9 * best.norm());
  }
}

// log|Var[Q~]| = log|Var[Q]| + sum log(1 - rho_k^2) with canonical correlations rho.
TEST(Weights, DeterminantIdentity) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const AssembledSystem s = random_system(3, 2, rng);
    const EstimatorSpec spec{Family::Mean, 3, {}};
    const AcvSolution sol = solve_acv(spec, s);
    const Vector rho = canonical_correlations(s.var_q, s.var_delta, s.cov_q_delta);
    double expected = log_det(s.var_q);
    for (Index k = 0; k < rho.size(); ++k) expected += std::log1p(-rho[k] * rho[k]);
    EXPECT_NEAR(sol.log_det, expected, 1e-8 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Weights, SingularSystems) {
  Matrix vd(2, 2);
  vd << 1, 1, 1, 1;
  Matrix c(1, 2);
  c << 0.5, 0.5;
  const WeightResult w = optimal_weights(vd, c);
  EXPECT_TRUE(w.pseudo_inverse);
  EXPECT_NEAR(w.alpha(0, 0), -0.25, 1e-12);
  EXPECT_NEAR(w.alpha(0, 1), -0.25, 1e-12);
  EXPECT_THROW(optimal_weights(vd, c, true), std::runtime_error);
  EXPECT_THROW(optimal_weights(Matrix::Zero(2, 2), c, true), std::runtime_error);
  EXPECT_EQ(optimal_weights(Matrix::Zero(2, 2), c).alpha, Matrix::Zero(1, 2));
}

TEST(LogDet, SingularIsMinusInfinity) {
  Matrix m(2, 2);
  m << 1, 1, 1, 1;
  EXPECT_EQ(log_det(m), -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(log_det(Matrix::Identity(3, 3) * 2.0), 3 * std::log(2.0), 1e-14);
}

namespace {

AssembledSystem variance_system() {
  const DiscreteCase c = DiscreteCase::from_functions(
      {0.0, 1.0, 2.0}, {0.2, 0.5, 0.3}, 1,
      {[](const Vector& x) { Vector y(2); y << x[0] * x[0], std::exp(0.3 * x[0]); return y; },
       [](const Vector& x) { Vector y(2); y << x[0], std::exp(0.2 * x[0]) + 0.1 * x[0] * x[0]; return y; }});
  const PilotStatistics p = exact_pilot(c, PilotNeeds{true, false});
  return assemble({Family::Variance, 2, {}}, acv_is_ledger<std::int64_t>(5, {40}, Scheme::AcvIs), p);
}

}  // namespace

TEST(Solve, DuplicateEntriesAgreeAcrossPolicies) {
  const EstimatorSpec spec{Family::Variance, 2, {}};
  const AssembledSystem s = variance_system();
  const AcvSolution dedup = solve_acv(spec, s, SingularPolicy::Deduplicate);
  const AcvSolution pinv = solve_acv(spec, s, SingularPolicy::PseudoInverse);
  const AcvSolution strict = solve_acv(spec, s, SingularPolicy::Strict);
  EXPECT_FALSE(dedup.pseudo_inverse);
  EXPECT_TRUE(pinv.pseudo_inverse);
  EXPECT_LT((dedup.variance - pinv.variance).norm(), 1e-8 * dedup.variance.norm());
  EXPECT_LT((dedup.variance - strict.variance).norm(), 1e-14 * dedup.variance.norm());
  // Both copies of the off-diagonal entry get the same weights and variance.
  EXPECT_EQ(dedup.alpha.row(1), dedup.alpha.row(2));
  EXPECT_NEAR(dedup.variance(1, 1), dedup.variance(2, 2), 1e-15);
  EXPECT_EQ(dedup.statistics, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_TRUE(std::isfinite(dedup.log_det));
  for (Index k = 0; k < 4; ++k) EXPECT_GE(dedup.reduction[k], 1.0 - 1e-12);
}

TEST(Solve, StrictRejectsGenuineRankDeficiency) {
  AssembledSystem s;
  s.var_q = Matrix::Identity(1, 1);
  s.var_delta = Matrix::Ones(2, 2);
  s.cov_q_delta = Matrix::Constant(1, 2, 0.5);
  EXPECT_THROW(solve_acv({Family::Mean, 1, {}}, s, SingularPolicy::Strict), std::runtime_error);
  EXPECT_TRUE(solve_acv({Family::Mean, 1, {}}, s, SingularPolicy::Deduplicate).pseudo_inverse);
}

TEST(Solve, ShapeMismatch) {
  AssembledSystem s;
  s.var_q = Matrix::Identity(2, 2);
  s.var_delta = Matrix::Identity(3, 3);
  s.cov_q_delta = Matrix::Zero(2, 3);
  EXPECT_THROW(solve_acv({Family::Mean, 2, {}}, s), std::invalid_argument);
}

TEST(Evaluate, CombinesDiscrepancies) {
  const EstimatorSpec spec{Family::Variance, 2, {}};
  const AcvSolution sol = solve_acv(spec, variance_system());
  AcvInputs in;
  in.high = Vector::LinSpaced(4, 1.0, 4.0);
  in.starred = {Vector::Constant(4, 0.5)};
  in.plain = {Vector::Constant(4, 0.25)};
  const EstimateVector est = evaluate_moacv(sol, in);
  EXPECT_LT((est.values - (in.high + sol.alpha * Vector::Constant(4, 0.25))).norm(), 1e-15);
  in.plain.clear();
  EXPECT_THROW(evaluate_moacv(sol, in), std::invalid_argument);
}

TEST(Clamp, OnlyVarianceEntriesAreRaised) {
  EstimateVector mv{{Family::MeanVariance, 2, {}}, Vector(6), 0};
  mv.values << -1.0, 2.0, -0.5, -0.2, -0.2, 3.0;
  const EstimateVector a = sanitize_variance_estimate(mv);
  EXPECT_EQ(a.clamped, 1u);
  EXPECT_EQ(a.values[0], -1.0);
  EXPECT_EQ(a.values[2], 0.0);
  EXPECT_EQ(a.values[3], -0.2);
  EXPECT_EQ(a.values[5], 3.0);

  EstimateVector me{{Family::MainEffectVariance, 1, {{0}, {1}}}, Vector(3), 0};
  me.values << -0.1, 0.4, -2.0;
  const EstimateVector b = sanitize_variance_estimate(me);
  EXPECT_EQ(b.clamped, 2u);
  EXPECT_EQ(b.values, Vector(Eigen::Vector3d(0.0, 0.4, 0.0)));
}

TEST(Reduction, RequiresPositiveBaseline) {
  EXPECT_EQ(variance_reduction(Vector::Constant(2, 4.0), Vector::Constant(2, 2.0)), Vector::Constant(2, 2.0));
  EXPECT_THROW(variance_reduction(Vector::Zero(1), Vector::Ones(1)), std::invalid_argument);
  EXPECT_THROW(variance_reduction(Vector::Ones(2), Vector::Ones(1)), std::invalid_argument);
}

TEST(Policy, StringRoundTrip) {
  for (auto p : {SingularPolicy::Deduplicate, SingularPolicy::PseudoInverse, SingularPolicy::Strict}) {
    EXPECT_EQ(singular_policy_from_string(to_string(p)), p);
  }
  EXPECT_THROW(singular_policy_from_string("lu"), std::invalid_argument);
}
