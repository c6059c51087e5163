#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ssmid/errors.hpp"
#include "ssmid/gaussian_filters.hpp"

using namespace ssmid;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ObservationSequence obs(const Matrix& values) { return ObservationSequence{values}; }

// Random stable scalar system.
LinearGaussianSpec random_scalar(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-0.95, 0.95), pos(0.1, 2.0);
  auto s = scalar_linear_gaussian(u(gen), pos(gen), pos(gen), pos(gen), u(gen), pos(gen));
  s.theta = vec({0.0});
  return s.validate();
}

// Random stable 2-D system with 2 outputs.
LinearGaussianSpec random_bivariate(std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  LinearGaussianSpec s;
  Matrix A(2, 2);
  A << n(gen), n(gen), n(gen), n(gen);
  const double radius = Eigen::EigenSolver<Matrix>(A).eigenvalues().cwiseAbs().maxCoeff();
  s.F = 0.9 * A / std::max(radius, 1e-3);
  s.G = Matrix(2, 2);
  s.G << n(gen), n(gen), n(gen), n(gen);
  Matrix B(2, 2);
  B << n(gen), n(gen), n(gen), n(gen);
  s.Q = B * B.transpose() + 0.2 * Matrix::Identity(2, 2);
  B << n(gen), n(gen), n(gen), n(gen);
  s.R = B * B.transpose() + 0.2 * Matrix::Identity(2, 2);
  s.mu = vec({n(gen), n(gen)});
  s.P1 = Matrix::Identity(2, 2) * 1.5;
  s.theta = vec({0.0});
  return s.validate();
}

} // namespace

TEST(KalmanFilter, SingleStepWithZeroDynamics) {
  auto s = scalar_linear_gaussian(0.0, 1.0, 1.0, 1.0, 0.0, 1.0);
  s.theta = vec({0.0});
  s.validate();
  const auto r = kalman_filter(s, obs(Matrix::Zero(1, 1)));
  const double expected = -0.5 * std::log(2.0 * std::numbers::pi * 2.0);
  EXPECT_NEAR(r.loglik, expected, 1e-14);
  EXPECT_NEAR(r.loglik, oracle::loglik(s, obs(Matrix::Zero(1, 1))), 1e-12);
}

TEST(KalmanFilter, Deterministic) {
  const auto s = oracle::bivariate_spec();
  const auto d = simulate(*make_linear_gaussian(s), s.theta, 40, 3);
  EXPECT_EQ(kalman_filter(s, d.observations).loglik, kalman_filter(s, d.observations).loglik);
}

TEST(KalmanFilter, MatchesJointGaussianScalar) {
  std::mt19937_64 gen(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = random_scalar(gen);
    for (Index N : {1, 5, 8}) {
      const auto d = simulate(*make_linear_gaussian(s), s.theta, N, 100 + rep);
      EXPECT_NEAR(kalman_filter(s, d.observations).loglik, oracle::loglik(s, d.observations), 1e-8);
    }
  }
}

TEST(KalmanFilter, MatchesJointGaussianBivariate) {
  std::mt19937_64 gen(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = random_bivariate(gen);
    const auto d = simulate(*make_linear_gaussian(s), s.theta, 8, 200 + rep);
    EXPECT_NEAR(kalman_filter(s, d.observations).loglik, oracle::loglik(s, d.observations), 1e-8);
  }
}

TEST(KalmanFilter, LoglikRecomputableFromPredictive) {
  const auto s = oracle::bivariate_spec();
  const auto d = simulate(*make_linear_gaussian(s), s.theta, 300, 8);
  const auto r = kalman_filter(s, d.observations);
  EXPECT_NEAR(loglik_from_predictive(r, d.observations), r.loglik, 1e-10);
}

TEST(KalmanFilter, CovariancesSymmetricPositive) {
  const auto s = oracle::bivariate_spec();
  const auto d = simulate(*make_linear_gaussian(s), s.theta, 1000, 9);
  const auto r = kalman_filter(s, d.observations);
  for (const auto& b : r.filtered) {
    EXPECT_LE((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(b.cov).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(KalmanFilter, DimensionMismatchIsRejected) {
  const auto s = oracle::bivariate_spec();
  EXPECT_THROW(kalman_filter(s, obs(Matrix::Zero(1, 5))), Error);
}

TEST(RtsSmoother, SingleStepEqualsFiltered) {
  const auto s = oracle::bivariate_spec();
  const auto d = simulate(*make_linear_gaussian(s), s.theta, 1, 2);
  const auto fr = kalman_filter(s, d.observations);
  const auto sm = rts_smoother(s, fr);
  ASSERT_EQ(sm.size(), 1);
  EXPECT_LE((sm.means[0] - fr.filtered[0].mean).norm(), 1e-14);
  EXPECT_LE((sm.covs[0] - fr.filtered[0].cov).norm(), 1e-14);
  EXPECT_TRUE(sm.cross_covs.empty());
}

TEST(RtsSmoother, MatchesJointPosterior) {
  std::mt19937_64 gen(10);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = rep % 2 == 0 ? random_scalar(gen) : random_bivariate(gen);
    const Index N = rep % 2 == 0 ? 4 : 7;
    const Index dx = s.state_dim();
    const auto d = simulate(*make_linear_gaussian(s), s.theta, N, 300 + rep);
    const auto sm = rts_smoother(s, kalman_filter(s, d.observations));
    const auto post = oracle::posterior(s, d.observations);
    for (Index t = 0; t < N; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      EXPECT_LE((sm.means[ts] - post.mean.segment(t * dx, dx)).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LE((sm.covs[ts] - post.cov.block(t * dx, t * dx, dx, dx)).cwiseAbs().maxCoeff(), 1e-9);
      if (t + 1 < N)
        EXPECT_LE((sm.cross_covs[ts] - post.cov.block(t * dx, (t + 1) * dx, dx, dx)).cwiseAbs().maxCoeff(),
                  1e-9);
    }
  }
}

TEST(RtsSmoother, PureFunction) {
  const auto s = oracle::bivariate_spec();
  const auto d = simulate(*make_linear_gaussian(s), s.theta, 50, 4);
  const auto fr = kalman_filter(s, d.observations);
  const auto a = rts_smoother(s, fr);
  const auto b = rts_smoother(s, fr);
  for (std::size_t t = 0; t < a.means.size(); ++t) {
    EXPECT_EQ(a.means[t], b.means[t]);
    EXPECT_EQ(a.covs[t], b.covs[t]);
  }
}

TEST(Ekf, EqualsKalmanOnLinearModels) {
  std::mt19937_64 gen(12);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = rep % 2 == 0 ? random_scalar(gen) : random_bivariate(gen);
    const auto m = make_linear_gaussian(s);
    const auto d = simulate(*m, s.theta, 100, 400 + rep);
    const auto kf = kalman_filter(s, d.observations);
    const auto ek = ekf(*m, s.theta, d.observations);
    EXPECT_NEAR(ek.loglik, kf.loglik, 1e-10);
    for (std::size_t t = 0; t < kf.filtered.size(); ++t)
      EXPECT_LE((ek.filtered[t].mean - kf.filtered[t].mean).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Ekf, Model1FirstPredictStep) {
  const auto m = make_model1();
  const Vector theta = vec({0.5, 0.3});
  const auto r = ekf(*m, theta, obs(Matrix::Constant(1, 2, 0.9)));
  // Update at t=1 from the N(0,1) prior with H = 0.5.
  const double S1 = 0.25 + 0.01;
  const double K1 = 0.5 / S1;
  const double m1 = K1 * (0.9 - 0.3);
  const double P1 = 1.0 - K1 * 0.5;
  EXPECT_NEAR(r.filtered[0].mean(0), m1, 1e-12);
  EXPECT_NEAR(r.filtered[0].cov(0, 0), P1, 1e-12);
  // Predict through arctan with Jacobian 1 / (1 + m1^2).
  const double A = 1.0 / (1.0 + m1 * m1);
  EXPECT_NEAR(r.predicted[1].mean(0), std::atan(m1), 1e-12);
  EXPECT_NEAR(r.predicted[1].cov(0, 0), A * P1 * A + 1.0, 1e-12);
}

TEST(Ekf, Model2WithZeroTheta1IsLinear) {
  const auto m = make_model2();
  const Vector theta = vec({0.0, 0.5});
  const auto d = simulate(*m, theta, 100, 13);
  auto s = scalar_linear_gaussian(0.0, 0.5, 1.0, 0.01, 0.0, 1.0);
  s.theta = vec({0.0});
  s.validate();
  EXPECT_NEAR(ekf(*m, theta, d.observations).loglik, kalman_filter(s, d.observations).loglik, 1e-10);
}

TEST(Ekf, RequiresAdditiveGaussianStructure) {
  struct Opaque final : Model {
    std::string name() const override { return "opaque"; }
    Index state_dim() const override { return 1; }
    Index obs_dim() const override { return 1; }
    Index param_dim() const override { return 1; }
    void sample_initial(Rng&, VecRef x) const override { x(0) = 0.0; }
    double initial_logdensity(ConstVecRef) const override { return 0.0; }
    void sample_transition(const ParameterVector&, ConstVecRef, Rng&, VecRef n) const override { n(0) = 0.0; }
    void sample_observation(const ParameterVector&, ConstVecRef, Rng&, VecRef y) const override { y(0) = 0.0; }
    double transition_logdensity(const ParameterVector&, ConstVecRef, ConstVecRef) const override { return 0.0; }
    double observation_logdensity(const ParameterVector&, ConstVecRef, ConstVecRef) const override { return 0.0; }
    void accumulate_xi_transition(const ParameterVector&, ConstVecRef, ConstVecRef, double, VecRef) const override {}
    void accumulate_xi_observation(const ParameterVector&, ConstVecRef, ConstVecRef, double, VecRef) const override {}
  } opaque;
  try {
    ekf(static_cast<const Model&>(opaque), vec({0.0}), obs(Matrix::Zero(1, 3)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Ekf, LoglikOnlyPathMatchesFullFilter) {
  const Vector t1 = vec({0.5, 0.3});
  const Vector t2 = vec({0.7, 0.5});
  const auto m1 = make_model1();
  const auto m2 = make_model2();
  const auto d1 = simulate(*m1, t1, 400, 21);
  const auto d2 = simulate(*m2, t2, 400, 22);
  EXPECT_NEAR(ekf_loglik(*m1, t1, d1.observations), ekf(*m1, t1, d1.observations).loglik, 1e-9);
  EXPECT_NEAR(ekf_loglik(*m2, t2, d2.observations), ekf(*m2, t2, d2.observations).loglik, 1e-9);
  const auto s = oracle::bivariate_spec();
  const auto mb = make_linear_gaussian(s);
  const auto db = simulate(*mb, s.theta, 100, 23);
  EXPECT_EQ(ekf_loglik(*mb, s.theta, db.observations), ekf(*mb, s.theta, db.observations).loglik);
}
