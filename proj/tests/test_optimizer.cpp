#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ssmid/errors.hpp"
#include "ssmid/gaussian_filters.hpp"
#include "ssmid/optimizer.hpp"

using namespace ssmid;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Scalar LGSS with theta = (F, G).
LinearGaussianSpec fg_spec(double F, double G) {
  auto s = scalar_linear_gaussian(F, G, 1.0, 0.5);
  s.theta = vec({F, G});
  const Matrix one = Matrix::Ones(1, 1), zero = Matrix::Zero(1, 1);
  s.dF = {one, zero};
  s.dG = {zero, one};
  return s.validate();
}

// Observation gain and a second output gain are the parameters; the
// log-likelihood is smooth and concave near the truth.
LinearGaussianSpec g_only_spec() {
  LinearGaussianSpec s;
  s.F = Matrix::Constant(1, 1, 0.8);
  s.G = Matrix(2, 1);
  s.G << 1.0, 0.5;
  s.Q = Matrix::Constant(1, 1, 1.0);
  s.R = Matrix::Identity(2, 2) * 0.3;
  s.mu = Vector::Zero(1);
  s.P1 = Matrix::Identity(1, 1);
  s.theta = vec({1.0, 0.5});
  Matrix d0 = Matrix::Zero(2, 1), d1 = Matrix::Zero(2, 1);
  d0(0, 0) = 1.0;
  d1(1, 0) = 1.0;
  s.dF = {Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  s.dG = {d0, d1};
  return s.validate();
}

void expect_same(const NewtonTrace& a, const NewtonTrace& b) {
  ASSERT_EQ(a.iterations(), b.iterations());
  for (int i = 0; i < a.iterations(); ++i) {
    const auto& x = a.iterates[static_cast<std::size_t>(i)];
    const auto& y = b.iterates[static_cast<std::size_t>(i)];
    EXPECT_EQ(x.theta, y.theta);
    EXPECT_EQ(x.loglik, y.loglik);
    EXPECT_EQ(x.grad_norm, y.grad_norm);
    EXPECT_EQ(x.step, y.step);
    EXPECT_EQ(x.direction, y.direction);
  }
  EXPECT_EQ(a.stop_reason, b.stop_reason);
}

} // namespace

TEST(StepLength, StochasticSchedule) {
  StepPolicy p;
  p.kind = StepPolicyKind::Stochastic;
  const LoglikFn unused = [](const ParameterVector&) { return 0.0; };
  EXPECT_DOUBLE_EQ(step_length(p, 1, vec({0.0}), vec({1.0}), 0.0, 1.0, unused), 1.0);
  EXPECT_NEAR(step_length(p, 8, vec({0.0}), vec({1.0}), 0.0, 1.0, unused), 0.25, 1e-15);
}

TEST(StepLength, NewtonStepOnConcaveQuadraticAcceptsOne) {
  StepPolicy p;
  const Vector center = vec({1.0, -2.0});
  const LoglikFn f = [&](const ParameterVector& th) { return -(th - center).squaredNorm(); };
  const Vector theta = vec({0.0, 0.0});
  const Vector grad = -2.0 * (theta - center);
  const Vector direction = grad / 2.0;
  EXPECT_EQ(step_length(p, 1, theta, direction, f(theta), grad.dot(direction), f), 1.0);
}

TEST(StepLength, HalvesUntilArmijo) {
  StepPolicy p;
  const LoglikFn f = [](const ParameterVector& th) { return -th.squaredNorm(); };
  // From 1 along -8 the first acceptable step is 1/8 or 1/4.
  const double eps = step_length(p, 1, vec({1.0}), vec({-8.0}), -1.0, 16.0, f);
  EXPECT_TRUE(eps == 0.125 || eps == 0.25) << eps;
}

TEST(StepLength, InfiniteObjectiveIsZeroStep) {
  StepPolicy p;
  const Vector theta = vec({0.3});
  const LoglikFn f = [&](const ParameterVector& th) {
    return th == theta ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  try {
    step_length(p, 1, theta, vec({1.0}), 0.0, 1.0, f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroStep);
  }
}

TEST(Config, DefaultsPerMethod) {
  const auto a = default_config(Method::Alg2, vec({0.1}));
  EXPECT_EQ(a.max_iters, 100);
  EXPECT_EQ(a.step.kind, StepPolicyKind::Backtracking);
  const auto f = default_config(Method::Alg3FFBSi, vec({0.1}));
  EXPECT_EQ(f.max_iters, 500);
  EXPECT_EQ(f.step.kind, StepPolicyKind::Stochastic);
  EXPECT_EQ(f.smoother.kind, SmootherKind::Ffbsi);
  EXPECT_EQ(f.smoother.particles, 2000);
  EXPECT_EQ(f.smoother.backward, 100);
  EXPECT_EQ(f.smoother.rejection_limit, 10);
  EXPECT_EQ(default_config(Method::Alg3FL, vec({0.1})).smoother.lag, 12);
  EXPECT_EQ(parse_method("ALG3FFBSi"), Method::Alg3FFBSi);
  EXPECT_THROW(parse_method("ALG4"), Error);
  auto bad = a;
  bad.grad_tol = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.max_iters = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(NewtonSolve, ToleranceMetAtStartReturnsStart) {
  const auto m = make_model1();
  const auto d = simulate(*m, vec({0.5, 0.3}), 200, 1);
  for (Method method : {Method::Alg2, Method::Num}) {
    auto cfg = default_config(method, vec({0.7, 0.0}));
    cfg.grad_tol = 1e12;
    const auto trace = estimate(*m, d.observations, cfg);
    EXPECT_EQ(trace.iterations(), 1);
    EXPECT_EQ(trace.final, cfg.theta0);
    EXPECT_TRUE(trace.converged);
  }
}

TEST(NewtonSolve, SingleAllowedIterationReturnsStart) {
  const auto m = make_model2();
  const auto d = simulate(*m, vec({0.7, 0.5}), 200, 2);
  for (Method method : {Method::Alg2, Method::Num, Method::Alg3FL}) {
    auto cfg = default_config(method, vec({0.5, 0.7}));
    cfg.max_iters = 1;
    cfg.smoother.particles = 100;
    const auto trace = estimate(*m, d.observations, cfg);
    EXPECT_EQ(trace.iterations(), 1);
    EXPECT_EQ(trace.final, cfg.theta0);
    EXPECT_EQ(trace.stop_reason, "max-iters");
    EXPECT_FALSE(trace.converged);
  }
}

TEST(NewtonSolve, LinearModelGainsConvergeQuickly) {
  const auto s = g_only_spec();
  const auto m = make_linear_gaussian(s);
  const auto d = simulate(*m, s.theta, 500, 3);
  const auto trace = estimate(*m, d.observations, default_config(Method::Alg2, vec({0.9, 0.6})));
  EXPECT_TRUE(trace.converged);
  EXPECT_LE(trace.iterations(), 20);
  for (std::size_t i = 1; i < trace.iterates.size(); ++i) {
    EXPECT_LT(trace.iterates[i].grad_norm, trace.iterates[i - 1].grad_norm);
    EXPECT_EQ(trace.iterates[i - 1].step, 1.0);
  }
}

TEST(NewtonSolve, LinearModelFixedPointIsExactScoreRoot) {
  // Q stays fixed: with G and Q both free only G^2 Q is identified.
  auto s = scalar_linear_gaussian(0.7, 1.0, 1.0, 0.5);
  s.theta = vec({0.7, 1.0, 0.5});
  const Matrix one = Matrix::Ones(1, 1), zero = Matrix::Zero(1, 1);
  s.dF = {one, zero, zero};
  s.dG = {zero, one, zero};
  s.dR = {zero, zero, one};
  s.validate();
  const auto m = make_linear_gaussian(s);
  const auto d = simulate(*m, s.theta, 300, 4);
  auto cfg = default_config(Method::Alg2, vec({0.5, 0.8, 0.4}));
  cfg.grad_tol = 1e-2;
  const auto trace = estimate(*m, d.observations, cfg);
  ASSERT_TRUE(trace.converged) << trace.stop_reason;
  const Vector score = finite_difference_gradient(
      [&](const ParameterVector& th) { return kalman_filter(s.at(th), d.observations).loglik; }, trace.final);
  EXPECT_LE(score.cwiseAbs().maxCoeff(), cfg.grad_tol * 1.01);
}

TEST(NewtonSolve, DeterministicLoglikNonDecreasing) {
  for (int rep = 0; rep < 4; ++rep) {
    const bool second = rep % 2 == 1;
    const ModelPtr m = second ? ModelPtr(make_model2()) : ModelPtr(make_model1());
    const Vector truth = second ? vec({0.7, 0.5}) : vec({0.5, 0.3});
    const Vector start = second ? vec({0.5, 0.7}) : vec({0.7, 0.0});
    const auto d = simulate(*m, truth, 1000, 10 + rep);
    for (Method method : {Method::Alg2, Method::Num}) {
      const auto trace = estimate(*m, d.observations, default_config(method, start));
      for (std::size_t i = 1; i < trace.iterates.size(); ++i)
        EXPECT_GE(trace.iterates[i].loglik, trace.iterates[i - 1].loglik);
      for (std::size_t i = 1; i < trace.iterates.size(); ++i)
        EXPECT_EQ(trace.iterates[i].k, trace.iterates[i - 1].k + 1);
    }
  }
}

TEST(NewtonSolve, Model1Alg2NearTruth) {
  const auto m = make_model1();
  const auto d = simulate(*m, vec({0.5, 0.3}), 1000, 20);
  const auto trace = estimate(*m, d.observations, default_config(Method::Alg2, vec({0.7, 0.0})));
  EXPECT_TRUE(trace.converged) << trace.stop_reason;
  EXPECT_NEAR(std::abs(trace.final(0)), 0.5, 0.03);
  EXPECT_NEAR(trace.final(1), 0.3, 0.1);
}

TEST(NewtonSolve, StochasticStopsAfterConsecutiveSmallSteps) {
  const auto m = make_model1();
  const auto d = simulate(*m, vec({0.5, 0.3}), 100, 21);
  auto cfg = default_config(Method::Alg3FL, vec({0.7, 0.0}));
  cfg.smoother.particles = 100;
  cfg.param_tol = 1e6;
  const auto trace = estimate(*m, d.observations, cfg);
  EXPECT_EQ(trace.iterations(), cfg.small_step_window + 1);
  EXPECT_EQ(trace.stop_reason, "parameter-tolerance");
  EXPECT_DOUBLE_EQ(trace.iterates[1].step, std::pow(2.0, -2.0 / 3.0));
}

TEST(NewtonSolve, StochasticTraceReproducible) {
  const auto m = make_model2();
  const auto d = simulate(*m, vec({0.7, 0.5}), 150, 22);
  for (Method method : {Method::Alg3FL, Method::Alg3FFBSi}) {
    auto cfg = default_config(method, vec({0.5, 0.7}));
    cfg.smoother.particles = 200;
    cfg.smoother.backward = 20;
    cfg.max_iters = 6;
    cfg.seed = 99;
    const auto a = estimate(*m, d.observations, cfg);
    const auto b = estimate(*m, d.observations, cfg);
    expect_same(a, b);
    cfg.seed = 100;
    const auto c = estimate(*m, d.observations, cfg);
    EXPECT_NE(a.final, c.final);
  }
}

TEST(NewtonSolve, Alg2NeedsAdditiveGaussianModel) {
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
  const ObservationSequence y{Matrix::Zero(1, 10)};
  EXPECT_THROW(estimate(opaque, y, default_config(Method::Alg2, vec({0.0}))), Error);
  EXPECT_THROW(estimate(opaque, y, default_config(Method::Num, vec({0.0}))), Error);
}

TEST(QuasiNewton, MatchesGridSearchMle) {
  const auto s = fg_spec(0.6, 1.0);
  const auto m = make_linear_gaussian(s);
  const auto d = simulate(*m, s.theta, 200, 30);
  auto cfg = default_config(Method::Num, vec({0.3, 1.4}));
  cfg.grad_tol = 1e-4;
  const auto trace = estimate(*m, d.observations, cfg);
  ASSERT_TRUE(trace.converged) << trace.stop_reason;
  const auto loglik = [&](const Vector& th) { return kalman_filter(s.at(th), d.observations).loglik; };
  const Vector grid = oracle::grid_argmax(loglik, trace.final, 0.2, 41, 6);
  EXPECT_LE((trace.final - grid).cwiseAbs().maxCoeff(), 1e-3) << trace.final.transpose() << " vs "
                                                              << grid.transpose();
  for (const auto& e : trace.iterates)
    if (!e.direction.empty()) EXPECT_EQ(e.direction, "quasi-newton");
}

TEST(QuasiNewton, Model2NearTruth) {
  const auto m = make_model2();
  const auto d = simulate(*m, vec({0.7, 0.5}), 1000, 31);
  const auto trace = estimate(*m, d.observations, default_config(Method::Num, vec({0.5, 0.7})));
  EXPECT_TRUE(trace.converged);
  EXPECT_NEAR(trace.final(0), 0.7, 0.15);
  EXPECT_NEAR(trace.final(1), 0.5, 0.02);
}
