#include "ssmid/map_smoother.hpp"

#include <cmath>
#include <limits>

namespace ssmid {

namespace {

Matrix lower_cholesky_inverse(const Matrix& cov, const char* what) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, std::string(what) + " is not positive definite");
  const Matrix L = llt.matrixL();
  return L.triangularView<Eigen::Lower>().solve(Matrix::Identity(cov.rows(), cov.cols()));
}

struct BlockFactor {
  std::vector<Eigen::LLT<Matrix>> pivots;  // factorizations of D_t
  std::vector<Matrix> lower;               // L_{t+1,t} = U_t^T D_t^{-1}
};

BlockFactor factorize(const BlockTridiagonalMatrix& H) {
  const Index N = H.blocks();
  if (N == 0) throw Error(ErrorKind::InvalidArgument, "empty block-tridiagonal matrix");
  if (static_cast<Index>(H.upper.size()) != N - 1)
    throw Error(ErrorKind::InvalidArgument, "block-tridiagonal matrix needs N-1 off-diagonal blocks");
  BlockFactor f;
  f.pivots.reserve(static_cast<std::size_t>(N));
  f.lower.reserve(static_cast<std::size_t>(N - 1));
  Matrix D = H.diag[0];
  for (Index t = 0; t < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    f.pivots.emplace_back(0.5 * (D + D.transpose()));
    if (f.pivots.back().info() != Eigen::Success)
      throw Error(ErrorKind::IndefiniteHessian, "block pivot is not positive definite", t + 1);
    if (t + 1 < N) {
      const Matrix& U = H.upper[ts];
      Matrix Lt = f.pivots.back().solve(U).transpose();
      D = H.diag[ts + 1] - Lt * U;
      f.lower.push_back(std::move(Lt));
    }
  }
  return f;
}

} // namespace

Matrix BlockTridiagonalMatrix::to_dense() const {
  const Index N = blocks();
  const Index d = block_dim();
  Matrix out = Matrix::Zero(N * d, N * d);
  for (Index t = 0; t < N; ++t) {
    out.block(t * d, t * d, d, d) = diag[static_cast<std::size_t>(t)];
    if (t + 1 < N) {
      out.block(t * d, (t + 1) * d, d, d) = upper[static_cast<std::size_t>(t)];
      out.block((t + 1) * d, t * d, d, d) = upper[static_cast<std::size_t>(t)].transpose();
    }
  }
  return out;
}

Vector BlockTridiagonalMatrix::multiply(const Vector& v) const {
  const Index N = blocks();
  const Index d = block_dim();
  Vector out = Vector::Zero(N * d);
  for (Index t = 0; t < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    out.segment(t * d, d) += diag[ts] * v.segment(t * d, d);
    if (t + 1 < N) {
      out.segment(t * d, d) += upper[ts] * v.segment((t + 1) * d, d);
      out.segment((t + 1) * d, d) += upper[ts].transpose() * v.segment(t * d, d);
    }
  }
  return out;
}

Vector ResidualSystem::gradient() const {
  const Index dx = state_dim;
  const Index dy = obs_dim;
  const Index N = horizon;
  Vector g = Vector::Zero(N * dx);
  g.segment(0, dx) += prior_block.transpose() * residual.segment(0, dx);
  const Index trans_off = dx;
  const Index obs_off = dx + (N - 1) * dx;
  for (Index t = 0; t + 1 < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto r = residual.segment(trans_off + t * dx, dx);
    g.segment(t * dx, dx) += transition_prev[ts].transpose() * r;
    g.segment((t + 1) * dx, dx) += transition_next[ts].transpose() * r;
  }
  for (Index t = 0; t < N; ++t)
    g.segment(t * dx, dx) +=
        observation[static_cast<std::size_t>(t)].transpose() * residual.segment(obs_off + t * dy, dy);
  return g;
}

BlockTridiagonalMatrix ResidualSystem::normal_matrix() const {
  const Index dx = state_dim;
  const Index N = horizon;
  BlockTridiagonalMatrix H;
  H.diag.assign(static_cast<std::size_t>(N), Matrix::Zero(dx, dx));
  H.upper.assign(static_cast<std::size_t>(N - 1), Matrix::Zero(dx, dx));
  H.diag[0] += prior_block.transpose() * prior_block;
  for (Index t = 0; t + 1 < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    H.diag[ts] += transition_prev[ts].transpose() * transition_prev[ts];
    H.diag[ts + 1] += transition_next[ts].transpose() * transition_next[ts];
    H.upper[ts] += transition_prev[ts].transpose() * transition_next[ts];
  }
  for (Index t = 0; t < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    H.diag[ts] += observation[ts].transpose() * observation[ts];
  }
  return H;
}

Matrix ResidualSystem::dense_jacobian() const {
  const Index dx = state_dim;
  const Index dy = obs_dim;
  const Index N = horizon;
  Matrix J = Matrix::Zero(residual.size(), N * dx);
  J.block(0, 0, dx, dx) = prior_block;
  for (Index t = 0; t + 1 < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    J.block(dx + t * dx, t * dx, dx, dx) = transition_prev[ts];
    J.block(dx + t * dx, (t + 1) * dx, dx, dx) = transition_next[ts];
  }
  const Index obs_off = dx + (N - 1) * dx;
  for (Index t = 0; t < N; ++t)
    J.block(obs_off + t * dy, t * dx, dy, dx) = observation[static_cast<std::size_t>(t)];
  return J;
}

ResidualSystem stack_residuals(const AdditiveGaussianModel& model, const ParameterVector& theta,
                               const ObservationSequence& y, const StateTrajectory& x) {
  const Index N = y.size();
  const Index dx = model.state_dim();
  const Index dy = model.obs_dim();
  if (x.size() != N || x.dim() != dx)
    throw Error(ErrorKind::InvalidArgument, "trajectory shape does not match observations");
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "empty observation sequence");

  const Matrix P1_white = lower_cholesky_inverse(model.initial_cov(), "P1");
  const Matrix Q_white = lower_cholesky_inverse(model.process_noise(theta), "Q");
  const Matrix R_white = lower_cholesky_inverse(model.measurement_noise(theta), "R");

  ResidualSystem sys;
  sys.state_dim = dx;
  sys.obs_dim = dy;
  sys.horizon = N;
  sys.residual.resize(dx + (N - 1) * dx + N * dy);
  sys.prior_block = P1_white;
  sys.residual.segment(0, dx) = P1_white * (x.at(0) - model.initial_mean());

  sys.transition_prev.reserve(static_cast<std::size_t>(N - 1));
  sys.transition_next.assign(static_cast<std::size_t>(N - 1), Q_white);
  Vector mean(dx);
  for (Index t = 0; t + 1 < N; ++t) {
    model.transition_mean(theta, x.at(t), mean);
    sys.residual.segment(dx + t * dx, dx) = Q_white * (x.at(t + 1) - mean);
    sys.transition_prev.push_back(-Q_white * model.transition_jacobian(theta, x.at(t)));
  }
  const Index obs_off = dx + (N - 1) * dx;
  sys.observation.reserve(static_cast<std::size_t>(N));
  Vector obs_mean(dy);
  for (Index t = 0; t < N; ++t) {
    model.observation_mean(theta, x.at(t), obs_mean);
    sys.residual.segment(obs_off + t * dy, dy) = R_white * (y.at(t) - obs_mean);
    sys.observation.push_back(-R_white * model.observation_jacobian(theta, x.at(t)));
  }
  return sys;
}

Vector solve_block_tridiagonal(const BlockTridiagonalMatrix& H, const Vector& rhs) {
  const BlockFactor f = factorize(H);
  const Index N = H.blocks();
  const Index d = H.block_dim();
  Vector z = rhs;
  for (Index t = 0; t + 1 < N; ++t)
    z.segment((t + 1) * d, d) -= f.lower[static_cast<std::size_t>(t)] * z.segment(t * d, d);
  for (Index t = 0; t < N; ++t)
    z.segment(t * d, d) = f.pivots[static_cast<std::size_t>(t)].solve(Vector(z.segment(t * d, d)));
  for (Index t = N - 2; t >= 0; --t)
    z.segment(t * d, d) -=
        f.lower[static_cast<std::size_t>(t)].transpose() * z.segment((t + 1) * d, d);
  return z;
}

CovarianceBlocks extract_smoothed_covariances(const BlockTridiagonalMatrix& H) {
  const BlockFactor f = factorize(H);
  const Index N = H.blocks();
  const Index d = H.block_dim();
  const Matrix I = Matrix::Identity(d, d);
  CovarianceBlocks out;
  out.covs.resize(static_cast<std::size_t>(N));
  out.cross_covs.resize(static_cast<std::size_t>(N - 1));
  out.covs.back() = f.pivots.back().solve(I);
  for (Index t = N - 2; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Matrix& L = f.lower[ts];
    const Matrix& S_next = out.covs[ts + 1];
    out.cross_covs[ts] = -L.transpose() * S_next;
    Matrix S = f.pivots[ts].solve(I) + L.transpose() * S_next * L;
    out.covs[ts] = 0.5 * (S + S.transpose());
  }
  return out;
}

GaussNewtonResult gauss_newton_map(const TrajectoryProblem& problem,
                                   const GaussNewtonOptions& options) {
  const auto& model = problem.model;
  const auto& theta = problem.theta;
  const auto& y = problem.y;
  const Index N = y.size();
  const Index dx = model.state_dim();

  GaussNewtonResult out;
  StateTrajectory x = problem.x0;
  ResidualSystem sys = stack_residuals(model, theta, y, x);
  double phi = sys.objective();
  out.objective_history.push_back(phi);

  for (;;) {
    const Vector g = sys.gradient();
    out.grad_inf = g.cwiseAbs().maxCoeff();
    if (out.grad_inf <= options.grad_tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= options.max_iters) break;

    const Vector step = -solve_block_tridiagonal(sys.normal_matrix(), g);
    const double slope = g.dot(step);
    // Predicted reduction below the rounding floor of the objective itself.
    if (-slope <= 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + phi)) {
      out.converged = true;
      break;
    }

    double alpha = 1.0;
    bool accepted = false;
    StateTrajectory trial;
    ResidualSystem trial_sys;
    for (int h = 0; h <= options.max_halvings; ++h, alpha *= 0.5) {
      trial.values = x.values + alpha * step.reshaped(dx, N);
      if (!trial.values.allFinite()) continue;
      trial_sys = stack_residuals(model, theta, y, trial);
      const double trial_phi = trial_sys.objective();
      if (std::isfinite(trial_phi) && trial_phi <= phi + options.armijo * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw NoProgressError("Gauss-Newton line search exhausted", x);
    x = std::move(trial);
    sys = std::move(trial_sys);
    phi = sys.objective();
    out.objective_history.push_back(phi);
    ++out.iterations;
  }
  out.objective = phi;
  out.trajectory = std::move(x);
  return out;
}

MapSmootherOutput map_smoother(const AdditiveGaussianModel& model, const ParameterVector& theta,
                               const ObservationSequence& y, const GaussNewtonOptions& options) {
  MapSmootherOutput out;
  out.filter = ekf(model, theta, y);
  const Index N = y.size();
  StateTrajectory x0;
  x0.values.resize(model.state_dim(), N);
  for (Index t = 0; t < N; ++t) x0.values.col(t) = out.filter.filtered[static_cast<std::size_t>(t)].mean;

  out.solve = gauss_newton_map(TrajectoryProblem{model, theta, y, std::move(x0)}, options);
  const ResidualSystem sys = stack_residuals(model, theta, y, out.solve.trajectory);
  CovarianceBlocks cov = extract_smoothed_covariances(sys.normal_matrix());

  out.moments.means.reserve(static_cast<std::size_t>(N));
  for (Index t = 0; t < N; ++t) out.moments.means.push_back(out.solve.trajectory.at(t));
  out.moments.covs = std::move(cov.covs);
  out.moments.cross_covs = std::move(cov.cross_covs);
  return out;
}

} // namespace ssmid
