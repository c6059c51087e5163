#pragma once

#include <vector>

#include "ssmid/errors.hpp"
#include "ssmid/gaussian_filters.hpp"
#include "ssmid/models.hpp"

namespace ssmid {

/// Symmetric block-tridiagonal matrix. upper[t] is block (t, t+1); the
/// sub-diagonal is its transpose.
struct BlockTridiagonalMatrix {
  std::vector<Matrix> diag;
  std::vector<Matrix> upper;

  Index blocks() const noexcept { return static_cast<Index>(diag.size()); }
  Index block_dim() const noexcept { return diag.empty() ? 0 : diag.front().rows(); }
  Matrix to_dense() const;
  Vector multiply(const Vector& v) const;
};

/// Whitened residuals of the complete-data log-likelihood for an
/// additive-Gaussian model, stacked as
///   [ L_P1^{-1}(x_1 - mu); L_Q^{-1}(x_{t+1} - f(x_t)), t<N; L_R^{-1}(y_t - g(x_t)) ],
/// together with the non-zero Jacobian blocks d r / d x.
struct ResidualSystem {
  Vector residual;
  Index state_dim = 0;
  Index obs_dim = 0;
  Index horizon = 0;

  Matrix prior_block;                   // d r_prior / d x_1
  std::vector<Matrix> transition_prev;  // d r_trans[t] / d x_t
  std::vector<Matrix> transition_next;  // d r_trans[t] / d x_{t+1}
  std::vector<Matrix> observation;      // d r_obs[t] / d x_t

  /// 0.5 ||r||^2
  double objective() const { return 0.5 * residual.squaredNorm(); }
  /// J^T r, stacked (N d_x).
  Vector gradient() const;
  /// Gauss-Newton normal matrix J^T J.
  BlockTridiagonalMatrix normal_matrix() const;
  Matrix dense_jacobian() const;
};

ResidualSystem stack_residuals(const AdditiveGaussianModel& model, const ParameterVector& theta,
                               const ObservationSequence& y, const StateTrajectory& x);

struct TrajectoryProblem {
  const AdditiveGaussianModel& model;
  ParameterVector theta;
  const ObservationSequence& y;
  StateTrajectory x0;
};

struct GaussNewtonOptions {
  int max_iters = 50;
  double grad_tol = 1e-6;
  double armijo = 1e-4;
  int max_halvings = 40;
};

struct GaussNewtonResult {
  StateTrajectory trajectory;
  int iterations = 0;
  double objective = 0.0;
  double grad_inf = 0.0;
  bool converged = false;
  /// Objective after each accepted step, starting with the initial value.
  std::vector<double> objective_history;
};

class NoProgressError : public Error {
public:
  NoProgressError(const std::string& what, StateTrajectory last)
      : Error(ErrorKind::NoProgress, what), last_(std::move(last)) {}
  const StateTrajectory& last_iterate() const noexcept { return last_; }

private:
  StateTrajectory last_;
};

/// Gauss-Newton with backtracking (Armijo) on 0.5||r(x)||^2. Stops when
/// ||J^T r||_inf <= grad_tol, when the Gauss-Newton decrement reaches the
/// floating-point floor, or after max_iters.
GaussNewtonResult gauss_newton_map(const TrajectoryProblem& problem,
                                   const GaussNewtonOptions& options = {});

struct CovarianceBlocks {
  std::vector<Matrix> covs;        // diagonal blocks of H^{-1}
  std::vector<Matrix> cross_covs;  // blocks (t, t+1) of H^{-1}
};

/// Selected inverse of a positive definite block-tridiagonal matrix via block
/// LDL^T. O(N d^3); the full inverse is never formed.
CovarianceBlocks extract_smoothed_covariances(const BlockTridiagonalMatrix& H);

/// Solves H v = rhs for a positive definite block-tridiagonal H.
Vector solve_block_tridiagonal(const BlockTridiagonalMatrix& H, const Vector& rhs);

/// EKF initialization, Gauss-Newton MAP trajectory and covariance extraction
/// at the solution.
struct MapSmootherOutput {
  SmoothedMoments moments;
  GaussNewtonResult solve;
  FilterResult filter;
};

MapSmootherOutput map_smoother(const AdditiveGaussianModel& model, const ParameterVector& theta,
                               const ObservationSequence& y, const GaussNewtonOptions& options = {});

} // namespace ssmid
