#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ssmid/models.hpp"

namespace ssmid {

/// Output of the bootstrap particle filter. Indices are 0-based;
/// ancestors(i, t) indexes particles[t-1] and column 0 is unused.
struct ParticleSystem {
  std::vector<Matrix> particles;  // particles[t] is d_x x M
  Matrix weights;                 // M x N, each column sums to one
  Eigen::MatrixXi ancestors;      // M x N
  double loglik = 0.0;

  Index horizon() const noexcept { return weights.cols(); }
  Index count() const noexcept { return weights.rows(); }
  auto particle(Index t, Index i) const { return particles[static_cast<std::size_t>(t)].col(i); }
};

/// Multinomial resampling at every step, propagation through the transition
/// density and weighting by g_theta(y_t | x_t).
ParticleSystem bootstrap_pf(const Model& model, const ParameterVector& theta,
                            const ObservationSequence& y, Index M, std::uint64_t seed);

/// Weighted (x_t, x_{t+1}) samples for one time index, as particle indices.
/// `next` is empty for the final time index.
struct PairSlice {
  Index time = 0;
  std::vector<int> current;
  std::vector<int> next;
  Vector weights;
};

using TwoStepSamples = std::vector<PairSlice>;

/// Pairs read off the ancestral paths of the final particles, weighted by w_N.
TwoStepSamples two_step_from_paths(const ParticleSystem& ps);

/// kappa_t = min(N, t + 1 + lag) in 1-based indexing.
Index fixed_lag_horizon(Index t_one_based, Index lag, Index N);

/// Pairs traced back from time kappa_t, weighted by w_{kappa_t}.
TwoStepSamples fixed_lag_pairs(const ParticleSystem& ps, Index lag);

/// Number of distinct time-t ancestors among the particles alive at the end.
std::vector<Index> distinct_ancestor_counts(const ParticleSystem& ps);

struct BackwardTrajectories {
  Eigen::MatrixXi indices;  // N x Mbar, indices into particles[t]
  Index rejection_draws = 0;
  Index exact_draws = 0;

  Index count() const noexcept { return indices.cols(); }
  Index horizon() const noexcept { return indices.rows(); }
  StateTrajectory trajectory(const ParticleSystem& ps, Index j) const;
};

/// Forward-filter backward-simulator. At every backward step the pending
/// trajectories are drawn by rejection sampling against the backward kernel
/// (proposal from w_t, acceptance f(x_{t+1}|x_t^i)/rho). Rejection stops once
/// at most `rejection_limit` trajectories remain pending or after M rounds;
/// the rest are drawn exactly from the normalized backward weights.
BackwardTrajectories ffbsi(const Model& model, const ParameterVector& theta,
                           const ParticleSystem& ps, Index backward_count, Index rejection_limit,
                           double rho, std::uint64_t seed);

/// As above with rho taken from the model's transition-density bound.
BackwardTrajectories ffbsi(const Model& model, const ParameterVector& theta,
                           const ParticleSystem& ps, Index backward_count, Index rejection_limit,
                           std::uint64_t seed);

} // namespace ssmid
