#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ssmid/gaussian_filters.hpp"
#include "ssmid/map_smoother.hpp"
#include "ssmid/models.hpp"
#include "ssmid/particle.hpp"

namespace ssmid {

/// Log-likelihood, Fisher-identity gradient with its per-time decomposition,
/// and the outer-product Hessian estimate.
struct DerivativeEstimate {
  double loglik = 0.0;
  Vector gradient;
  std::vector<Vector> per_time;
  Matrix hessian;
};

/// Per-time terms G_t = E[xi(x_{t+1}, x_t, y_t) | y_{1:N}] under Gaussian
/// smoothed moments. The final term holds the observation part only.
std::vector<Vector> gradient_from_moments(const AdditiveGaussianModel& model,
                                          const ParameterVector& theta,
                                          const ObservationSequence& y, const SmoothedMoments& sm);

/// Per-time terms from weighted two-step particle samples.
std::vector<Vector> gradient_from_pairs(const Model& model, const ParameterVector& theta,
                                        const ObservationSequence& y, const ParticleSystem& ps,
                                        const TwoStepSamples& pairs);

/// Fixed-lag score estimator.
std::vector<Vector> gradient_fl(const Model& model, const ParameterVector& theta,
                                const ObservationSequence& y, const ParticleSystem& ps, Index lag);

/// FFBSi score estimator: G_t = (1/Mbar) sum_j xi(x~_{t+1}^j, x~_t^j).
std::vector<Vector> gradient_ffbsi(const Model& model, const ParameterVector& theta,
                                   const ObservationSequence& y, const ParticleSystem& ps,
                                   const BackwardTrajectories& bt);

/// H = (1/N) G G^T - sum_t G_t G_t^T with G = sum_t G_t.
Matrix segal_weinstein_hessian(const std::vector<Vector>& per_time);

/// Flips and floors eigenvalues so the result is negative definite:
/// lambda -> -max(|lambda|, 1e-6 max(1, max|lambda|)).
Matrix repair_hessian(const Matrix& hessian);

using LoglikFn = std::function<double(const ParameterVector&)>;

/// Central differences with step h * max(1, |theta_j|) per coordinate.
Vector finite_difference_gradient(const LoglikFn& loglik, const ParameterVector& theta,
                                  double h = 1e-5);

DerivativeEstimate assemble_estimate(double loglik, std::vector<Vector> per_time);

/// EKF log-likelihood, MAP smoothing and smoothed-moment gradient.
DerivativeEstimate linearization_estimate(const AdditiveGaussianModel& model,
                                          const ParameterVector& theta,
                                          const ObservationSequence& y,
                                          const GaussNewtonOptions& options = {});

enum class SmootherKind { FixedLag, Ffbsi };

struct SmootherConfig {
  SmootherKind kind = SmootherKind::FixedLag;
  Index lag = 12;
  Index particles = 2000;
  Index backward = 100;
  Index rejection_limit = 10;
  /// Transition density bound; taken from the model when unset.
  std::optional<double> rho;

  void validate(Index N) const;
};

/// Bootstrap particle filter followed by the configured particle smoother.
DerivativeEstimate sampling_estimate(const Model& model, const ParameterVector& theta,
                                     const ObservationSequence& y, const SmootherConfig& config,
                                     std::uint64_t seed);

} // namespace ssmid
