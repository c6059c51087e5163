#pragma once

#include <vector>

#include "ssmid/models.hpp"

namespace ssmid {

struct GaussianBelief {
  Vector mean;
  Matrix cov;
};

struct FilterResult {
  /// sum_t log N(y_t; yhat_{t|t-1}, S_t)
  double loglik = 0.0;
  std::vector<GaussianBelief> filtered;
  /// predicted[t] is the belief about x_t given y_{1:t-1}; predicted[0] is the prior.
  std::vector<GaussianBelief> predicted;
  /// (yhat_{t|t-1}, S_t)
  std::vector<GaussianBelief> predictive_obs;
};

/// Smoothed moments x_{t|N}, P_{t|N} and lag-one cross covariances.
/// cross_covs[t] = Cov(x_t, x_{t+1} | y_{1:N}) (0-based t), size N-1.
struct SmoothedMoments {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  std::vector<Matrix> cross_covs;

  Index size() const noexcept { return static_cast<Index>(means.size()); }
};

/// Exact Kalman filter for the linear-Gaussian model described by `spec`.
FilterResult kalman_filter(const LinearGaussianSpec& spec, const ObservationSequence& y);

/// Rauch-Tung-Striebel smoother on the output of kalman_filter.
SmoothedMoments rts_smoother(const LinearGaussianSpec& spec, const FilterResult& filtered);

/// First-order extended Kalman filter. The measurement is linearized at the
/// predicted mean.
FilterResult ekf(const AdditiveGaussianModel& model, const ParameterVector& theta,
                 const ObservationSequence& y);
/// Throws InvalidArgument when the model has no additive-Gaussian structure.
FilterResult ekf(const Model& model, const ParameterVector& theta, const ObservationSequence& y);

/// ekf(...).loglik without storing the filter output. Scalar models take an
/// allocation-free path.
double ekf_loglik(const AdditiveGaussianModel& model, const ParameterVector& theta,
                  const ObservationSequence& y);

/// Recomputes sum_t log N(y_t; yhat_t, S_t) from the stored predictive moments.
double loglik_from_predictive(const FilterResult& result, const ObservationSequence& y);

} // namespace ssmid
