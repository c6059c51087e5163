#include "ssmid/gaussian_filters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ssmid/errors.hpp"

namespace ssmid {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kJitter = 1e-9;
constexpr double kNegativeEigTol = 1e-8;

// Symmetrize and floor tiny negative eigenvalues. Larger violations mean the
// recursion has lost positive semidefiniteness.
void stabilize(Matrix& P, ErrorKind kind, Index t) {
  P = 0.5 * (P + P.transpose());
  if (P.rows() == 1) {
    if (P(0, 0) < -kNegativeEigTol)
      throw Error(kind, "covariance lost positive semidefiniteness", t + 1);
    if (P(0, 0) < 0.0) P(0, 0) = 0.0;
    return;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(P);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -kNegativeEigTol)
    throw Error(kind, "covariance lost positive semidefiniteness", t + 1);
  if (min_eig < 0.0) {
    const Vector floored = eig.eigenvalues().cwiseMax(0.0);
    P = eig.eigenvectors() * floored.asDiagonal() * eig.eigenvectors().transpose();
  }
}

struct Linearization {
  Vector value;
  Matrix jacobian;
};

using LinearizeFn = std::function<Linearization(const Vector&)>;

// Shared predict/update recursion. `transition` and `observation` return the
// mean map evaluated at the given state and its Jacobian.
FilterResult run_filter(const ObservationSequence& y, const Vector& mu, const Matrix& P1,
                        const Matrix& Q, const Matrix& R, const LinearizeFn& transition,
                        const LinearizeFn& observation, ErrorKind failure) {
  const Index N = y.size();
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "empty observation sequence");
  if (y.dim() != R.rows())
    throw Error(ErrorKind::InvalidArgument, "observation dimension mismatch");
  const Index dx = mu.size();

  FilterResult out;
  out.filtered.reserve(static_cast<std::size_t>(N));
  out.predicted.reserve(static_cast<std::size_t>(N));
  out.predictive_obs.reserve(static_cast<std::size_t>(N));

  Vector m = mu;
  Matrix P = P1;
  const Matrix I = Matrix::Identity(dx, dx);
  for (Index t = 0; t < N; ++t) {
    if (t > 0) {
      Linearization f = transition(m);
      if (!f.value.allFinite() || !f.jacobian.allFinite())
        throw Error(failure, "non-finite transition linearization", t + 1);
      m = std::move(f.value);
      P = f.jacobian * P * f.jacobian.transpose() + Q;
      stabilize(P, failure, t);
    }
    out.predicted.push_back({m, P});

    Linearization g = observation(m);
    if (!g.value.allFinite() || !g.jacobian.allFinite())
      throw Error(failure, "non-finite observation linearization", t + 1);
    const Matrix& H = g.jacobian;
    Matrix S = H * P * H.transpose() + R;
    S = 0.5 * (S + S.transpose());
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) {
      S += kJitter * Matrix::Identity(S.rows(), S.cols());
      llt.compute(S);
      if (llt.info() != Eigen::Success)
        throw Error(failure == ErrorKind::DivergedFilter ? failure : ErrorKind::SingularInnovation,
                    "innovation covariance is singular", t + 1);
    }
    const Vector innovation = y.at(t) - g.value;
    const Matrix L = llt.matrixL();
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    const Vector white = llt.matrixL().solve(innovation);
    out.loglik += -0.5 * (static_cast<double>(innovation.size()) * kLog2Pi + logdet) -
                  0.5 * white.squaredNorm();
    out.predictive_obs.push_back({g.value, S});

    // K = P H^T S^{-1}
    const Matrix K = llt.solve(H * P).transpose();
    m += K * innovation;
    const Matrix IKH = I - K * H;
    P = IKH * P * IKH.transpose() + K * R * K.transpose();
    stabilize(P, failure, t);
    out.filtered.push_back({m, P});
  }
  if (!std::isfinite(out.loglik))
    throw Error(failure, "non-finite log-likelihood");
  return out;
}

} // namespace

FilterResult kalman_filter(const LinearGaussianSpec& spec, const ObservationSequence& y) {
  LinearGaussianSpec checked = spec;
  checked.validate();
  const Matrix& F = checked.F;
  const Matrix& G = checked.G;
  return run_filter(
      y, checked.mu, checked.P1, checked.Q, checked.R,
      [&F](const Vector& m) { return Linearization{F * m, F}; },
      [&G](const Vector& m) { return Linearization{G * m, G}; }, ErrorKind::SingularInnovation);
}

SmoothedMoments rts_smoother(const LinearGaussianSpec& spec, const FilterResult& fr) {
  const auto N = static_cast<Index>(fr.filtered.size());
  if (N == 0 || static_cast<Index>(fr.predicted.size()) != N)
    throw Error(ErrorKind::InvalidArgument, "filter result is empty or inconsistent");
  const Matrix& F = spec.F;

  SmoothedMoments sm;
  sm.means.resize(static_cast<std::size_t>(N));
  sm.covs.resize(static_cast<std::size_t>(N));
  sm.cross_covs.resize(static_cast<std::size_t>(N - 1));
  const auto last = static_cast<std::size_t>(N - 1);
  sm.means[last] = fr.filtered[last].mean;
  sm.covs[last] = fr.filtered[last].cov;
  for (Index t = N - 2; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const GaussianBelief& filt = fr.filtered[ts];
    const GaussianBelief& pred = fr.predicted[ts + 1];
    Eigen::LLT<Matrix> llt(pred.cov);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::SingularCovariance, "predicted covariance is singular", t + 2);
    // A = P_{t|t} F^T P_{t+1|t}^{-1}
    const Matrix A = llt.solve(F * filt.cov).transpose();
    sm.means[ts] = filt.mean + A * (sm.means[ts + 1] - pred.mean);
    Matrix P = filt.cov + A * (sm.covs[ts + 1] - pred.cov) * A.transpose();
    stabilize(P, ErrorKind::SingularCovariance, t);
    sm.covs[ts] = std::move(P);
    sm.cross_covs[ts] = A * sm.covs[ts + 1];
  }
  return sm;
}

FilterResult ekf(const AdditiveGaussianModel& model, const ParameterVector& theta,
                 const ObservationSequence& y) {
  require_finite(theta);
  if (theta.size() != model.param_dim())
    throw Error(ErrorKind::InvalidArgument, "parameter length does not match model");
  const Index dx = model.state_dim();
  const Index dy = model.obs_dim();
  return run_filter(
      y, model.initial_mean(), model.initial_cov(), model.process_noise(theta),
      model.measurement_noise(theta),
      [&](const Vector& m) {
        Linearization lin{Vector(dx), model.transition_jacobian(theta, m)};
        model.transition_mean(theta, m, lin.value);
        return lin;
      },
      [&](const Vector& m) {
        Linearization lin{Vector(dy), model.observation_jacobian(theta, m)};
        model.observation_mean(theta, m, lin.value);
        return lin;
      },
      ErrorKind::DivergedFilter);
}

FilterResult ekf(const Model& model, const ParameterVector& theta, const ObservationSequence& y) {
  const AdditiveGaussianModel* ag = model.additive_gaussian();
  if (ag == nullptr)
    throw Error(ErrorKind::InvalidArgument,
                "model " + model.name() + " has no additive-Gaussian structure");
  return ekf(*ag, theta, y);
}

double ekf_loglik(const AdditiveGaussianModel& model, const ParameterVector& theta,
                  const ObservationSequence& y) {
  if (model.state_dim() != 1 || model.obs_dim() != 1) return ekf(model, theta, y).loglik;
  require_finite(theta);
  if (theta.size() != model.param_dim())
    throw Error(ErrorKind::InvalidArgument, "parameter length does not match model");
  const Index N = y.size();
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "empty observation sequence");
  if (y.dim() != 1) throw Error(ErrorKind::InvalidArgument, "observation dimension mismatch");

  const double Q = model.process_noise(theta)(0, 0);
  const double R = model.measurement_noise(theta)(0, 0);
  Vector m = model.initial_mean();
  double P = model.initial_cov()(0, 0);
  Vector value(1);
  double loglik = 0.0;
  for (Index t = 0; t < N; ++t) {
    if (t > 0) {
      const double A = model.transition_jacobian(theta, m)(0, 0);
      model.transition_mean(theta, m, value);
      if (!std::isfinite(value(0)) || !std::isfinite(A))
        throw Error(ErrorKind::DivergedFilter, "non-finite transition linearization", t + 1);
      m(0) = value(0);
      P = A * P * A + Q;
      if (P < -kNegativeEigTol)
        throw Error(ErrorKind::DivergedFilter, "covariance lost positive semidefiniteness", t + 1);
      P = std::max(P, 0.0);
    }
    const double H = model.observation_jacobian(theta, m)(0, 0);
    model.observation_mean(theta, m, value);
    if (!std::isfinite(value(0)) || !std::isfinite(H))
      throw Error(ErrorKind::DivergedFilter, "non-finite observation linearization", t + 1);
    double S = H * P * H + R;
    if (!(S > 0.0)) S += kJitter;
    if (!(S > 0.0)) throw Error(ErrorKind::DivergedFilter, "innovation covariance is singular", t + 1);
    const double innovation = y.values(0, t) - value(0);
    loglik += -0.5 * (kLog2Pi + std::log(S)) - 0.5 * innovation * innovation / S;
    const double K = P * H / S;
    m(0) += K * innovation;
    const double ikh = 1.0 - K * H;
    P = ikh * P * ikh + K * R * K;
    if (P < -kNegativeEigTol)
      throw Error(ErrorKind::DivergedFilter, "covariance lost positive semidefiniteness", t + 1);
    P = std::max(P, 0.0);
  }
  if (!std::isfinite(loglik)) throw Error(ErrorKind::DivergedFilter, "non-finite log-likelihood");
  return loglik;
}

double loglik_from_predictive(const FilterResult& result, const ObservationSequence& y) {
  double total = 0.0;
  for (Index t = 0; t < y.size(); ++t) {
    const GaussianBelief& pred = result.predictive_obs[static_cast<std::size_t>(t)];
    Eigen::LLT<Matrix> llt(pred.cov);
    const Vector r = y.at(t) - pred.mean;
    const Matrix L = llt.matrixL();
    total += -0.5 * (static_cast<double>(r.size()) * kLog2Pi + 2.0 * L.diagonal().array().log().sum()) -
             0.5 * llt.matrixL().solve(r).squaredNorm();
  }
  return total;
}

} // namespace ssmid
