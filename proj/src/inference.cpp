#include "ssmid/inference.hpp"

#include <cmath>

#include "ssmid/errors.hpp"

namespace ssmid {

std::vector<Vector> gradient_from_moments(const AdditiveGaussianModel& model,
                                          const ParameterVector& theta,
                                          const ObservationSequence& y, const SmoothedMoments& sm) {
  const Index N = y.size();
  if (sm.size() != N || static_cast<Index>(sm.covs.size()) != N)
    throw Error(ErrorKind::InsufficientMoments, "smoothed moments do not match observation length");
  if (static_cast<Index>(sm.cross_covs.size()) != N - 1)
    throw Error(ErrorKind::InsufficientMoments, "lag-one cross covariances are missing");

  const Index p = model.param_dim();
  std::vector<Vector> per_time(static_cast<std::size_t>(N), Vector::Zero(p));
  for (Index t = 0; t < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    Vector& g = per_time[ts];
    if (t + 1 < N)
      model.accumulate_expected_xi_transition(
          theta, PairMoments{sm.means[ts], sm.covs[ts], sm.means[ts + 1], sm.covs[ts + 1], sm.cross_covs[ts]},
          g);
    model.accumulate_expected_xi_observation(theta, y.at(t), sm.means[ts], sm.covs[ts], g);
  }
  return per_time;
}

std::vector<Vector> gradient_from_pairs(const Model& model, const ParameterVector& theta,
                                        const ObservationSequence& y, const ParticleSystem& ps,
                                        const TwoStepSamples& pairs) {
  const Index N = y.size();
  if (static_cast<Index>(pairs.size()) != N || ps.horizon() != N)
    throw Error(ErrorKind::InvalidArgument, "two-step samples do not match observation length");
  const Index p = model.param_dim();
  std::vector<Vector> per_time(static_cast<std::size_t>(N), Vector::Zero(p));
  for (Index t = 0; t < N; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const PairSlice& slice = pairs[ts];
    Vector& g = per_time[ts];
    const auto yt = y.at(t);
    for (std::size_t k = 0; k < slice.current.size(); ++k) {
      const double w = slice.weights(static_cast<Index>(k));
      if (w == 0.0) continue;
      const auto x = ps.particle(t, slice.current[k]);
      if (t + 1 < N) model.accumulate_xi_transition(theta, ps.particle(t + 1, slice.next[k]), x, w, g);
      model.accumulate_xi_observation(theta, yt, x, w, g);
    }
  }
  return per_time;
}

std::vector<Vector> gradient_fl(const Model& model, const ParameterVector& theta,
                                const ObservationSequence& y, const ParticleSystem& ps, Index lag) {
  return gradient_from_pairs(model, theta, y, ps, fixed_lag_pairs(ps, lag));
}

std::vector<Vector> gradient_ffbsi(const Model& model, const ParameterVector& theta,
                                   const ObservationSequence& y, const ParticleSystem& ps,
                                   const BackwardTrajectories& bt) {
  const Index N = y.size();
  if (bt.count() < 1) throw Error(ErrorKind::InvalidArgument, "no backward trajectories");
  if (bt.horizon() != N) throw Error(ErrorKind::InvalidArgument, "trajectory length mismatch");
  const Index p = model.param_dim();
  const double w = 1.0 / static_cast<double>(bt.count());
  std::vector<Vector> per_time(static_cast<std::size_t>(N), Vector::Zero(p));
  for (Index t = 0; t < N; ++t) {
    Vector& g = per_time[static_cast<std::size_t>(t)];
    const auto yt = y.at(t);
    for (Index j = 0; j < bt.count(); ++j) {
      const auto x = ps.particle(t, bt.indices(t, j));
      if (t + 1 < N) model.accumulate_xi_transition(theta, ps.particle(t + 1, bt.indices(t + 1, j)), x, w, g);
      model.accumulate_xi_observation(theta, yt, x, w, g);
    }
  }
  return per_time;
}

Matrix segal_weinstein_hessian(const std::vector<Vector>& per_time) {
  if (per_time.empty()) throw Error(ErrorKind::InvalidArgument, "no per-time gradient terms");
  const Index p = per_time.front().size();
  Vector total = Vector::Zero(p);
  Matrix outer = Matrix::Zero(p, p);
  for (const Vector& g : per_time) {
    total += g;
    outer.noalias() += g * g.transpose();
  }
  const auto N = static_cast<double>(per_time.size());
  Matrix H = total * total.transpose() / N - outer;
  return 0.5 * (H + H.transpose());
}

Matrix repair_hessian(const Matrix& hessian) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (hessian + hessian.transpose()));
  const Vector& lambda = eig.eigenvalues();
  const double floor = 1e-6 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  const Vector repaired = -lambda.cwiseAbs().cwiseMax(floor);
  return eig.eigenvectors() * repaired.asDiagonal() * eig.eigenvectors().transpose();
}

Vector finite_difference_gradient(const LoglikFn& loglik, const ParameterVector& theta, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "finite-difference step must be positive");
  Vector grad(theta.size());
  ParameterVector probe = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(theta(j)));
    probe(j) = theta(j) + step;
    const double up = loglik(probe);
    probe(j) = theta(j) - step;
    const double down = loglik(probe);
    probe(j) = theta(j);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorKind::NonFiniteLoglik, "log-likelihood is not finite", std::nullopt, j);
    grad(j) = (up - down) / (2.0 * step);
  }
  return grad;
}

DerivativeEstimate assemble_estimate(double loglik, std::vector<Vector> per_time) {
  DerivativeEstimate est;
  est.loglik = loglik;
  est.gradient = Vector::Zero(per_time.front().size());
  for (const Vector& g : per_time) est.gradient += g;
  est.hessian = segal_weinstein_hessian(per_time);
  est.per_time = std::move(per_time);
  return est;
}

DerivativeEstimate linearization_estimate(const AdditiveGaussianModel& model,
                                          const ParameterVector& theta,
                                          const ObservationSequence& y,
                                          const GaussNewtonOptions& options) {
  MapSmootherOutput smooth = map_smoother(model, theta, y, options);
  return assemble_estimate(smooth.filter.loglik,
                           gradient_from_moments(model, theta, y, smooth.moments));
}

void SmootherConfig::validate(Index N) const {
  if (particles < 2) throw Error(ErrorKind::Config, "at least two particles are required");
  if (kind == SmootherKind::FixedLag && (lag <= 0 || lag > N))
    throw Error(ErrorKind::Config, "lag must satisfy 0 < lag <= N");
  if (kind == SmootherKind::Ffbsi) {
    if (backward < 1) throw Error(ErrorKind::Config, "backward count must be positive");
    if (rejection_limit < 0 || rejection_limit > backward)
      throw Error(ErrorKind::Config, "rejection limit must lie in [0, backward count]");
  }
}

DerivativeEstimate sampling_estimate(const Model& model, const ParameterVector& theta,
                                     const ObservationSequence& y, const SmootherConfig& config,
                                     std::uint64_t seed) {
  config.validate(y.size());
  const ParticleSystem ps = bootstrap_pf(model, theta, y, config.particles, derive_seed(seed, "bpf"));
  if (config.kind == SmootherKind::FixedLag)
    return assemble_estimate(ps.loglik, gradient_fl(model, theta, y, ps, config.lag));
  const double rho = config.rho ? *config.rho : std::exp(model.log_transition_bound(theta));
  const BackwardTrajectories bt = ffbsi(model, theta, ps, config.backward, config.rejection_limit,
                                        rho, derive_seed(seed, "ffbsi"));
  return assemble_estimate(ps.loglik, gradient_ffbsi(model, theta, y, ps, bt));
}

} // namespace ssmid
