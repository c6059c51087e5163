#include "ssmid/models.hpp"

#include <cmath>
#include <numbers>

#include "ssmid/errors.hpp"

namespace ssmid {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double gaussian_logpdf(const Vector& residual, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, "covariance is not positive definite");
  const Vector z = llt.matrixL().solve(residual);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(residual.size()) * kLog2Pi + logdet) - 0.5 * z.squaredNorm();
}

void check_pd(const Matrix& m, const char* what) {
  if (m.rows() != m.cols())
    throw Error(ErrorKind::InvalidSpec, std::string(what) + " is not square");
  if (!m.allFinite())
    throw Error(ErrorKind::InvalidSpec, std::string(what) + " has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + m.cwiseAbs().maxCoeff()))
    throw Error(ErrorKind::InvalidSpec, std::string(what) + " is not symmetric");
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, std::string(what) + " is not positive definite");
}

// Gradient in theta of log N(r; 0, S) with r = target - mean(theta),
// given d mean / d theta (columns) and dS/dtheta_j.
void accumulate_gaussian_score(const Vector& residual, const Matrix& cov,
                               const Matrix& mean_param_jac, const std::vector<Matrix>& cov_derivs,
                               double weight, VecRef acc) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, "covariance is not positive definite");
  const Vector white = llt.solve(residual);
  acc.noalias() += weight * (mean_param_jac.transpose() * white);
  for (std::size_t j = 0; j < cov_derivs.size(); ++j) {
    const Matrix& dS = cov_derivs[j];
    const double trace = llt.solve(dS).trace();
    acc(static_cast<Index>(j)) += weight * (-0.5 * trace + 0.5 * white.dot(dS * white));
  }
}

Matrix affine(const Matrix& base, const std::vector<Matrix>& derivs, const ParameterVector& theta,
              const ParameterVector& nominal) {
  Matrix out = base;
  for (std::size_t j = 0; j < derivs.size(); ++j)
    out += (theta(static_cast<Index>(j)) - nominal(static_cast<Index>(j))) * derivs[j];
  return out;
}

} // namespace

void require_finite(const ParameterVector& theta, const char* what) {
  if (theta.size() == 0)
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " is empty");
  if (!theta.allFinite())
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " has non-finite entries");
}

// --- Model -------------------------------------------------------------------

Vector Model::xi(const ParameterVector& theta, ConstVecRef next, ConstVecRef x,
                 ConstVecRef y) const {
  Vector out = Vector::Zero(param_dim());
  accumulate_xi_transition(theta, next, x, 1.0, out);
  accumulate_xi_observation(theta, y, x, 1.0, out);
  return out;
}

void Model::transition_logdensity_table(const ParameterVector& theta, const Matrix& next,
                                        const Matrix& xs, Matrix& out) const {
  out.resize(xs.cols(), next.cols());
  for (Index j = 0; j < next.cols(); ++j)
    for (Index i = 0; i < xs.cols(); ++i)
      out(i, j) = transition_logdensity(theta, next.col(j), xs.col(i));
}

double Model::log_transition_bound(const ParameterVector&) const {
  throw Error(ErrorKind::InvalidBound, "model " + name() + " provides no transition density bound");
}

// --- AdditiveGaussianModel ---------------------------------------------------

std::vector<Matrix> AdditiveGaussianModel::process_noise_param_derivs(const ParameterVector&) const {
  return {};
}

std::vector<Matrix>
AdditiveGaussianModel::measurement_noise_param_derivs(const ParameterVector&) const {
  return {};
}

void AdditiveGaussianModel::accumulate_expected_xi_transition(const ParameterVector& theta,
                                                              const PairMoments& m,
                                                              VecRef acc) const {
  accumulate_xi_transition(theta, m.mean_next, m.mean_prev, 1.0, acc);
}

void AdditiveGaussianModel::accumulate_expected_xi_observation(const ParameterVector& theta,
                                                               ConstVecRef y, ConstVecRef mean,
                                                               const Matrix&, VecRef acc) const {
  accumulate_xi_observation(theta, y, mean, 1.0, acc);
}

void AdditiveGaussianModel::sample_initial(Rng& rng, VecRef x) const {
  const Matrix P1 = initial_cov();
  Vector z(P1.rows());
  for (Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  x = initial_mean() + Eigen::LLT<Matrix>(P1).matrixL() * z;
}

double AdditiveGaussianModel::initial_logdensity(ConstVecRef x) const {
  return gaussian_logpdf(x - initial_mean(), initial_cov());
}

void AdditiveGaussianModel::sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                              VecRef next) const {
  const Matrix Q = process_noise(theta);
  Vector z(Q.rows());
  for (Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  transition_mean(theta, x, next);
  next += Eigen::LLT<Matrix>(Q).matrixL() * z;
}

void AdditiveGaussianModel::sample_observation(const ParameterVector& theta, ConstVecRef x,
                                               Rng& rng, VecRef y) const {
  const Matrix R = measurement_noise(theta);
  Vector z(R.rows());
  for (Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  observation_mean(theta, x, y);
  y += Eigen::LLT<Matrix>(R).matrixL() * z;
}

double AdditiveGaussianModel::transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                                                    ConstVecRef x) const {
  Vector mean(state_dim());
  transition_mean(theta, x, mean);
  return gaussian_logpdf(next - mean, process_noise(theta));
}

double AdditiveGaussianModel::observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                                     ConstVecRef x) const {
  Vector mean(obs_dim());
  observation_mean(theta, x, mean);
  return gaussian_logpdf(y - mean, measurement_noise(theta));
}

void AdditiveGaussianModel::accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next,
                                                     ConstVecRef x, double weight,
                                                     VecRef acc) const {
  Vector mean(state_dim());
  transition_mean(theta, x, mean);
  accumulate_gaussian_score(next - mean, process_noise(theta),
                            transition_mean_param_jacobian(theta, x),
                            process_noise_param_derivs(theta), weight, acc);
}

void AdditiveGaussianModel::accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                                      ConstVecRef x, double weight,
                                                      VecRef acc) const {
  Vector mean(obs_dim());
  observation_mean(theta, x, mean);
  accumulate_gaussian_score(y - mean, measurement_noise(theta),
                            observation_mean_param_jacobian(theta, x),
                            measurement_noise_param_derivs(theta), weight, acc);
}

void AdditiveGaussianModel::transition_logdensity_table(const ParameterVector& theta,
                                                        const Matrix& next, const Matrix& xs,
                                                        Matrix& out) const {
  const Index dx = state_dim();
  const Index M = xs.cols();
  Matrix means(dx, M);
  for (Index i = 0; i < M; ++i) transition_mean(theta, xs.col(i), means.col(i));
  const Eigen::LLT<Matrix> llt(process_noise(theta));
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, "process noise is not positive definite");
  const Matrix L = llt.matrixL();
  const double lognorm = -0.5 * (static_cast<double>(dx) * kLog2Pi) -
                         L.diagonal().array().log().sum();
  out.resize(M, next.cols());
  if (dx == 1) {
    const double inv_sd = 1.0 / L(0, 0);
    for (Index j = 0; j < next.cols(); ++j)
      out.col(j) = lognorm - 0.5 * ((next(0, j) - means.row(0).array()) * inv_sd).square().transpose();
    return;
  }
  for (Index j = 0; j < next.cols(); ++j) {
    Matrix z = (-means).colwise() + next.col(j);
    L.triangularView<Eigen::Lower>().solveInPlace(z);
    out.col(j) = (lognorm - 0.5 * z.colwise().squaredNorm().array()).transpose();
  }
}

double AdditiveGaussianModel::log_transition_bound(const ParameterVector& theta) const {
  const Matrix Q = process_noise(theta);
  Eigen::LLT<Matrix> llt(Q);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidSpec, "process noise is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(Q.rows()) * kLog2Pi + logdet);
}

// --- Benchmark model 1 -------------------------------------------------------

BenchmarkModel1::BenchmarkModel1(BenchmarkNoise noise)
    : noise_(noise),
      trans_lognorm_(-0.5 * (kLog2Pi + std::log(noise.process_variance))),
      obs_lognorm_(-0.5 * (kLog2Pi + std::log(noise.measurement_variance))) {
  if (!(noise.process_variance >= 0.0) || !(noise.measurement_variance >= 0.0))
    throw Error(ErrorKind::InvalidSpec, "noise variances must be non-negative");
}

void BenchmarkModel1::transition_mean(const ParameterVector&, ConstVecRef x, VecRef out) const {
  out(0) = std::atan(x(0));
}

Matrix BenchmarkModel1::transition_jacobian(const ParameterVector&, ConstVecRef x) const {
  return Matrix::Constant(1, 1, 1.0 / (1.0 + x(0) * x(0)));
}

void BenchmarkModel1::observation_mean(const ParameterVector& theta, ConstVecRef x,
                                       VecRef out) const {
  out(0) = theta(0) * x(0) + theta(1);
}

Matrix BenchmarkModel1::observation_jacobian(const ParameterVector& theta, ConstVecRef) const {
  return Matrix::Constant(1, 1, theta(0));
}

Matrix BenchmarkModel1::process_noise(const ParameterVector&) const {
  return Matrix::Constant(1, 1, noise_.process_variance);
}

Matrix BenchmarkModel1::measurement_noise(const ParameterVector&) const {
  return Matrix::Constant(1, 1, noise_.measurement_variance);
}

Vector BenchmarkModel1::initial_mean() const { return Vector::Zero(1); }
Matrix BenchmarkModel1::initial_cov() const { return Matrix::Identity(1, 1); }

Matrix BenchmarkModel1::transition_mean_param_jacobian(const ParameterVector&, ConstVecRef) const {
  return Matrix::Zero(1, 2);
}

Matrix BenchmarkModel1::observation_mean_param_jacobian(const ParameterVector&,
                                                        ConstVecRef x) const {
  Matrix J(1, 2);
  J << x(0), 1.0;
  return J;
}

void BenchmarkModel1::accumulate_expected_xi_transition(const ParameterVector&, const PairMoments&,
                                                        VecRef) const {}

void BenchmarkModel1::accumulate_expected_xi_observation(const ParameterVector& theta,
                                                         ConstVecRef y, ConstVecRef mean,
                                                         const Matrix& cov, VecRef acc) const {
  // Linear in x, so the expectation is exact given the first two moments.
  const double m = mean(0);
  const double second = cov(0, 0) + m * m;
  const double yy = y(0);
  acc(0) += (m * yy - theta(0) * second - theta(1) * m) / noise_.measurement_variance;
  acc(1) += (yy - theta(0) * m - theta(1)) / noise_.measurement_variance;
}

void BenchmarkModel1::sample_transition(const ParameterVector&, ConstVecRef x, Rng& rng,
                                        VecRef next) const {
  next(0) = std::atan(x(0)) + std::sqrt(noise_.process_variance) * rng.normal();
}

void BenchmarkModel1::sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                         VecRef y) const {
  y(0) = theta(0) * x(0) + theta(1) + std::sqrt(noise_.measurement_variance) * rng.normal();
}

double BenchmarkModel1::transition_logdensity(const ParameterVector&, ConstVecRef next,
                                              ConstVecRef x) const {
  const double r = next(0) - std::atan(x(0));
  return trans_lognorm_ - 0.5 * r * r / noise_.process_variance;
}

double BenchmarkModel1::observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                               ConstVecRef x) const {
  const double r = y(0) - theta(0) * x(0) - theta(1);
  return obs_lognorm_ - 0.5 * r * r / noise_.measurement_variance;
}

void BenchmarkModel1::accumulate_xi_transition(const ParameterVector&, ConstVecRef, ConstVecRef,
                                               double, VecRef) const {}

void BenchmarkModel1::accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                                ConstVecRef x, double weight, VecRef acc) const {
  const double scaled = weight * (y(0) - theta(0) * x(0) - theta(1)) / noise_.measurement_variance;
  acc(0) += x(0) * scaled;
  acc(1) += scaled;
}

// --- Benchmark model 2 -------------------------------------------------------

BenchmarkModel2::BenchmarkModel2(BenchmarkNoise noise)
    : noise_(noise),
      trans_lognorm_(-0.5 * (kLog2Pi + std::log(noise.process_variance))),
      obs_lognorm_(-0.5 * (kLog2Pi + std::log(noise.measurement_variance))) {
  if (!(noise.process_variance >= 0.0) || !(noise.measurement_variance >= 0.0))
    throw Error(ErrorKind::InvalidSpec, "noise variances must be non-negative");
}

void BenchmarkModel2::transition_mean(const ParameterVector& theta, ConstVecRef x,
                                      VecRef out) const {
  out(0) = theta(0) * std::atan(x(0));
}

Matrix BenchmarkModel2::transition_jacobian(const ParameterVector& theta, ConstVecRef x) const {
  return Matrix::Constant(1, 1, theta(0) / (1.0 + x(0) * x(0)));
}

void BenchmarkModel2::observation_mean(const ParameterVector& theta, ConstVecRef x,
                                       VecRef out) const {
  out(0) = theta(1) * x(0);
}

Matrix BenchmarkModel2::observation_jacobian(const ParameterVector& theta, ConstVecRef) const {
  return Matrix::Constant(1, 1, theta(1));
}

Matrix BenchmarkModel2::process_noise(const ParameterVector&) const {
  return Matrix::Constant(1, 1, noise_.process_variance);
}

Matrix BenchmarkModel2::measurement_noise(const ParameterVector&) const {
  return Matrix::Constant(1, 1, noise_.measurement_variance);
}

Vector BenchmarkModel2::initial_mean() const { return Vector::Zero(1); }
Matrix BenchmarkModel2::initial_cov() const { return Matrix::Identity(1, 1); }

Matrix BenchmarkModel2::transition_mean_param_jacobian(const ParameterVector&,
                                                       ConstVecRef x) const {
  Matrix J(1, 2);
  J << std::atan(x(0)), 0.0;
  return J;
}

Matrix BenchmarkModel2::observation_mean_param_jacobian(const ParameterVector&,
                                                        ConstVecRef x) const {
  Matrix J(1, 2);
  J << 0.0, x(0);
  return J;
}

void BenchmarkModel2::accumulate_expected_xi_transition(const ParameterVector& theta,
                                                        const PairMoments& m, VecRef acc) const {
  const double a = std::atan(m.mean_prev(0));
  acc(0) += a * (m.mean_next(0) - theta(0) * a) / noise_.process_variance;
}

void BenchmarkModel2::accumulate_expected_xi_observation(const ParameterVector& theta,
                                                         ConstVecRef y, ConstVecRef mean,
                                                         const Matrix& cov, VecRef acc) const {
  const double m = mean(0);
  acc(1) += (m * y(0) - theta(1) * (cov(0, 0) + m * m)) / noise_.measurement_variance;
}

void BenchmarkModel2::sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                        VecRef next) const {
  next(0) = theta(0) * std::atan(x(0)) + std::sqrt(noise_.process_variance) * rng.normal();
}

void BenchmarkModel2::sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                         VecRef y) const {
  y(0) = theta(1) * x(0) + std::sqrt(noise_.measurement_variance) * rng.normal();
}

double BenchmarkModel2::transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                                              ConstVecRef x) const {
  const double r = next(0) - theta(0) * std::atan(x(0));
  return trans_lognorm_ - 0.5 * r * r / noise_.process_variance;
}

double BenchmarkModel2::observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                               ConstVecRef x) const {
  const double r = y(0) - theta(1) * x(0);
  return obs_lognorm_ - 0.5 * r * r / noise_.measurement_variance;
}

void BenchmarkModel2::accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next,
                                               ConstVecRef x, double weight, VecRef acc) const {
  const double a = std::atan(x(0));
  acc(0) += weight * a * (next(0) - theta(0) * a) / noise_.process_variance;
}

void BenchmarkModel2::accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                                ConstVecRef x, double weight, VecRef acc) const {
  acc(1) += weight * x(0) * (y(0) - theta(1) * x(0)) / noise_.measurement_variance;
}

// --- Linear-Gaussian ---------------------------------------------------------

LinearGaussianSpec& LinearGaussianSpec::validate() {
  const Index dx = F.rows();
  const Index dy = G.rows();
  const Index p = theta.size();
  if (dx == 0 || F.cols() != dx)
    throw Error(ErrorKind::InvalidSpec, "F must be square and non-empty");
  if (G.cols() != dx || dy == 0)
    throw Error(ErrorKind::InvalidSpec, "G must be d_y x d_x");
  if (Q.rows() != dx || R.rows() != dy || P1.rows() != dx || mu.size() != dx)
    throw Error(ErrorKind::InvalidSpec, "covariance or mean dimensions are inconsistent");
  if (!F.allFinite() || !G.allFinite() || !mu.allFinite() || !theta.allFinite())
    throw Error(ErrorKind::InvalidSpec, "non-finite entries");
  check_pd(Q, "Q");
  check_pd(R, "R");
  check_pd(P1, "P1");

  auto normalize = [p](std::vector<Matrix>& d, Index rows, Index cols, const char* what) {
    if (d.empty()) d.assign(static_cast<std::size_t>(p), Matrix::Zero(rows, cols));
    if (static_cast<Index>(d.size()) != p)
      throw Error(ErrorKind::InvalidSpec, std::string(what) + " needs one matrix per parameter");
    for (const auto& m : d)
      if (m.rows() != rows || m.cols() != cols || !m.allFinite())
        throw Error(ErrorKind::InvalidSpec, std::string(what) + " has wrong shape");
  };
  normalize(dF, dx, dx, "dF");
  normalize(dG, dy, dx, "dG");
  normalize(dQ, dx, dx, "dQ");
  normalize(dR, dy, dy, "dR");
  return *this;
}

LinearGaussianSpec LinearGaussianSpec::at(const ParameterVector& theta_new) const {
  if (theta_new.size() != theta.size())
    throw Error(ErrorKind::InvalidArgument, "parameter length mismatch");
  LinearGaussianSpec out = *this;
  out.F = affine(F, dF, theta_new, theta);
  out.G = affine(G, dG, theta_new, theta);
  out.Q = affine(Q, dQ, theta_new, theta);
  out.R = affine(R, dR, theta_new, theta);
  out.theta = theta_new;
  check_pd(out.Q, "Q");
  check_pd(out.R, "R");
  return out;
}

LinearGaussianSpec scalar_linear_gaussian(double F, double G, double Q, double R, double mu,
                                          double P1) {
  LinearGaussianSpec s;
  s.F = Matrix::Constant(1, 1, F);
  s.G = Matrix::Constant(1, 1, G);
  s.Q = Matrix::Constant(1, 1, Q);
  s.R = Matrix::Constant(1, 1, R);
  s.mu = Vector::Constant(1, mu);
  s.P1 = Matrix::Constant(1, 1, P1);
  s.theta = ParameterVector();
  return s;
}

LinearGaussianModel::LinearGaussianModel(LinearGaussianSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.param_dim() == 0)
    throw Error(ErrorKind::InvalidSpec, "linear-Gaussian model needs at least one parameter");
}

void LinearGaussianModel::transition_mean(const ParameterVector& theta, ConstVecRef x,
                                          VecRef out) const {
  out.noalias() = affine(spec_.F, spec_.dF, theta, spec_.theta) * x;
}

Matrix LinearGaussianModel::transition_jacobian(const ParameterVector& theta, ConstVecRef) const {
  return affine(spec_.F, spec_.dF, theta, spec_.theta);
}

void LinearGaussianModel::observation_mean(const ParameterVector& theta, ConstVecRef x,
                                           VecRef out) const {
  out.noalias() = affine(spec_.G, spec_.dG, theta, spec_.theta) * x;
}

Matrix LinearGaussianModel::observation_jacobian(const ParameterVector& theta, ConstVecRef) const {
  return affine(spec_.G, spec_.dG, theta, spec_.theta);
}

Matrix LinearGaussianModel::process_noise(const ParameterVector& theta) const {
  return affine(spec_.Q, spec_.dQ, theta, spec_.theta);
}

Matrix LinearGaussianModel::measurement_noise(const ParameterVector& theta) const {
  return affine(spec_.R, spec_.dR, theta, spec_.theta);
}

Matrix LinearGaussianModel::transition_mean_param_jacobian(const ParameterVector&,
                                                           ConstVecRef x) const {
  Matrix J(state_dim(), param_dim());
  for (Index j = 0; j < param_dim(); ++j) J.col(j) = spec_.dF[static_cast<std::size_t>(j)] * x;
  return J;
}

Matrix LinearGaussianModel::observation_mean_param_jacobian(const ParameterVector&,
                                                            ConstVecRef x) const {
  Matrix J(obs_dim(), param_dim());
  for (Index j = 0; j < param_dim(); ++j) J.col(j) = spec_.dG[static_cast<std::size_t>(j)] * x;
  return J;
}

std::vector<Matrix> LinearGaussianModel::process_noise_param_derivs(const ParameterVector&) const {
  return spec_.dQ;
}

std::vector<Matrix>
LinearGaussianModel::measurement_noise_param_derivs(const ParameterVector&) const {
  return spec_.dR;
}

void LinearGaussianModel::accumulate_expected_xi_transition(const ParameterVector& theta,
                                                            const PairMoments& m,
                                                            VecRef acc) const {
  const Matrix F = transition_jacobian(theta, m.mean_prev);
  const Matrix Qi = process_noise(theta).inverse();
  const Matrix second_next = m.cov_next + m.mean_next * m.mean_next.transpose();
  const Matrix second_prev = m.cov_prev + m.mean_prev * m.mean_prev.transpose();
  const Matrix second_cross = m.cross + m.mean_prev * m.mean_next.transpose();
  for (Index j = 0; j < param_dim(); ++j) {
    const auto js = static_cast<std::size_t>(j);
    const Matrix& dF = spec_.dF[js];
    const Matrix& dQ = spec_.dQ[js];
    const Matrix dQi = -Qi * dQ * Qi;
    const Matrix d_FtQiF = dF.transpose() * Qi * F + F.transpose() * dQi * F + F.transpose() * Qi * dF;
    const Matrix d_QiF = dQi * F + Qi * dF;
    acc(j) += -0.5 * (Qi * dQ).trace() - 0.5 * (second_next * dQi).trace() -
              0.5 * (second_prev * d_FtQiF).trace() + (second_cross * d_QiF).trace();
  }
}

void LinearGaussianModel::accumulate_expected_xi_observation(const ParameterVector& theta,
                                                             ConstVecRef y, ConstVecRef mean,
                                                             const Matrix& cov, VecRef acc) const {
  const Matrix G = observation_jacobian(theta, mean);
  const Matrix Ri = measurement_noise(theta).inverse();
  const Matrix second = cov + mean * mean.transpose();
  for (Index j = 0; j < param_dim(); ++j) {
    const auto js = static_cast<std::size_t>(j);
    const Matrix& dG = spec_.dG[js];
    const Matrix& dR = spec_.dR[js];
    const Matrix dRi = -Ri * dR * Ri;
    const Matrix d_RiG = dRi * G + Ri * dG;
    const Matrix d_GtRiG = dG.transpose() * Ri * G + G.transpose() * dRi * G + G.transpose() * Ri * dG;
    acc(j) += -0.5 * (Ri * dR).trace() + y.dot(d_RiG * mean) - 0.5 * y.dot(dRi * y) -
              0.5 * (second * d_GtRiG).trace();
  }
}

// --- factories & simulation --------------------------------------------------

std::shared_ptr<const BenchmarkModel1> make_model1(BenchmarkNoise noise) {
  return std::make_shared<const BenchmarkModel1>(noise);
}

std::shared_ptr<const BenchmarkModel2> make_model2(BenchmarkNoise noise) {
  return std::make_shared<const BenchmarkModel2>(noise);
}

std::shared_ptr<const LinearGaussianModel> make_linear_gaussian(LinearGaussianSpec spec) {
  return std::make_shared<const LinearGaussianModel>(std::move(spec));
}

ModelPtr make_model(const std::string& name) {
  if (name == "model1") return make_model1();
  if (name == "model2") return make_model2();
  if (name == "lgss")
    throw Error(ErrorKind::Config, "model lgss requires a linear-Gaussian spec");
  throw Error(ErrorKind::Config, "unknown model '" + name + "'");
}

SimulatedData simulate(const Model& model, const ParameterVector& theta, Index N,
                       std::uint64_t seed) {
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "N must be at least 1");
  require_finite(theta);
  if (theta.size() != model.param_dim())
    throw Error(ErrorKind::InvalidArgument, "parameter length does not match model");

  Rng rng(seed);
  SimulatedData out;
  out.states.values.resize(model.state_dim(), N);
  out.observations.values.resize(model.obs_dim(), N);
  for (Index t = 0; t < N; ++t) {
    auto x = out.states.values.col(t);
    if (t == 0)
      model.sample_initial(rng, x);
    else
      model.sample_transition(theta, out.states.values.col(t - 1), rng, x);
    auto y = out.observations.values.col(t);
    model.sample_observation(theta, x, rng, y);
    if (!x.allFinite() || !y.allFinite())
      throw Error(ErrorKind::SimulationDiverged, "non-finite draw", t + 1);
  }
  return out;
}

} // namespace ssmid
