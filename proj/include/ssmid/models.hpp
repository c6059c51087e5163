#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssmid/rng.hpp"

namespace ssmid {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VecRef = Eigen::Ref<Eigen::VectorXd>;
using ConstVecRef = Eigen::Ref<const Eigen::VectorXd>;

/// Static parameter being estimated; length p fixed for a run.
using ParameterVector = Eigen::VectorXd;

void require_finite(const ParameterVector& theta, const char* what = "parameter vector");

/// y_1..y_N stored column-wise (d_y x N). Column t holds y_{t+1}.
struct ObservationSequence {
  Matrix values;

  Index size() const noexcept { return values.cols(); }
  Index dim() const noexcept { return values.rows(); }
  auto at(Index t) const { return values.col(t); }
};

/// x_1..x_N stored column-wise (d_x x N).
struct StateTrajectory {
  Matrix values;

  Index size() const noexcept { return values.cols(); }
  Index dim() const noexcept { return values.rows(); }
  auto at(Index t) const { return values.col(t); }
};

/// Gaussian two-slice moments of (x_t, x_{t+1}) under the smoothing distribution.
/// `cross` is Cov(x_t, x_{t+1}).
struct PairMoments {
  const Vector& mean_prev;
  const Matrix& cov_prev;
  const Vector& mean_next;
  const Matrix& cov_next;
  const Matrix& cross;
};

class AdditiveGaussianModel;

/// Behavioral description of a state-space model
///   x_1 ~ p(x_1), x_{t+1} ~ f_theta(. | x_t), y_t ~ g_theta(. | x_t).
/// Implementations are immutable and may be shared across threads.
class Model {
public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual Index state_dim() const = 0;
  virtual Index obs_dim() const = 0;
  virtual Index param_dim() const = 0;

  virtual void sample_initial(Rng& rng, VecRef x) const = 0;
  virtual double initial_logdensity(ConstVecRef x) const = 0;
  virtual void sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                 VecRef next) const = 0;
  virtual void sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                                  VecRef y) const = 0;
  virtual double transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                                       ConstVecRef x) const = 0;
  virtual double observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                        ConstVecRef x) const = 0;

  /// acc += weight * d/dtheta log f_theta(next | x)
  virtual void accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next,
                                        ConstVecRef x, double weight, VecRef acc) const = 0;
  /// acc += weight * d/dtheta log g_theta(y | x)
  virtual void accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                         ConstVecRef x, double weight, VecRef acc) const = 0;

  /// Integrand of Fisher's identity: parameter gradient of
  /// log f_theta(next | x) + log g_theta(y | x).
  Vector xi(const ParameterVector& theta, ConstVecRef next, ConstVecRef x, ConstVecRef y) const;

  /// out(i, j) = log f_theta(next_j | x_i) for columns of `next` and `xs`.
  virtual void transition_logdensity_table(const ParameterVector& theta, const Matrix& next,
                                           const Matrix& xs, Matrix& out) const;

  /// log of an upper bound on f_theta(x' | x) over all x, x'. Needed by
  /// rejection-sampling smoothers; the default throws InvalidBound.
  virtual double log_transition_bound(const ParameterVector& theta) const;

  /// Non-null when the model has additive Gaussian noise.
  virtual const AdditiveGaussianModel* additive_gaussian() const noexcept { return nullptr; }
};

using ModelPtr = std::shared_ptr<const Model>;

/// x_{t+1} = f_theta(x_t) + v_t, v_t ~ N(0, Q(theta));
/// y_t     = g_theta(x_t) + e_t, e_t ~ N(0, R(theta));
/// x_1 ~ N(mu, P1) independent of theta.
///
/// Densities, samplers and xi are implemented generically from the structural
/// functions below; concrete models may override them with faster paths.
class AdditiveGaussianModel : public Model {
public:
  virtual void transition_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const = 0;
  virtual Matrix transition_jacobian(const ParameterVector& theta, ConstVecRef x) const = 0;
  virtual void observation_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const = 0;
  virtual Matrix observation_jacobian(const ParameterVector& theta, ConstVecRef x) const = 0;
  virtual Matrix process_noise(const ParameterVector& theta) const = 0;
  virtual Matrix measurement_noise(const ParameterVector& theta) const = 0;
  virtual Vector initial_mean() const = 0;
  virtual Matrix initial_cov() const = 0;

  /// d f_theta(x) / d theta, d_x x p.
  virtual Matrix transition_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const = 0;
  /// d g_theta(x) / d theta, d_y x p.
  virtual Matrix observation_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const = 0;
  /// dQ/dtheta_j for each j; empty means Q does not depend on theta.
  virtual std::vector<Matrix> process_noise_param_derivs(const ParameterVector& theta) const;
  /// dR/dtheta_j for each j; empty means R does not depend on theta.
  virtual std::vector<Matrix> measurement_noise_param_derivs(const ParameterVector& theta) const;

  /// acc += E[xi_transition] under Gaussian two-slice moments. The default
  /// evaluates xi at the means (plug-in approximation).
  virtual void accumulate_expected_xi_transition(const ParameterVector& theta,
                                                 const PairMoments& moments, VecRef acc) const;
  /// acc += E[xi_observation] under N(mean, cov). Default: plug-in at the mean.
  virtual void accumulate_expected_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                                  ConstVecRef mean, const Matrix& cov,
                                                  VecRef acc) const;

  void sample_initial(Rng& rng, VecRef x) const override;
  double initial_logdensity(ConstVecRef x) const override;
  void sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                         VecRef next) const override;
  void sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                          VecRef y) const override;
  double transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                               ConstVecRef x) const override;
  double observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                ConstVecRef x) const override;
  void accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next, ConstVecRef x,
                                double weight, VecRef acc) const override;
  void accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y, ConstVecRef x,
                                 double weight, VecRef acc) const override;
  /// (2 pi)^{-d_x/2} det(Q)^{-1/2}, in log.
  double log_transition_bound(const ParameterVector& theta) const override;
  void transition_logdensity_table(const ParameterVector& theta, const Matrix& next,
                                   const Matrix& xs, Matrix& out) const override;

  const AdditiveGaussianModel* additive_gaussian() const noexcept override { return this; }
};

/// Noise variances of the scalar benchmark models. Fixed constants, not parameters.
struct BenchmarkNoise {
  double process_variance = 1.0;
  double measurement_variance = 0.01;
};

/// x_{t+1} = atan(x_t) + v_t;  y_t = theta_1 x_t + theta_2 + e_t.
class BenchmarkModel1 final : public AdditiveGaussianModel {
public:
  explicit BenchmarkModel1(BenchmarkNoise noise = {});

  std::string name() const override { return "model1"; }
  Index state_dim() const override { return 1; }
  Index obs_dim() const override { return 1; }
  Index param_dim() const override { return 2; }

  void transition_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix transition_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  void observation_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix observation_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix process_noise(const ParameterVector& theta) const override;
  Matrix measurement_noise(const ParameterVector& theta) const override;
  Vector initial_mean() const override;
  Matrix initial_cov() const override;
  Matrix transition_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix observation_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;

  void accumulate_expected_xi_transition(const ParameterVector& theta, const PairMoments& moments,
                                         VecRef acc) const override;
  void accumulate_expected_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                          ConstVecRef mean, const Matrix& cov,
                                          VecRef acc) const override;

  void sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                         VecRef next) const override;
  void sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                          VecRef y) const override;
  double transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                               ConstVecRef x) const override;
  double observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                ConstVecRef x) const override;
  void accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next, ConstVecRef x,
                                double weight, VecRef acc) const override;
  void accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y, ConstVecRef x,
                                 double weight, VecRef acc) const override;

private:
  BenchmarkNoise noise_;
  double trans_lognorm_;
  double obs_lognorm_;
};

/// x_{t+1} = theta_1 atan(x_t) + v_t;  y_t = theta_2 x_t + e_t.
class BenchmarkModel2 final : public AdditiveGaussianModel {
public:
  explicit BenchmarkModel2(BenchmarkNoise noise = {});

  std::string name() const override { return "model2"; }
  Index state_dim() const override { return 1; }
  Index obs_dim() const override { return 1; }
  Index param_dim() const override { return 2; }

  void transition_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix transition_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  void observation_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix observation_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix process_noise(const ParameterVector& theta) const override;
  Matrix measurement_noise(const ParameterVector& theta) const override;
  Vector initial_mean() const override;
  Matrix initial_cov() const override;
  Matrix transition_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix observation_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;

  /// theta_1 component uses the plug-in value at the smoothed means.
  void accumulate_expected_xi_transition(const ParameterVector& theta, const PairMoments& moments,
                                         VecRef acc) const override;
  void accumulate_expected_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                          ConstVecRef mean, const Matrix& cov,
                                          VecRef acc) const override;

  void sample_transition(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                         VecRef next) const override;
  void sample_observation(const ParameterVector& theta, ConstVecRef x, Rng& rng,
                          VecRef y) const override;
  double transition_logdensity(const ParameterVector& theta, ConstVecRef next,
                               ConstVecRef x) const override;
  double observation_logdensity(const ParameterVector& theta, ConstVecRef y,
                                ConstVecRef x) const override;
  void accumulate_xi_transition(const ParameterVector& theta, ConstVecRef next, ConstVecRef x,
                                double weight, VecRef acc) const override;
  void accumulate_xi_observation(const ParameterVector& theta, ConstVecRef y, ConstVecRef x,
                                 double weight, VecRef acc) const override;

private:
  BenchmarkNoise noise_;
  double trans_lognorm_;
  double obs_lognorm_;
};

/// Linear-Gaussian model given at a nominal parameter `theta`. The model
/// matrices are affine in the parameter:
///   F(theta') = F + sum_j (theta'_j - theta_j) dF[j], likewise G, Q, R.
struct LinearGaussianSpec {
  Matrix F;
  Matrix G;
  Matrix Q;
  Matrix R;
  Vector mu;
  Matrix P1;
  ParameterVector theta;
  std::vector<Matrix> dF;
  std::vector<Matrix> dG;
  std::vector<Matrix> dQ;
  std::vector<Matrix> dR;

  Index state_dim() const noexcept { return F.rows(); }
  Index obs_dim() const noexcept { return G.rows(); }
  Index param_dim() const noexcept { return theta.size(); }

  /// Throws InvalidSpec on inconsistent dimensions or non-PD covariances.
  /// Empty derivative lists are filled with zero matrices.
  LinearGaussianSpec& validate();
  /// Matrices evaluated at another parameter value.
  LinearGaussianSpec at(const ParameterVector& theta_new) const;
};

LinearGaussianSpec scalar_linear_gaussian(double F, double G, double Q, double R,
                                          double mu = 0.0, double P1 = 1.0);

class LinearGaussianModel final : public AdditiveGaussianModel {
public:
  explicit LinearGaussianModel(LinearGaussianSpec spec);

  const LinearGaussianSpec& spec() const noexcept { return spec_; }

  std::string name() const override { return "lgss"; }
  Index state_dim() const override { return spec_.state_dim(); }
  Index obs_dim() const override { return spec_.obs_dim(); }
  Index param_dim() const override { return spec_.param_dim(); }

  void transition_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix transition_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  void observation_mean(const ParameterVector& theta, ConstVecRef x, VecRef out) const override;
  Matrix observation_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix process_noise(const ParameterVector& theta) const override;
  Matrix measurement_noise(const ParameterVector& theta) const override;
  Vector initial_mean() const override { return spec_.mu; }
  Matrix initial_cov() const override { return spec_.P1; }
  Matrix transition_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  Matrix observation_mean_param_jacobian(const ParameterVector& theta, ConstVecRef x) const override;
  std::vector<Matrix> process_noise_param_derivs(const ParameterVector& theta) const override;
  std::vector<Matrix> measurement_noise_param_derivs(const ParameterVector& theta) const override;

  /// Exact Gaussian expectations (the smoothed-moment trace expressions).
  void accumulate_expected_xi_transition(const ParameterVector& theta, const PairMoments& moments,
                                         VecRef acc) const override;
  void accumulate_expected_xi_observation(const ParameterVector& theta, ConstVecRef y,
                                          ConstVecRef mean, const Matrix& cov,
                                          VecRef acc) const override;

private:
  LinearGaussianSpec spec_;
};

std::shared_ptr<const BenchmarkModel1> make_model1(BenchmarkNoise noise = {});
std::shared_ptr<const BenchmarkModel2> make_model2(BenchmarkNoise noise = {});
std::shared_ptr<const LinearGaussianModel> make_linear_gaussian(LinearGaussianSpec spec);

/// Parses a linear-Gaussian spec from JSON text. Matrices are nested arrays
/// in row-major order; keys: F, G, Q, R, mu, P1, theta and optional
/// dF, dG, dQ, dR (one matrix per parameter).
LinearGaussianSpec parse_linear_gaussian_spec(const std::string& json_text);
LinearGaussianSpec load_linear_gaussian_spec(const std::filesystem::path& path);
std::string linear_gaussian_spec_to_json(const LinearGaussianSpec& spec);

/// "model1", "model2"; "lgss" needs a spec and goes through make_linear_gaussian.
ModelPtr make_model(const std::string& name);

struct SimulatedData {
  StateTrajectory states;
  ObservationSequence observations;
};

/// Draws x_{1:N}, y_{1:N} from the model. Deterministic in (seed, theta, N).
SimulatedData simulate(const Model& model, const ParameterVector& theta, Index N,
                       std::uint64_t seed);

} // namespace ssmid
