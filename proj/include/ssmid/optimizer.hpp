#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssmid/inference.hpp"
#include "ssmid/map_smoother.hpp"
#include "ssmid/models.hpp"

namespace ssmid {

enum class Method { Alg2, Alg3FL, Alg3FFBSi, Num };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);
/// ALG2 and NUM produce deterministic derivative estimates.
bool is_deterministic(Method method);

enum class StepPolicyKind { Backtracking, Stochastic };

struct StepPolicy {
  StepPolicyKind kind = StepPolicyKind::Backtracking;
  /// eps_k = k^{-exponent} for the stochastic schedule.
  double exponent = 2.0 / 3.0;
  double armijo = 1e-4;
  /// Backtracking tries eps in {1, 1/2, ..., 2^-max_halvings}.
  int max_halvings = 20;
};

std::string_view to_string(StepPolicyKind kind);
StepPolicyKind parse_step_policy(std::string_view name);

struct OptimizerConfig {
  Method method = Method::Alg2;
  ParameterVector theta0;
  /// Maximum number of trace entries, counting the evaluation at theta0.
  int max_iters = 100;
  StepPolicy step;
  double grad_tol = 1e-1;
  double param_tol = 5e-4;
  /// Consecutive small parameter changes required by stochastic back-ends.
  int small_step_window = 3;
  SmootherConfig smoother;
  GaussNewtonOptions gauss_newton;
  double fd_step = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-method defaults: ALG2/NUM use backtracking with K=100; ALG3 variants
/// use the k^{-2/3} schedule with K=500 and the matching smoother settings.
OptimizerConfig default_config(Method method, ParameterVector theta0);

struct TraceEntry {
  int k = 0;
  ParameterVector theta;
  double loglik = 0.0;
  double grad_norm = 0.0;
  /// Step length applied to move from theta_k; 0 for the final entry.
  double step = 0.0;
  double seconds = 0.0;
  /// "newton", "gradient-fallback", "quasi-newton" or empty for the final entry.
  std::string direction;
};

struct NewtonTrace {
  std::vector<TraceEntry> iterates;
  ParameterVector final;
  bool converged = false;
  std::string stop_reason;
  double total_time = 0.0;

  int iterations() const noexcept { return static_cast<int>(iterates.size()); }
  double seconds_per_iteration() const noexcept {
    return iterates.empty() ? 0.0 : total_time / static_cast<double>(iterates.size());
  }
};

/// Largest eps in {1, 1/2, ..., 2^-max_halvings} with
/// loglik(theta + eps d) >= loglik(theta) + armijo * eps * slope (backtracking),
/// or k^{-exponent} (stochastic). Throws ZeroStep when backtracking is exhausted.
double step_length(const StepPolicy& policy, int k, const ParameterVector& theta,
                   const Vector& direction, double loglik_at_theta, double slope,
                   const LoglikFn& loglik);

/// Derivative estimate for the configured back-end at theta.
DerivativeEstimate estimate_derivatives(const Model& model, const ObservationSequence& y,
                                        const OptimizerConfig& config, const ParameterVector& theta,
                                        int k);

/// Newton iteration theta_{k+1} = theta_k - eps_k H^{-1} G with the Hessian
/// repaired to be negative definite. Dispatches NUM to quasi_newton_num.
NewtonTrace newton_solve(const Model& model, const ObservationSequence& y,
                         const OptimizerConfig& config);

/// Quasi-Newton (BFGS inverse update, curvature guarded) on the EKF
/// log-likelihood with finite-difference gradients.
NewtonTrace quasi_newton_num(const Model& model, const ObservationSequence& y,
                             const OptimizerConfig& config);

/// Entry point for any method.
NewtonTrace estimate(const Model& model, const ObservationSequence& y,
                     const OptimizerConfig& config);

} // namespace ssmid
