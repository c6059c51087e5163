#include "ssmid/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "ssmid/errors.hpp"
#include "ssmid/gaussian_filters.hpp"

namespace ssmid {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// EKF log-likelihood with filter failures mapped to -inf.
LoglikFn ekf_loglik_fn(const AdditiveGaussianModel& model, const ObservationSequence& y) {
  return [&model, &y](const ParameterVector& theta) {
    try {
      return ekf_loglik(model, theta, y);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
}

const AdditiveGaussianModel& require_additive(const Model& model, Method method) {
  const AdditiveGaussianModel* ag = model.additive_gaussian();
  if (ag == nullptr)
    throw Error(ErrorKind::Config, std::string(to_string(method)) + " needs an additive-Gaussian model");
  return *ag;
}

[[noreturn]] void rethrow_with_iterate(const Error& e, int k) {
  throw Error(e.kind(), std::string("iteration ") + std::to_string(k) + ": " + e.what(),
              e.time_index(), e.coordinate());
}

} // namespace

std::string_view to_string(Method method) {
  switch (method) {
  case Method::Alg2: return "ALG2";
  case Method::Alg3FL: return "ALG3FL";
  case Method::Alg3FFBSi: return "ALG3FFBSi";
  case Method::Num: return "NUM";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Alg2, Method::Alg3FL, Method::Alg3FFBSi, Method::Num})
    if (name == to_string(m)) return m;
  if (name == "alg2") return Method::Alg2;
  if (name == "alg3fl") return Method::Alg3FL;
  if (name == "alg3ffbsi") return Method::Alg3FFBSi;
  if (name == "num") return Method::Num;
  throw Error(ErrorKind::Config, "unknown method '" + std::string(name) + "'");
}

bool is_deterministic(Method method) { return method == Method::Alg2 || method == Method::Num; }

std::string_view to_string(StepPolicyKind kind) {
  return kind == StepPolicyKind::Backtracking ? "backtracking" : "stochastic";
}

StepPolicyKind parse_step_policy(std::string_view name) {
  if (name == "backtracking") return StepPolicyKind::Backtracking;
  if (name == "stochastic") return StepPolicyKind::Stochastic;
  throw Error(ErrorKind::Config, "unknown step policy '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (max_iters < 1) throw Error(ErrorKind::Config, "max_iters must be at least 1");
  if (!(grad_tol > 0.0) || !(param_tol > 0.0))
    throw Error(ErrorKind::Config, "tolerances must be positive");
  if (small_step_window < 1) throw Error(ErrorKind::Config, "small_step_window must be positive");
  if (!(fd_step > 0.0)) throw Error(ErrorKind::Config, "fd_step must be positive");
  if (step.max_halvings < 0) throw Error(ErrorKind::Config, "max_halvings must be non-negative");
  require_finite(theta0, "theta0");
}

OptimizerConfig default_config(Method method, ParameterVector theta0) {
  OptimizerConfig cfg;
  cfg.method = method;
  cfg.theta0 = std::move(theta0);
  if (is_deterministic(method)) {
    cfg.max_iters = 100;
    cfg.step.kind = StepPolicyKind::Backtracking;
  } else {
    cfg.max_iters = 500;
    cfg.step.kind = StepPolicyKind::Stochastic;
    cfg.smoother.kind = method == Method::Alg3FL ? SmootherKind::FixedLag : SmootherKind::Ffbsi;
    cfg.smoother.particles = 2000;
    cfg.smoother.lag = 12;
    cfg.smoother.backward = 100;
    cfg.smoother.rejection_limit = 10;
  }
  return cfg;
}

double step_length(const StepPolicy& policy, int k, const ParameterVector& theta,
                   const Vector& direction, double loglik_at_theta, double slope,
                   const LoglikFn& loglik) {
  if (!direction.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite search direction");
  if (policy.kind == StepPolicyKind::Stochastic)
    return std::pow(static_cast<double>(std::max(k, 1)), -policy.exponent);

  double eps = 1.0;
  for (int h = 0; h <= policy.max_halvings; ++h, eps *= 0.5) {
    const double value = loglik(theta + eps * direction);
    if (std::isfinite(value) && value >= loglik_at_theta + policy.armijo * eps * slope) return eps;
  }
  throw Error(ErrorKind::ZeroStep, "backtracking line search exhausted");
}

DerivativeEstimate estimate_derivatives(const Model& model, const ObservationSequence& y,
                                        const OptimizerConfig& config, const ParameterVector& theta,
                                        int k) {
  switch (config.method) {
  case Method::Alg2:
    return linearization_estimate(require_additive(model, config.method), theta, y,
                                  config.gauss_newton);
  case Method::Alg3FL:
  case Method::Alg3FFBSi: {
    SmootherConfig smoother = config.smoother;
    smoother.kind = config.method == Method::Alg3FL ? SmootherKind::FixedLag : SmootherKind::Ffbsi;
    return sampling_estimate(model, theta, y, smoother,
                             derive_seed(config.seed, static_cast<std::uint64_t>(k)));
  }
  case Method::Num: {
    const LoglikFn fn = [&](const ParameterVector& th) {
      return ekf_loglik(require_additive(model, config.method), th, y);
    };
    DerivativeEstimate est;
    est.loglik = fn(theta);
    est.gradient = finite_difference_gradient(fn, theta, config.fd_step);
    return est;
  }
  }
  throw Error(ErrorKind::Config, "unknown method");
}

NewtonTrace newton_solve(const Model& model, const ObservationSequence& y,
                         const OptimizerConfig& config) {
  if (config.method == Method::Num) return quasi_newton_num(model, y, config);
  config.validate();
  if (config.theta0.size() != model.param_dim())
    throw Error(ErrorKind::Config, "theta0 length does not match model");
  if (config.method == Method::Alg2) (void)require_additive(model, config.method);

  const bool deterministic = is_deterministic(config.method);
  const auto run_start = Clock::now();
  NewtonTrace trace;
  ParameterVector theta = config.theta0;
  int small_steps = 0;

  // Line-search objective: EKF for the linearization path, a particle filter
  // with a per-iteration stream otherwise.
  auto make_loglik_fn = [&](int k) -> LoglikFn {
    if (config.method == Method::Alg2) return ekf_loglik_fn(*model.additive_gaussian(), y);
    return [&, k](const ParameterVector& th) {
      try {
        return bootstrap_pf(model, th, y, config.smoother.particles,
                            derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(k)), "bpf"))
            .loglik;
      } catch (const Error&) {
        return -std::numeric_limits<double>::infinity();
      }
    };
  };

  for (int k = 0;; ++k) {
    const auto iter_start = Clock::now();
    DerivativeEstimate est;
    try {
      est = estimate_derivatives(model, y, config, theta, k);
    } catch (const Error& e) {
      rethrow_with_iterate(e, k);
    }
    TraceEntry entry{k, theta, est.loglik, est.gradient.cwiseAbs().maxCoeff(), 0.0, 0.0, {}};

    if (!trace.iterates.empty() && deterministic && config.step.kind == StepPolicyKind::Backtracking &&
        est.loglik < trace.iterates.back().loglik - 1e-9 * (1.0 + std::abs(est.loglik)))
      throw Error(ErrorKind::NoProgress, "log-likelihood decreased across an accepted step");

    std::string stop;
    if (deterministic && entry.grad_norm <= config.grad_tol) stop = "gradient-tolerance";
    else if (!deterministic && small_steps >= config.small_step_window) stop = "parameter-tolerance";
    else if (k + 1 >= config.max_iters) stop = "max-iters";
    if (!stop.empty()) {
      trace.converged = stop != "max-iters";
      trace.stop_reason = stop;
      entry.seconds = seconds_since(iter_start);
      trace.iterates.push_back(std::move(entry));
      break;
    }

    const Matrix H = repair_hessian(est.hessian);
    Eigen::LLT<Matrix> neg(-H);
    Vector direction;
    if (neg.info() == Eigen::Success && (direction = neg.solve(est.gradient)).allFinite()) {
      entry.direction = "newton";
    } else {
      direction = est.gradient / est.gradient.norm();
      entry.direction = "gradient-fallback";
    }
    const double slope = est.gradient.dot(direction);

    double eps = 0.0;
    try {
      eps = step_length(config.step, k + 1, theta, direction, est.loglik, slope, make_loglik_fn(k));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ZeroStep) rethrow_with_iterate(e, k);
      trace.stop_reason = "line-search-exhausted";
      entry.seconds = seconds_since(iter_start);
      trace.iterates.push_back(std::move(entry));
      break;
    }

    const ParameterVector next = theta + eps * direction;
    small_steps = (next - theta).cwiseAbs().maxCoeff() <= config.param_tol ? small_steps + 1 : 0;
    entry.step = eps;
    entry.seconds = seconds_since(iter_start);
    trace.iterates.push_back(std::move(entry));
    theta = next;
  }
  trace.final = trace.iterates.back().theta;
  trace.total_time = seconds_since(run_start);
  return trace;
}

NewtonTrace quasi_newton_num(const Model& model, const ObservationSequence& y,
                             const OptimizerConfig& config) {
  config.validate();
  if (config.theta0.size() != model.param_dim())
    throw Error(ErrorKind::Config, "theta0 length does not match model");
  const AdditiveGaussianModel& ag = require_additive(model, Method::Num);
  // The accepted line-search point is remembered so it is not re-filtered.
  ParameterVector last_theta;
  double last_loglik = 0.0;
  const LoglikFn tolerant = ekf_loglik_fn(ag, y);
  const LoglikFn probe = [&](const ParameterVector& th) {
    last_theta = th;
    last_loglik = tolerant(th);
    return last_loglik;
  };
  const LoglikFn strict = [&](const ParameterVector& th) { return ekf_loglik(ag, th, y); };
  const Index p = config.theta0.size();

  const auto run_start = Clock::now();
  NewtonTrace trace;
  ParameterVector theta = config.theta0;
  double loglik = 0.0;
  Vector grad;
  try {
    loglik = strict(theta);
    grad = finite_difference_gradient(strict, theta, config.fd_step);
  } catch (const Error& e) {
    rethrow_with_iterate(e, 0);
  }

  Matrix inv_curv = Matrix::Identity(p, p);  // approximates (-Hessian)^{-1}
  bool have_curvature = false;
  auto iter_start = run_start;
  for (int k = 0;; ++k) {
    TraceEntry entry{k, theta, loglik, grad.cwiseAbs().maxCoeff(), 0.0, 0.0, {}};
    std::string stop;
    if (entry.grad_norm <= config.grad_tol) stop = "gradient-tolerance";
    else if (k + 1 >= config.max_iters) stop = "max-iters";
    if (!stop.empty()) {
      trace.converged = stop != "max-iters";
      trace.stop_reason = stop;
      entry.seconds = seconds_since(iter_start);
      trace.iterates.push_back(std::move(entry));
      break;
    }

    Vector direction = have_curvature ? Vector(inv_curv * grad) : Vector(grad / grad.norm());
    double slope = grad.dot(direction);
    if (!(slope > 0.0)) {
      have_curvature = false;
      direction = grad / grad.norm();
      slope = grad.dot(direction);
    }
    entry.direction = "quasi-newton";

    double eps = 0.0;
    try {
      eps = step_length(config.step, k + 1, theta, direction, loglik, slope, probe);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ZeroStep) rethrow_with_iterate(e, k);
      trace.stop_reason = "line-search-exhausted";
      entry.seconds = seconds_since(iter_start);
      trace.iterates.push_back(std::move(entry));
      break;
    }

    const ParameterVector next = theta + eps * direction;
    double next_loglik = 0.0;
    Vector next_grad;
    try {
      const bool cached = last_theta.size() == next.size() && next == last_theta &&
                          std::isfinite(last_loglik);
      next_loglik = cached ? last_loglik : strict(next);
      next_grad = finite_difference_gradient(strict, next, config.fd_step);
    } catch (const Error& e) {
      rethrow_with_iterate(e, k + 1);
    }

    const Vector s = next - theta;
    const Vector yv = grad - next_grad;  // gradient change of -loglik
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      if (!have_curvature) {
        inv_curv = (sy / yv.squaredNorm()) * Matrix::Identity(p, p);
        have_curvature = true;
      }
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(p, p);
      inv_curv = (I - rho * s * yv.transpose()) * inv_curv * (I - rho * yv * s.transpose()) +
                 rho * s * s.transpose();
    }

    entry.step = eps;
    entry.seconds = seconds_since(iter_start);
    trace.iterates.push_back(std::move(entry));
    iter_start = Clock::now();
    theta = next;
    loglik = next_loglik;
    grad = std::move(next_grad);
  }
  trace.final = trace.iterates.back().theta;
  trace.total_time = seconds_since(run_start);
  return trace;
}

NewtonTrace estimate(const Model& model, const ObservationSequence& y,
                     const OptimizerConfig& config) {
  if (config.method == Method::Num) return quasi_newton_num(model, y, config);
  return newton_solve(model, y, config);
}

} // namespace ssmid
