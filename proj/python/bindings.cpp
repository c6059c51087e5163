#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ssmid/bench.hpp"
#include "ssmid/errors.hpp"
#include "ssmid/gaussian_filters.hpp"
#include "ssmid/inference.hpp"
#include "ssmid/optimizer.hpp"
#include "ssmid/particle.hpp"

namespace py = pybind11;
using namespace ssmid;

namespace {

// "model1", "model2", or a JSON linear-Gaussian spec (a string starting with '{').
ModelPtr resolve_model(const std::string& model) {
  if (!model.empty() && model.front() == '{') return make_linear_gaussian(parse_linear_gaussian_spec(model));
  return make_model(model);
}

const AdditiveGaussianModel& additive(const Model& m) {
  const auto* a = dynamic_cast<const AdditiveGaussianModel*>(&m);
  if (a == nullptr) throw Error(ErrorKind::InvalidArgument, "model has no additive Gaussian structure");
  return *a;
}

// 1-D arrays are a scalar series; 2-D arrays are d_y x N.
ObservationSequence to_observations(const py::array_t<double, py::array::forcecast>& y) {
  if (y.ndim() == 1) {
    Matrix values(1, y.shape(0));
    for (py::ssize_t t = 0; t < y.shape(0); ++t) values(0, t) = y.at(t);
    return {values};
  }
  if (y.ndim() != 2) throw Error(ErrorKind::InvalidArgument, "observations must be 1-D or 2-D");
  Matrix values(y.shape(0), y.shape(1));
  for (py::ssize_t i = 0; i < y.shape(0); ++i)
    for (py::ssize_t t = 0; t < y.shape(1); ++t) values(i, t) = y.at(i, t);
  return {values};
}

py::object squeeze(const Matrix& m) {
  if (m.rows() == 1) return py::cast(Vector(m.row(0).transpose()));
  return py::cast(m);
}

OptimizerConfig make_config(const std::string& method, const Vector& theta0, std::uint64_t seed,
                            const py::dict& options) {
  OptimizerConfig c = default_config(parse_method(method), theta0);
  MethodOverrides o;
  for (const auto& [key, value] : options) {
    const auto k = key.cast<std::string>();
    if (k == "max_iters") o.max_iters = value.cast<int>();
    else if (k == "grad_tol") o.grad_tol = value.cast<double>();
    else if (k == "param_tol") o.param_tol = value.cast<double>();
    else if (k == "step") o.step = parse_step_policy(value.cast<std::string>());
    else if (k == "step_exponent") o.step_exponent = value.cast<double>();
    else if (k == "particles") o.particles = value.cast<Index>();
    else if (k == "lag") o.lag = value.cast<Index>();
    else if (k == "backward") o.backward = value.cast<Index>();
    else if (k == "rejection_limit") o.rejection_limit = value.cast<Index>();
    else throw Error(ErrorKind::InvalidArgument, "unknown option '" + k + "'");
  }
  apply_overrides(o, c);
  c.seed = seed;
  c.validate();
  return c;
}

py::dict trace_to_dict(const NewtonTrace& trace) {
  std::vector<int> k;
  std::vector<double> loglik, grad_norm, step;
  std::vector<std::string> direction;
  Matrix theta(trace.iterates.empty() ? 0 : trace.iterates.front().theta.size(),
               static_cast<Index>(trace.iterates.size()));
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    const TraceEntry& e = trace.iterates[i];
    k.push_back(e.k);
    loglik.push_back(e.loglik);
    grad_norm.push_back(e.grad_norm);
    step.push_back(e.step);
    direction.push_back(e.direction);
    theta.col(static_cast<Index>(i)) = e.theta;
  }
  py::dict out;
  out["theta"] = trace.final;
  out["converged"] = trace.converged;
  out["stop_reason"] = trace.stop_reason;
  out["iterations"] = trace.iterations();
  out["seconds_per_iteration"] = trace.seconds_per_iteration();
  py::dict iterates;
  iterates["k"] = k;
  iterates["theta"] = Matrix(theta.transpose());
  iterates["loglik"] = loglik;
  iterates["grad_norm"] = grad_norm;
  iterates["step"] = step;
  iterates["direction"] = direction;
  out["trace"] = iterates;
  return out;
}

} // namespace

PYBIND11_MODULE(_ssmid, m) {
  m.doc() = "Maximum-likelihood identification of nonlinear state-space models";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::exception<Error>(m, "SsmidError", PyExc_RuntimeError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type.get_stored(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "simulate",
      [](const std::string& model, const Vector& theta, Index n, std::uint64_t seed) {
        const SimulatedData d = simulate(*resolve_model(model), theta, n, seed);
        return py::make_tuple(squeeze(d.states.values), squeeze(d.observations.values));
      },
      py::arg("model"), py::arg("theta"), py::arg("n"), py::arg("seed"),
      "Simulate (states, observations) from a model.");

  m.def(
      "kalman_filter",
      [](const std::string& spec_json, const Vector& theta, const py::array_t<double, py::array::forcecast>& y) {
        const LinearGaussianSpec s = parse_linear_gaussian_spec(spec_json).at(theta);
        const ObservationSequence obs = to_observations(y);
        const FilterResult f = kalman_filter(s, obs);
        const SmoothedMoments sm = rts_smoother(s, f);
        Matrix filtered(s.state_dim(), obs.size()), smoothed(s.state_dim(), obs.size());
        for (Index t = 0; t < obs.size(); ++t) {
          filtered.col(t) = f.filtered[static_cast<std::size_t>(t)].mean;
          smoothed.col(t) = sm.means[static_cast<std::size_t>(t)];
        }
        py::dict out;
        out["loglik"] = f.loglik;
        out["filtered_means"] = squeeze(filtered);
        out["smoothed_means"] = squeeze(smoothed);
        return out;
      },
      py::arg("spec_json"), py::arg("theta"), py::arg("y"),
      "Kalman filter log-likelihood with filtered and RTS-smoothed means.");

  m.def(
      "ekf_loglik",
      [](const std::string& model, const Vector& theta, const py::array_t<double, py::array::forcecast>& y) {
        const ModelPtr mp = resolve_model(model);
        return ekf_loglik(additive(*mp), theta, to_observations(y));
      },
      py::arg("model"), py::arg("theta"), py::arg("y"));

  m.def(
      "bootstrap_pf",
      [](const std::string& model, const Vector& theta, const py::array_t<double, py::array::forcecast>& y,
         Index particles, std::uint64_t seed) {
        const ParticleSystem ps = bootstrap_pf(*resolve_model(model), theta, to_observations(y), particles, seed);
        py::dict out;
        out["loglik"] = ps.loglik;
        out["weights"] = ps.weights;
        return out;
      },
      py::arg("model"), py::arg("theta"), py::arg("y"), py::arg("particles"), py::arg("seed"),
      "Bootstrap particle filter; weights are M x N.");

  m.def(
      "derivatives",
      [](const std::string& model, const Vector& theta, const py::array_t<double, py::array::forcecast>& y,
         const std::string& method, std::uint64_t seed, const py::kwargs& options) {
        const OptimizerConfig c = make_config(method, theta, seed, options);
        const DerivativeEstimate d = estimate_derivatives(*resolve_model(model), to_observations(y), c, theta, 1);
        py::dict out;
        out["loglik"] = d.loglik;
        out["gradient"] = d.gradient;
        out["hessian"] = d.hessian;
        return out;
      },
      py::arg("model"), py::arg("theta"), py::arg("y"), py::arg("method") = "ALG2", py::arg("seed") = 1,
      "Log-likelihood, gradient and Hessian estimates at theta.");

  m.def(
      "estimate",
      [](const std::string& model, const py::array_t<double, py::array::forcecast>& y, const Vector& theta0,
         const std::string& method, std::uint64_t seed, const py::kwargs& options) {
        const OptimizerConfig c = make_config(method, theta0, seed, options);
        const ModelPtr mp = resolve_model(model);
        const ObservationSequence obs = to_observations(y);
        NewtonTrace trace;
        {
          py::gil_scoped_release release;
          trace = estimate(*mp, obs, c);
        }
        return trace_to_dict(trace);
      },
      py::arg("model"), py::arg("y"), py::arg("theta0"), py::arg("method") = "ALG2", py::arg("seed") = 1,
      "Maximum-likelihood estimate with the chosen method. Options: max_iters, grad_tol, "
      "param_tol, step, step_exponent, particles, lag, backward, rejection_limit.");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir) {
        const ExperimentConfig c = parse_experiment_config(config_json);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c, out_dir);
        }
        return emit_table(r.rows).text;
      },
      py::arg("config_json"), py::arg("out_dir") = "",
      "Run a replicated benchmark; returns the formatted table and writes the bundle when out_dir is set.");
}
