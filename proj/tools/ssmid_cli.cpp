#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssmid/bench.hpp"
#include "ssmid/errors.hpp"

namespace fs = std::filesystem;
using namespace ssmid;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

ParameterVector parse_theta(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "cannot parse parameter list '" + text + "'");
    }
  }
  if (values.empty()) throw Error(ErrorKind::Config, "empty parameter list");
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

fs::path output_dir(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SSMID_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  if (!from_config.empty()) return from_config;
  return "ssmid-out";
}

bool is_config_error(ErrorKind kind) {
  return kind == ErrorKind::Config || kind == ErrorKind::InvalidSpec ||
         kind == ErrorKind::InvalidArgument;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood identification of nonlinear state-space models"};
  app.require_subcommand(1);

  std::string model_name = "model1";
  std::string lgss_path;
  std::string theta_text;
  Index n = 1000;
  std::uint64_t seed = 1;
  std::string out_path;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset to CSV");
  sim->add_option("--model", model_name, "model1, model2 or lgss")->capture_default_str();
  sim->add_option("--lgss", lgss_path, "JSON spec for the lgss model");
  sim->add_option("--theta", theta_text, "Comma-separated parameters")->required();
  sim->add_option("--n", n, "Number of observations")->capture_default_str();
  sim->add_option("--seed", seed, "Seed")->capture_default_str();
  sim->add_option("--out", out_path, "Output CSV")->required();

  std::string method_name = "ALG2";
  std::string data_path;
  std::string theta0_text;
  std::optional<int> max_iters;
  std::optional<double> grad_tol, param_tol;
  std::optional<Index> particles, lag, mbar, mlimit;
  std::optional<std::string> step_policy;
  auto* est = app.add_subcommand("estimate", "Estimate parameters from a dataset");
  est->add_option("--model", model_name, "model1, model2 or lgss")->capture_default_str();
  est->add_option("--lgss", lgss_path, "JSON spec for the lgss model");
  est->add_option("--method", method_name, "ALG2, ALG3FL, ALG3FFBSi or NUM")->capture_default_str();
  est->add_option("--data", data_path, "Dataset CSV")->required();
  est->add_option("--theta0", theta0_text, "Comma-separated initial parameters")->required();
  est->add_option("--seed", seed, "Seed for sampling back-ends")->capture_default_str();
  est->add_option("--max-iters", max_iters);
  est->add_option("--grad-tol", grad_tol);
  est->add_option("--param-tol", param_tol);
  est->add_option("--particles", particles);
  est->add_option("--lag", lag);
  est->add_option("--mbar", mbar, "Backward trajectories");
  est->add_option("--mlimit", mlimit, "Rejection-sampling limit");
  est->add_option("--step-policy", step_policy, "backtracking or stochastic");
  est->add_option("--out", out_path, "Trace CSV");

  std::string config_path;
  std::optional<int> replicates, jobs;
  auto* bench = app.add_subcommand("benchmark", "Run a replicated benchmark");
  bench->add_option("--config", config_path, "Experiment JSON")->required();
  bench->add_option("--out", out_path, "Output directory (default $SSMID_OUTPUT_DIR)");
  bench->add_option("--replicates", replicates);
  bench->add_option("--jobs", jobs);

  std::string in_dir;
  auto* table = app.add_subcommand("table", "Print the table of a benchmark bundle");
  table->add_option("--in", in_dir, "Bundle directory")->required();

  CLI11_PARSE(app, argc, argv);

  auto build_model = [&]() -> ModelPtr {
    if (model_name == "lgss") {
      if (lgss_path.empty()) throw Error(ErrorKind::Config, "--lgss is required for model lgss");
      return make_linear_gaussian(load_linear_gaussian_spec(lgss_path));
    }
    return make_model(model_name);
  };

  try {
    if (*sim) {
      const ModelPtr model = build_model();
      const ParameterVector theta = parse_theta(theta_text);
      if (theta.size() != model->param_dim())
        throw Error(ErrorKind::Config, "--theta needs " + std::to_string(model->param_dim()) + " values");
      write_dataset_csv(out_path, simulate(*model, theta, n, seed));
    } else if (*est) {
      const ModelPtr model = build_model();
      const Method method = parse_method(method_name);
      const ObservationSequence y = read_observations_csv(data_path);
      OptimizerConfig config = default_config(method, parse_theta(theta0_text));
      MethodOverrides o;
      o.max_iters = max_iters;
      o.grad_tol = grad_tol;
      o.param_tol = param_tol;
      o.particles = particles;
      o.lag = lag;
      o.backward = mbar;
      o.rejection_limit = mlimit;
      if (step_policy) o.step = parse_step_policy(*step_policy);
      apply_overrides(o, config);
      config.seed = seed;
      if (config.theta0.size() != model->param_dim())
        throw Error(ErrorKind::Config, "--theta0 needs " + std::to_string(model->param_dim()) + " values");
      config.validate();
      const NewtonTrace trace = estimate(*model, y, config);
      if (!out_path.empty()) write_trace_csv(out_path, trace, method, 0);
      nlohmann::json j;
      j["method"] = std::string(to_string(method));
      j["theta"] = std::vector<double>(trace.final.data(), trace.final.data() + trace.final.size());
      j["iterations"] = trace.iterations();
      j["converged"] = trace.converged;
      j["stop_reason"] = trace.stop_reason;
      j["loglik"] = trace.iterates.empty() ? 0.0 : trace.iterates.back().loglik;
      j["seconds_per_iteration"] = trace.seconds_per_iteration();
      std::cout << j.dump(2) << '\n';
    } else if (*bench) {
      ExperimentConfig config = load_experiment_config(config_path);
      if (replicates) config.replicates = *replicates;
      if (jobs) config.jobs = *jobs;
      const fs::path dir = output_dir(out_path, config.output_dir);
      const ExperimentResult result = run_experiment(config, dir);
      std::cout << emit_table(result.rows).text;
      std::cout << "results written to " << dir.string() << '\n';
    } else if (*table) {
      std::cout << emit_table(read_bundle_rows(in_dir)).text;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_config_error(e.kind()) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
