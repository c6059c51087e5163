#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssmid/models.hpp"
#include "ssmid/optimizer.hpp"

namespace ssmid {

/// Per-method settings layered over default_config.
struct MethodOverrides {
  std::optional<int> max_iters;
  std::optional<double> grad_tol;
  std::optional<double> param_tol;
  std::optional<StepPolicyKind> step;
  std::optional<double> step_exponent;
  std::optional<Index> particles;
  std::optional<Index> lag;
  std::optional<Index> backward;
  std::optional<Index> rejection_limit;
};

void apply_overrides(const MethodOverrides& overrides, OptimizerConfig& config);

struct ExperimentConfig {
  std::string model = "model1";
  /// Required when model == "lgss".
  std::optional<LinearGaussianSpec> lgss;
  ParameterVector theta_true;
  ParameterVector theta0;
  Index N = 1000;
  int replicates = 20;
  std::vector<Method> methods{Method::Alg2, Method::Alg3FL, Method::Alg3FFBSi, Method::Num};
  std::map<Method, MethodOverrides> overrides;
  std::uint64_t seed = 1;
  /// Model 1 is identified only up to the sign of theta_1; estimates are reported as |theta_1|.
  std::optional<bool> mirror_theta1;
  int jobs = 1;
  /// Used when no directory is passed to run_experiment's caller.
  std::string output_dir;

  bool mirrors() const { return mirror_theta1.value_or(model == "model1"); }
  ModelPtr build_model() const;
  OptimizerConfig method_config(Method method, int replicate) const;
  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& config);

std::uint64_t data_seed(std::uint64_t master, int replicate);
std::uint64_t method_seed(std::uint64_t master, int replicate, Method method);

struct ReplicateResult {
  int replicate = 0;
  Method method = Method::Alg2;
  bool ok = false;
  std::string failure;
  ParameterVector estimate;
  NewtonTrace trace;
};

struct BenchmarkRow {
  std::string model;
  Method method = Method::Alg2;
  Vector bias;
  Vector mse;
  double seconds_per_iteration = 0.0;
  double median_iterations = 0.0;
  int successes = 0;
  int failures = 0;
};

struct ExperimentResult {
  std::vector<ReplicateResult> results;
  std::vector<BenchmarkRow> rows;
};

/// Bias and MSE over successful replicates, one row per method in config order.
std::vector<BenchmarkRow> aggregate(const ExperimentConfig& config,
                                    const std::vector<ReplicateResult>& results);

/// Runs every replicate and method. Replicates are distributed over
/// config.jobs worker threads; results do not depend on the job count.
/// When out_dir is non-empty the result bundle is written there.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir = {});

struct FormattedTable {
  /// Bias and MSE scaled by 1e4; minimum |bias| and MSE per parameter marked with '*'.
  std::string text;
  /// Unscaled values.
  std::string csv;
};

FormattedTable emit_table(const std::vector<BenchmarkRow>& rows);

/// Rebuilds rows from a bundle written by run_experiment.
std::vector<BenchmarkRow> read_bundle_rows(const std::filesystem::path& dir);

void write_dataset_csv(const std::filesystem::path& path, const SimulatedData& data);
/// Reads the observation columns of a dataset CSV (states are optional).
ObservationSequence read_observations_csv(const std::filesystem::path& path);
void write_trace_csv(const std::filesystem::path& path, const NewtonTrace& trace,
                     Method method, int replicate);

} // namespace ssmid
