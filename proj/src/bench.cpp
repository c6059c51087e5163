#include "ssmid/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ssmid/errors.hpp"
#include "ssmid/rng.hpp"

namespace ssmid {

namespace {

using nlohmann::json;

constexpr const char* kSchemaVersion = "1";

Vector to_vector(const json& j, const char* key) {
  if (!j.is_array()) throw Error(ErrorKind::Config, std::string(key) + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Write to a sibling temporary then rename, so readers never see partial files.
void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Config, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorKind::Config, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_header(const char* kind) {
  return std::string("# ssmid ") + kind + " v" + kSchemaVersion + "\n";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Data lines of a CSV file: comment lines dropped, first remaining line is the header.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!have_header) {
      header = split_csv(line);
      have_header = true;
    } else {
      rows.push_back(split_csv(line));
    }
  }
  if (!have_header) throw Error(ErrorKind::Config, path.string() + " has no header");
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name,
                   const std::filesystem::path& path) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorKind::Config, path.string() + " lacks column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

MethodOverrides overrides_from_json(const json& j) {
  MethodOverrides o;
  if (j.contains("max_iters")) o.max_iters = j["max_iters"].get<int>();
  if (j.contains("grad_tol")) o.grad_tol = j["grad_tol"].get<double>();
  if (j.contains("param_tol")) o.param_tol = j["param_tol"].get<double>();
  if (j.contains("step_policy")) o.step = parse_step_policy(j["step_policy"].get<std::string>());
  if (j.contains("step_exponent")) o.step_exponent = j["step_exponent"].get<double>();
  if (j.contains("particles")) o.particles = j["particles"].get<Index>();
  if (j.contains("lag")) o.lag = j["lag"].get<Index>();
  if (j.contains("backward")) o.backward = j["backward"].get<Index>();
  if (j.contains("rejection_limit")) o.rejection_limit = j["rejection_limit"].get<Index>();
  return o;
}

json overrides_to_json(const MethodOverrides& o) {
  json j = json::object();
  if (o.max_iters) j["max_iters"] = *o.max_iters;
  if (o.grad_tol) j["grad_tol"] = *o.grad_tol;
  if (o.param_tol) j["param_tol"] = *o.param_tol;
  if (o.step) j["step_policy"] = std::string(to_string(*o.step));
  if (o.step_exponent) j["step_exponent"] = *o.step_exponent;
  if (o.particles) j["particles"] = *o.particles;
  if (o.lag) j["lag"] = *o.lag;
  if (o.backward) j["backward"] = *o.backward;
  if (o.rejection_limit) j["rejection_limit"] = *o.rejection_limit;
  return j;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string trace_name(Method method, int replicate) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_r%03d.csv", std::string(to_string(method)).c_str(), replicate);
  return buf;
}

std::string trace_csv(const NewtonTrace& trace, Method method, int replicate) {
  std::ostringstream out;
  out << csv_header("trace");
  const Index p = trace.final.size();
  out << "method,replicate,k";
  for (Index j = 0; j < p; ++j) out << ",theta_" << (j + 1);
  out << ",loglik,grad_norm,step,direction\n";
  for (const TraceEntry& e : trace.iterates) {
    out << to_string(method) << ',' << replicate << ',' << e.k;
    for (Index j = 0; j < p; ++j) out << ',' << fmt(e.theta(j));
    out << ',' << fmt(e.loglik) << ',' << fmt(e.grad_norm) << ',' << fmt(e.step) << ','
        << e.direction << '\n';
  }
  return out.str();
}

std::string estimates_csv(const ExperimentConfig& config, const std::vector<ReplicateResult>& results) {
  std::ostringstream out;
  out << csv_header("estimates");
  out << "replicate,method,param,estimate,truth,status,iterations,converged,stop_reason\n";
  for (const ReplicateResult& r : results) {
    for (Index j = 0; j < config.theta_true.size(); ++j) {
      out << r.replicate << ',' << to_string(r.method) << ',' << "theta_" << (j + 1) << ',';
      out << (r.ok ? fmt(r.estimate(j)) : std::string("nan")) << ',' << fmt(config.theta_true(j)) << ','
          << (r.ok ? "ok" : "failed") << ',' << r.trace.iterations() << ','
          << (r.trace.converged ? 1 : 0) << ',' << (r.ok ? r.trace.stop_reason : r.failure) << '\n';
    }
  }
  return out.str();
}

std::string timing_csv(const ExperimentConfig& config, const std::vector<ReplicateResult>& results) {
  std::ostringstream out;
  out << csv_header("timing");
  out << "model,method,replicate,iterations,total_seconds,seconds_per_iteration\n";
  for (const ReplicateResult& r : results)
    out << config.model << ',' << to_string(r.method) << ',' << r.replicate << ','
        << r.trace.iterations() << ',' << fmt(r.trace.total_time) << ','
        << fmt(r.trace.seconds_per_iteration()) << '\n';
  return out.str();
}

std::string metadata_json(const ExperimentConfig& config, const std::vector<ReplicateResult>& results) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["library_version"] = "0.1.0";
  j["rng"] = std::string(Rng::kName);
  j["config"] = json::parse(experiment_config_to_json(config));
  json seeds = json::array();
  for (int r = 0; r < config.replicates; ++r) {
    json s;
    s["replicate"] = r;
    s["data"] = data_seed(config.seed, r);
    for (Method m : config.methods) s[std::string(to_string(m))] = method_seed(config.seed, r, m);
    seeds.push_back(std::move(s));
  }
  j["seeds"] = std::move(seeds);
  json failures = json::array();
  for (const ReplicateResult& r : results)
    if (!r.ok)
      failures.push_back({{"replicate", r.replicate}, {"method", std::string(to_string(r.method))},
                          {"reason", r.failure}});
  j["failures"] = std::move(failures);
  return j.dump(2) + "\n";
}

} // namespace

void apply_overrides(const MethodOverrides& o, OptimizerConfig& c) {
  if (o.max_iters) c.max_iters = *o.max_iters;
  if (o.grad_tol) c.grad_tol = *o.grad_tol;
  if (o.param_tol) c.param_tol = *o.param_tol;
  if (o.step) c.step.kind = *o.step;
  if (o.step_exponent) c.step.exponent = *o.step_exponent;
  if (o.particles) c.smoother.particles = *o.particles;
  if (o.lag) c.smoother.lag = *o.lag;
  if (o.backward) c.smoother.backward = *o.backward;
  if (o.rejection_limit) c.smoother.rejection_limit = *o.rejection_limit;
}

ModelPtr ExperimentConfig::build_model() const {
  if (model == "lgss") {
    if (!lgss) throw Error(ErrorKind::Config, "model 'lgss' needs an lgss spec");
    return make_linear_gaussian(*lgss);
  }
  return make_model(model);
}

OptimizerConfig ExperimentConfig::method_config(Method method, int replicate) const {
  OptimizerConfig c = default_config(method, theta0);
  if (auto it = overrides.find(method); it != overrides.end()) apply_overrides(it->second, c);
  c.seed = method_seed(seed, replicate, method);
  return c;
}

void ExperimentConfig::validate() const {
  const ModelPtr m = build_model();
  if (theta_true.size() != m->param_dim() || theta0.size() != m->param_dim())
    throw Error(ErrorKind::Config, "theta_true and theta0 must have " +
                                       std::to_string(m->param_dim()) + " entries");
  if (N < 2) throw Error(ErrorKind::Config, "N must be at least 2");
  if (replicates < 1) throw Error(ErrorKind::Config, "replicates must be positive");
  if (jobs < 1) throw Error(ErrorKind::Config, "jobs must be positive");
  if (methods.empty()) throw Error(ErrorKind::Config, "no methods selected");
  for (Method method : methods) {
    OptimizerConfig c = method_config(method, 0);
    c.validate();
    if (!is_deterministic(method)) c.smoother.validate(N);
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed experiment config: ") + e.what());
  }
  try {
    ExperimentConfig c;
    c.model = j.value("model", c.model);
    if (j.contains("lgss")) c.lgss = parse_linear_gaussian_spec(j["lgss"].dump());
    c.theta_true = to_vector(j.at("theta_true"), "theta_true");
    c.theta0 = to_vector(j.at("theta0"), "theta0");
    c.N = j.value("N", c.N);
    c.replicates = j.value("replicates", c.replicates);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("overrides"))
      for (const auto& [name, o] : j["overrides"].items())
        c.overrides[parse_method(name)] = overrides_from_json(o);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mirror_theta1")) c.mirror_theta1 = j["mirror_theta1"].get<bool>();
    c.jobs = j.value("jobs", c.jobs);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path));
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = c.model;
  if (c.lgss) j["lgss"] = json::parse(linear_gaussian_spec_to_json(*c.lgss));
  j["theta_true"] = to_json(c.theta_true);
  j["theta0"] = to_json(c.theta0);
  j["N"] = c.N;
  j["replicates"] = c.replicates;
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(std::string(to_string(m)));
  j["methods"] = std::move(methods);
  json overrides = json::object();
  for (const auto& [m, o] : c.overrides) overrides[std::string(to_string(m))] = overrides_to_json(o);
  j["overrides"] = std::move(overrides);
  j["seed"] = c.seed;
  j["mirror_theta1"] = c.mirrors();
  return j.dump(2);
}

std::uint64_t data_seed(std::uint64_t master, int replicate) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(replicate)), "data");
}

std::uint64_t method_seed(std::uint64_t master, int replicate, Method method) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(replicate)), to_string(method));
}

std::vector<BenchmarkRow> aggregate(const ExperimentConfig& config,
                                    const std::vector<ReplicateResult>& results) {
  std::vector<BenchmarkRow> rows;
  const Index p = config.theta_true.size();
  for (Method method : config.methods) {
    BenchmarkRow row;
    row.model = config.model;
    row.method = method;
    row.bias = Vector::Zero(p);
    row.mse = Vector::Zero(p);
    std::vector<double> iterations;
    double seconds = 0.0;
    for (const ReplicateResult& r : results) {
      if (r.method != method) continue;
      if (!r.ok) {
        ++row.failures;
        continue;
      }
      ++row.successes;
      const Vector err = r.estimate - config.theta_true;
      row.bias += err;
      row.mse += err.cwiseAbs2();
      iterations.push_back(r.trace.iterations());
      seconds += r.trace.seconds_per_iteration();
    }
    if (row.successes > 0) {
      row.bias /= row.successes;
      row.mse /= row.successes;
      row.seconds_per_iteration = seconds / row.successes;
    } else {
      row.bias.setConstant(std::nan(""));
      row.mse.setConstant(std::nan(""));
    }
    row.median_iterations = median(iterations);
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const ModelPtr model = config.build_model();
  const auto R = static_cast<std::size_t>(config.replicates);
  const std::size_t nm = config.methods.size();
  std::vector<ReplicateResult> results(R * nm);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr io_error;

  auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      const int rep = static_cast<int>(r);
      std::optional<SimulatedData> data;
      std::string data_failure;
      try {
        data = simulate(*model, config.theta_true, config.N, data_seed(config.seed, rep));
      } catch (const std::exception& e) {
        data_failure = std::string("simulation: ") + e.what();
      }
      for (std::size_t m = 0; m < nm; ++m) {
        ReplicateResult& out = results[r * nm + m];
        out.replicate = rep;
        out.method = config.methods[m];
        if (!data) {
          out.failure = data_failure;
          continue;
        }
        try {
          out.trace = estimate(*model, data->observations, config.method_config(out.method, rep));
          out.estimate = out.trace.final;
          if (config.mirrors()) out.estimate(0) = std::abs(out.estimate(0));
          out.ok = out.estimate.allFinite();
          if (!out.ok) out.failure = "non-finite estimate";
        } catch (const std::exception& e) {
          out.failure = e.what();
        }
        if (!out_dir.empty() && out.ok) {
          try {
            write_atomic(out_dir / "traces" / trace_name(out.method, rep),
                         trace_csv(out.trace, out.method, rep));
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!io_error) io_error = std::current_exception();
          }
        }
      }
    }
  };

  const int jobs = std::max(1, std::min<int>(config.jobs, config.replicates));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (io_error) std::rethrow_exception(io_error);

  ExperimentResult result;
  result.rows = aggregate(config, results);
  result.results = std::move(results);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const FormattedTable table = emit_table(result.rows);
    write_atomic(out_dir / "estimates.csv", estimates_csv(config, result.results));
    write_atomic(out_dir / "table.csv", table.csv);
    write_atomic(out_dir / "timing.csv", timing_csv(config, result.results));
    write_atomic(out_dir / "table.txt", table.text);
    write_atomic(out_dir / "metadata.json", metadata_json(config, result.results));
  }
  return result;
}

FormattedTable emit_table(const std::vector<BenchmarkRow>& rows) {
  FormattedTable out;
  std::ostringstream csv;
  csv << csv_header("table");
  csv << "model,method,param,bias,mse,successes,failures,median_iterations\n";
  for (const BenchmarkRow& row : rows)
    for (Index j = 0; j < row.bias.size(); ++j)
      csv << row.model << ',' << to_string(row.method) << ",theta_" << (j + 1) << ','
          << fmt(row.bias(j)) << ',' << fmt(row.mse(j)) << ',' << row.successes << ','
          << row.failures << ',' << fmt(row.median_iterations) << '\n';
  out.csv = csv.str();

  std::ostringstream text;
  std::vector<std::string> models;
  for (const BenchmarkRow& row : rows)
    if (std::find(models.begin(), models.end(), row.model) == models.end()) models.push_back(row.model);

  for (const std::string& model : models) {
    std::vector<const BenchmarkRow*> block;
    for (const BenchmarkRow& row : rows)
      if (row.model == model) block.push_back(&row);
    const Index p = block.front()->bias.size();
    Vector best_bias = Vector::Constant(p, std::numeric_limits<double>::infinity());
    Vector best_mse = best_bias;
    for (const BenchmarkRow* row : block)
      for (Index j = 0; j < p; ++j) {
        if (std::isfinite(row->bias(j))) best_bias(j) = std::min(best_bias(j), std::abs(row->bias(j)));
        if (std::isfinite(row->mse(j))) best_mse(j) = std::min(best_mse(j), row->mse(j));
      }

    text << model << " (bias and MSE x 1e4; * marks the smallest per column)\n";
    text << std::left << std::setw(11) << "method";
    for (Index j = 0; j < p; ++j) text << std::right << std::setw(14) << ("bias th" + std::to_string(j + 1));
    for (Index j = 0; j < p; ++j) text << std::right << std::setw(14) << ("MSE th" + std::to_string(j + 1));
    text << std::right << std::setw(12) << "s/iter" << std::setw(8) << "iters" << std::setw(6) << "fail"
         << '\n';
    auto cell = [&](double value, bool best) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(2) << value * 1e4 << (best ? "*" : " ");
      text << std::right << std::setw(14) << c.str();
    };
    for (const BenchmarkRow* row : block) {
      text << std::left << std::setw(11) << to_string(row->method);
      for (Index j = 0; j < p; ++j) cell(row->bias(j), std::abs(row->bias(j)) == best_bias(j));
      for (Index j = 0; j < p; ++j) cell(row->mse(j), row->mse(j) == best_mse(j));
      std::ostringstream s;
      s << std::setprecision(3) << row->seconds_per_iteration;
      text << std::right << std::setw(12) << s.str() << std::setw(8) << row->median_iterations
           << std::setw(6) << row->failures << '\n';
    }
    text << '\n';
  }
  out.text = text.str();
  return out;
}

std::vector<BenchmarkRow> read_bundle_rows(const std::filesystem::path& dir) {
  std::vector<std::string> header;
  const auto table_path = dir / "table.csv";
  const auto data = read_csv(table_path, header);
  const auto c_model = column(header, "model", table_path), c_method = column(header, "method", table_path),
             c_param = column(header, "param", table_path), c_bias = column(header, "bias", table_path),
             c_mse = column(header, "mse", table_path), c_succ = column(header, "successes", table_path),
             c_fail = column(header, "failures", table_path),
             c_iter = column(header, "median_iterations", table_path);

  std::vector<BenchmarkRow> rows;
  for (const auto& line : data) {
    if (line.size() < header.size()) throw Error(ErrorKind::Config, "short row in " + table_path.string());
    const Method method = parse_method(line[c_method]);
    auto it = std::find_if(rows.begin(), rows.end(), [&](const BenchmarkRow& r) {
      return r.model == line[c_model] && r.method == method;
    });
    if (it == rows.end()) {
      rows.push_back(BenchmarkRow{line[c_model], method, Vector(), Vector(), 0.0,
                                  std::stod(line[c_iter]), std::stoi(line[c_succ]),
                                  std::stoi(line[c_fail])});
      it = rows.end() - 1;
    }
    const Index j = std::stol(line[c_param].substr(line[c_param].find('_') + 1)) - 1;
    if (it->bias.size() <= j) {
      it->bias.conservativeResize(j + 1);
      it->mse.conservativeResize(j + 1);
    }
    it->bias(j) = std::stod(line[c_bias]);
    it->mse(j) = std::stod(line[c_mse]);
  }

  const auto timing_path = dir / "timing.csv";
  if (std::filesystem::exists(timing_path)) {
    const auto timing = read_csv(timing_path, header);
    const auto t_model = column(header, "model", timing_path), t_method = column(header, "method", timing_path),
               t_spi = column(header, "seconds_per_iteration", timing_path);
    for (BenchmarkRow& row : rows) {
      double total = 0.0;
      int count = 0;
      for (const auto& line : timing)
        if (line[t_model] == row.model && parse_method(line[t_method]) == row.method) {
          total += std::stod(line[t_spi]);
          ++count;
        }
      if (count > 0) row.seconds_per_iteration = total / count;
    }
  }
  return rows;
}

void write_dataset_csv(const std::filesystem::path& path, const SimulatedData& data) {
  std::ostringstream out;
  out << csv_header("data");
  out << 't';
  for (Index i = 0; i < data.states.dim(); ++i) out << ",x_" << (i + 1);
  for (Index i = 0; i < data.observations.dim(); ++i) out << ",y_" << (i + 1);
  out << '\n';
  for (Index t = 0; t < data.observations.size(); ++t) {
    out << (t + 1);
    for (Index i = 0; i < data.states.dim(); ++i) out << ',' << fmt(data.states.values(i, t));
    for (Index i = 0; i < data.observations.dim(); ++i) out << ',' << fmt(data.observations.values(i, t));
    out << '\n';
  }
  write_atomic(path, out.str());
}

ObservationSequence read_observations_csv(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto data = read_csv(path, header);
  std::vector<std::size_t> ycols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c].rfind("y_", 0) == 0) ycols.push_back(c);
  if (ycols.empty()) throw Error(ErrorKind::Config, path.string() + " has no y_ columns");
  ObservationSequence y{Matrix(static_cast<Index>(ycols.size()), static_cast<Index>(data.size()))};
  for (std::size_t t = 0; t < data.size(); ++t)
    for (std::size_t i = 0; i < ycols.size(); ++i) {
      if (ycols[i] >= data[t].size()) throw Error(ErrorKind::Config, "short row in " + path.string());
      y.values(static_cast<Index>(i), static_cast<Index>(t)) = std::stod(data[t][ycols[i]]);
    }
  return y;
}

void write_trace_csv(const std::filesystem::path& path, const NewtonTrace& trace, Method method,
                     int replicate) {
  write_atomic(path, trace_csv(trace, method, replicate));
}

} // namespace ssmid
