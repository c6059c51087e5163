#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ssmid/errors.hpp"
#include "ssmid/models.hpp"

namespace ssmid {

namespace {

using nlohmann::json;

Matrix matrix_from_json(const json& j, const char* key) {
  if (!j.is_array() || j.empty())
    throw Error(ErrorKind::Config, std::string(key) + " must be a non-empty nested array");
  // A flat array of numbers is accepted as a 1 x 1 or column shorthand for scalars.
  if (!j.front().is_array()) {
    Matrix m(static_cast<Index>(j.size()), 1);
    for (std::size_t r = 0; r < j.size(); ++r) m(static_cast<Index>(r), 0) = j[r].get<double>();
    return m;
  }
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw Error(ErrorKind::Config, std::string(key) + " has ragged rows");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j, const char* key) {
  if (!j.is_array()) throw Error(ErrorKind::Config, std::string(key) + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace

LinearGaussianSpec parse_linear_gaussian_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed linear-Gaussian spec: ") + e.what());
  }
  try {
    LinearGaussianSpec s;
    s.F = matrix_from_json(j.at("F"), "F");
    s.G = matrix_from_json(j.at("G"), "G");
    s.Q = matrix_from_json(j.at("Q"), "Q");
    s.R = matrix_from_json(j.at("R"), "R");
    s.mu = vector_from_json(j.at("mu"), "mu");
    s.P1 = matrix_from_json(j.at("P1"), "P1");
    s.theta = j.contains("theta") ? vector_from_json(j["theta"], "theta") : Vector();
    auto derivs = [&](const char* key, std::vector<Matrix>& out) {
      if (!j.contains(key)) return;
      for (const auto& m : j[key]) out.push_back(matrix_from_json(m, key));
    };
    derivs("dF", s.dF);
    derivs("dG", s.dG);
    derivs("dQ", s.dQ);
    derivs("dR", s.dR);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("linear-Gaussian spec: ") + e.what());
  }
}

LinearGaussianSpec load_linear_gaussian_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_linear_gaussian_spec(buffer.str());
}

std::string linear_gaussian_spec_to_json(const LinearGaussianSpec& s) {
  json j;
  j["F"] = matrix_to_json(s.F);
  j["G"] = matrix_to_json(s.G);
  j["Q"] = matrix_to_json(s.Q);
  j["R"] = matrix_to_json(s.R);
  j["mu"] = std::vector<double>(s.mu.data(), s.mu.data() + s.mu.size());
  j["P1"] = matrix_to_json(s.P1);
  j["theta"] = std::vector<double>(s.theta.data(), s.theta.data() + s.theta.size());
  auto derivs = [&](const char* key, const std::vector<Matrix>& d) {
    json arr = json::array();
    for (const auto& m : d) arr.push_back(matrix_to_json(m));
    j[key] = std::move(arr);
  };
  derivs("dF", s.dF);
  derivs("dG", s.dG);
  derivs("dQ", s.dQ);
  derivs("dR", s.dR);
  return j.dump(2);
}

} // namespace ssmid
