#include "ssmid/errors.hpp"

namespace ssmid {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::InvalidArgument: return "invalid-argument";
  case ErrorKind::InvalidSpec: return "invalid-spec";
  case ErrorKind::SimulationDiverged: return "simulation-diverged";
  case ErrorKind::SingularInnovation: return "singular-innovation";
  case ErrorKind::SingularCovariance: return "singular-covariance";
  case ErrorKind::DivergedFilter: return "diverged-filter";
  case ErrorKind::NoProgress: return "no-progress";
  case ErrorKind::IndefiniteHessian: return "indefinite-hessian";
  case ErrorKind::DegenerateWeights: return "degenerate-weights";
  case ErrorKind::InvalidBound: return "invalid-bound";
  case ErrorKind::InsufficientMoments: return "insufficient-moments";
  case ErrorKind::NonFiniteLoglik: return "non-finite-loglik";
  case ErrorKind::ZeroStep: return "zero-step";
  case ErrorKind::Config: return "config";
  }
  return "unknown";
}

namespace {

std::string decorate(ErrorKind kind, const std::string& what,
                     std::optional<long> t, std::optional<long> j) {
  std::string msg = std::string(to_string(kind)) + ": " + what;
  if (t) msg += " (t=" + std::to_string(*t) + ")";
  if (j) msg += " (coordinate " + std::to_string(*j) + ")";
  return msg;
}

} // namespace

Error::Error(ErrorKind kind, const std::string& what,
             std::optional<long> time_index, std::optional<long> coordinate)
    : std::runtime_error(decorate(kind, what, time_index, coordinate)),
      kind_(kind), time_index_(time_index), coordinate_(coordinate) {}

} // namespace ssmid
