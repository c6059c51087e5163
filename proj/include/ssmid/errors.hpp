#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ssmid {

enum class ErrorKind {
  InvalidArgument,
  InvalidSpec,
  SimulationDiverged,
  SingularInnovation,
  SingularCovariance,
  DivergedFilter,
  NoProgress,
  IndefiniteHessian,
  DegenerateWeights,
  InvalidBound,
  InsufficientMoments,
  NonFiniteLoglik,
  ZeroStep,
  Config,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. `time_index` is 1-based when the failure is tied to
/// a position in the observation sequence; `coordinate` names a parameter index.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what,
        std::optional<long> time_index = std::nullopt,
        std::optional<long> coordinate = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<long> time_index() const noexcept { return time_index_; }
  std::optional<long> coordinate() const noexcept { return coordinate_; }

private:
  ErrorKind kind_;
  std::optional<long> time_index_;
  std::optional<long> coordinate_;
};

} // namespace ssmid
