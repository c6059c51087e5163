#include "ssmid/particle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "ssmid/errors.hpp"

namespace ssmid {

namespace {

constexpr double kBoundSlack = 1e-12;

// Normalizes log-weights in place into `out` and returns log(mean(exp(logw))).
double normalize_log_weights(const Vector& logw, Eigen::Ref<Vector> out) {
  const double max_lw = logw.maxCoeff();
  if (!std::isfinite(max_lw)) return -std::numeric_limits<double>::infinity();
  out = (logw.array() - max_lw).exp();
  const double sum = out.sum();
  out /= sum;
  return max_lw + std::log(sum) - std::log(static_cast<double>(logw.size()));
}

// Walker/Vose alias table: O(M) construction, O(1) per multinomial draw.
class CategoricalSampler {
public:
  explicit CategoricalSampler(const Eigen::Ref<const Vector>& weights)
      : prob_(static_cast<std::size_t>(weights.size())), alias_(prob_.size()) {
    const std::size_t n = prob_.size();
    const double total = weights.sum();
    std::vector<std::uint32_t> small, large;
    small.reserve(n);
    large.reserve(n);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights(static_cast<Index>(i)) * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const std::uint32_t s = small.back(), l = large.back();
      small.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::uint32_t i : large) prob_[i] = 1.0, alias_[i] = i;
    for (std::uint32_t i : small) prob_[i] = 1.0, alias_[i] = i;
  }

  int operator()(Rng& rng) const {
    const double u = rng.uniform() * static_cast<double>(prob_.size());
    const auto column = std::min(static_cast<std::size_t>(u), prob_.size() - 1);
    const double frac = u - static_cast<double>(column);
    return static_cast<int>(frac < prob_[column] ? column : alias_[column]);
  }

private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

// Single draw by linear scan; cheaper than building a table for one sample.
int draw_once(const Vector& probs, Rng& rng) {
  const double u = rng.uniform() * probs.sum();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  Index last = probs.size() - 1;
  while (last > 0 && probs(last) == 0.0) --last;
  return static_cast<int>(last);
}

void check_system(const ParticleSystem& ps) {
  if (ps.horizon() < 1 || ps.count() < 1 || static_cast<Index>(ps.particles.size()) != ps.horizon())
    throw Error(ErrorKind::InvalidArgument, "particle system is empty or inconsistent");
}

// Ancestral indices at times [from, to] of every particle alive at `to`.
// Row r of the result (r = t - from) holds the time-t indices.
std::vector<std::vector<int>> trace_paths(const ParticleSystem& ps, Index from, Index to) {
  const Index M = ps.count();
  std::vector<std::vector<int>> paths(static_cast<std::size_t>(to - from + 1),
                                      std::vector<int>(static_cast<std::size_t>(M)));
  auto& last = paths.back();
  std::iota(last.begin(), last.end(), 0);
  for (Index t = to; t > from; --t) {
    const auto& cur = paths[static_cast<std::size_t>(t - from)];
    auto& prev = paths[static_cast<std::size_t>(t - from - 1)];
    for (Index i = 0; i < M; ++i)
      prev[static_cast<std::size_t>(i)] = ps.ancestors(cur[static_cast<std::size_t>(i)], t);
  }
  return paths;
}

} // namespace

ParticleSystem bootstrap_pf(const Model& model, const ParameterVector& theta,
                            const ObservationSequence& y, Index M, std::uint64_t seed) {
  if (M < 1) throw Error(ErrorKind::InvalidArgument, "particle count must be positive");
  require_finite(theta);
  if (theta.size() != model.param_dim())
    throw Error(ErrorKind::InvalidArgument, "parameter length does not match model");
  const Index N = y.size();
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "empty observation sequence");
  const Index dx = model.state_dim();

  Rng rng(seed);
  ParticleSystem ps;
  ps.particles.assign(static_cast<std::size_t>(N), Matrix(dx, M));
  ps.weights.resize(M, N);
  ps.ancestors.resize(M, N);
  Vector logw(M);

  for (Index t = 0; t < N; ++t) {
    Matrix& cur = ps.particles[static_cast<std::size_t>(t)];
    if (t == 0) {
      for (Index i = 0; i < M; ++i) {
        model.sample_initial(rng, cur.col(i));
        ps.ancestors(i, 0) = static_cast<int>(i);
      }
    } else {
      const Matrix& prev = ps.particles[static_cast<std::size_t>(t - 1)];
      const CategoricalSampler resample(ps.weights.col(t - 1));
      for (Index i = 0; i < M; ++i) {
        const int a = resample(rng);
        ps.ancestors(i, t) = a;
        model.sample_transition(theta, prev.col(a), rng, cur.col(i));
      }
    }
    const auto yt = y.at(t);
    for (Index i = 0; i < M; ++i) logw(i) = model.observation_logdensity(theta, yt, cur.col(i));
    const double inc = normalize_log_weights(logw, ps.weights.col(t));
    if (!std::isfinite(inc))
      throw Error(ErrorKind::DegenerateWeights, "all particle weights vanished", t + 1);
    ps.loglik += inc;
  }
  return ps;
}

TwoStepSamples two_step_from_paths(const ParticleSystem& ps) {
  check_system(ps);
  const Index N = ps.horizon();
  const auto paths = trace_paths(ps, 0, N - 1);
  TwoStepSamples out(static_cast<std::size_t>(N));
  for (Index t = 0; t < N; ++t) {
    auto& slice = out[static_cast<std::size_t>(t)];
    slice.time = t;
    slice.current = paths[static_cast<std::size_t>(t)];
    if (t + 1 < N) slice.next = paths[static_cast<std::size_t>(t + 1)];
    slice.weights = ps.weights.col(N - 1);
  }
  return out;
}

Index fixed_lag_horizon(Index t_one_based, Index lag, Index N) {
  return std::min(N, t_one_based + 1 + lag);
}

TwoStepSamples fixed_lag_pairs(const ParticleSystem& ps, Index lag) {
  check_system(ps);
  const Index N = ps.horizon();
  if (lag <= 0 || lag > N) throw Error(ErrorKind::InvalidArgument, "lag must satisfy 0 < lag <= N");
  TwoStepSamples out(static_cast<std::size_t>(N));
  for (Index t = 0; t < N; ++t) {
    const Index kappa = fixed_lag_horizon(t + 1, lag, N) - 1;
    const auto paths = trace_paths(ps, t, kappa);
    auto& slice = out[static_cast<std::size_t>(t)];
    slice.time = t;
    slice.current = paths[0];
    if (t + 1 < N) slice.next = paths[1];
    slice.weights = ps.weights.col(kappa);
  }
  return out;
}

std::vector<Index> distinct_ancestor_counts(const ParticleSystem& ps) {
  check_system(ps);
  const Index N = ps.horizon();
  const auto paths = trace_paths(ps, 0, N - 1);
  std::vector<Index> counts(static_cast<std::size_t>(N));
  for (Index t = 0; t < N; ++t) {
    auto ids = paths[static_cast<std::size_t>(t)];
    std::sort(ids.begin(), ids.end());
    counts[static_cast<std::size_t>(t)] =
        std::distance(ids.begin(), std::unique(ids.begin(), ids.end()));
  }
  return counts;
}

StateTrajectory BackwardTrajectories::trajectory(const ParticleSystem& ps, Index j) const {
  StateTrajectory out;
  out.values.resize(ps.particles.front().rows(), horizon());
  for (Index t = 0; t < horizon(); ++t) out.values.col(t) = ps.particle(t, indices(t, j));
  return out;
}

BackwardTrajectories ffbsi(const Model& model, const ParameterVector& theta,
                           const ParticleSystem& ps, Index backward_count, Index rejection_limit,
                           double rho, std::uint64_t seed) {
  check_system(ps);
  if (backward_count < 1) throw Error(ErrorKind::InvalidArgument, "backward count must be positive");
  if (rejection_limit < 0 || rejection_limit > backward_count)
    throw Error(ErrorKind::InvalidArgument, "rejection limit must lie in [0, backward count]");
  if (!(rho > 0.0) || !std::isfinite(rho))
    throw Error(ErrorKind::InvalidBound, "rho must be positive and finite");
  const double log_rho = std::log(rho);
  const Index N = ps.horizon();
  const Index M = ps.count();

  Rng rng(seed);
  BackwardTrajectories bt;
  bt.indices.resize(N, backward_count);
  {
    const CategoricalSampler final_sampler(ps.weights.col(N - 1));
    for (Index j = 0; j < backward_count; ++j) bt.indices(N - 1, j) = final_sampler(rng);
  }

  std::vector<Index> pending;
  pending.reserve(static_cast<std::size_t>(backward_count));
  Vector logb(M);
  Vector probs(M);
  Matrix table;
  for (Index t = N - 2; t >= 0; --t) {
    const Matrix& xt = ps.particles[static_cast<std::size_t>(t)];
    const Matrix& xnext = ps.particles[static_cast<std::size_t>(t + 1)];
    const auto wt = ps.weights.col(t);
    const CategoricalSampler proposal(wt);

    pending.clear();
    for (Index j = 0; j < backward_count; ++j) pending.push_back(j);

    for (Index round = 0; round < M && static_cast<Index>(pending.size()) > rejection_limit; ++round) {
      std::size_t keep = 0;
      for (std::size_t k = 0; k < pending.size(); ++k) {
        const Index j = pending[k];
        const int i = proposal(rng);
        const double log_accept =
            model.transition_logdensity(theta, xnext.col(bt.indices(t + 1, j)), xt.col(i)) - log_rho;
        if (log_accept > kBoundSlack)
          throw Error(ErrorKind::InvalidBound, "transition density exceeds rho", t + 1);
        if (std::log(rng.uniform()) < log_accept) {
          bt.indices(t, j) = i;
          ++bt.rejection_draws;
        } else {
          pending[keep++] = j;
        }
      }
      pending.resize(keep);
    }

    if (!pending.empty()) {
      Matrix targets(xnext.rows(), static_cast<Index>(pending.size()));
      for (std::size_t k = 0; k < pending.size(); ++k)
        targets.col(static_cast<Index>(k)) = xnext.col(bt.indices(t + 1, pending[k]));
      model.transition_logdensity_table(theta, targets, xt, table);
      const Vector logw = wt.array().log();
      for (std::size_t k = 0; k < pending.size(); ++k) {
        logb = logw + table.col(static_cast<Index>(k));
        if (!std::isfinite(normalize_log_weights(logb, probs)))
          throw Error(ErrorKind::DegenerateWeights, "backward weights vanished", t + 1);
        bt.indices(t, pending[k]) = draw_once(probs, rng);
        ++bt.exact_draws;
      }
    }
  }
  return bt;
}

BackwardTrajectories ffbsi(const Model& model, const ParameterVector& theta,
                           const ParticleSystem& ps, Index backward_count, Index rejection_limit,
                           std::uint64_t seed) {
  return ffbsi(model, theta, ps, backward_count, rejection_limit,
               std::exp(model.log_transition_bound(theta)), seed);
}

} // namespace ssmid
