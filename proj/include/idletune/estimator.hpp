#pragma once

// Recursive stochastic-approximation tracker for (xi, beta).
//
// Each averaging window contributes an observation (chi, theta) and the
// estimates move towards it by a step eta_n:
//
//     xi_{n+1}   = xi_n   + eta_n (chi_{n+1}   - xi_n)
//     beta_{n+1} = beta_n + eta_n (theta_{n+1} - beta_n)
//
// After every step the idle timeout is re-solved and handed to a publish
// sink whenever it moved by at least delta seconds since the last publish.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idletune/errors.hpp"
#include "idletune/failure_model.hpp"
#include "idletune/window.hpp"

namespace idletune {

struct StepSchedule {
  enum class Kind { Harmonic, Power, Constant };
  Kind kind = Kind::Harmonic;
  double param = 0.0;  // exponent a for Power, step c for Constant

  static StepSchedule harmonic() { return {Kind::Harmonic, 0.0}; }

  static StepSchedule power(double a) {
    if (!(a > 0.5 && a <= 1.0)) throw DomainError("power schedule exponent must lie in (0.5, 1]");
    return {Kind::Power, a};
  }

  // Does not decay: tracks drifting traffic at the price of never settling.
  static StepSchedule constant(double c) {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("constant step must lie in (0, 1]");
    return {Kind::Constant, c};
  }
};

inline double step_size(const StepSchedule& schedule, std::uint64_t n) {
  const double m = static_cast<double>(n) + 1.0;
  switch (schedule.kind) {
    case StepSchedule::Kind::Harmonic:
      return 1.0 / m;
    case StepSchedule::Kind::Power:
      return std::pow(m, -schedule.param);
    case StepSchedule::Kind::Constant:
      return schedule.param;
  }
  return 1.0 / m;
}

struct EstimatorState {
  std::uint64_t iteration = 0;
  double xi_hat = 0.0;
  double beta_hat = 0.0;
  std::optional<double> last_published_timeout_s;
};

struct TunerConfig {
  double window_s = 1200.0;
  double target_eps = 0.1;
  std::uint64_t n_users = 1;
  double publish_delta_s = 5.0;
  StepSchedule schedule = StepSchedule::harmonic();
  SolverPolicy solver_policy{};
};

inline void validate(const TunerConfig& c) {
  if (!(c.window_s > 0.0)) throw DomainError("window length must be positive");
  if (!(c.target_eps > 0.0 && c.target_eps < 1.0))
    throw DomainError("target failure probability must lie in (0, 1)");
  if (c.n_users < 1) throw DomainError("n_users must be at least 1");
  if (!(c.publish_delta_s >= 0.0)) throw DomainError("publish delta must be nonnegative");
}

namespace detail {

// current + eta (target - current), kept between its endpoints despite rounding.
inline double convex_step(double current, double target, double eta) {
  const double v = current + eta * (target - current);
  return std::clamp(v, std::min(current, target), std::max(current, target));
}

}  // namespace detail

/// Starting from xi_0 = beta_0 = 0, the first step uses eta_0 = 1 and lands
/// exactly on the first observation.
inline EstimatorState init_state(const WindowStats& first_window) {
  if (first_window.n_requests == 0)
    throw CannotInitialize("first window carries no traffic");
  return EstimatorState{0, first_window.chi, first_window.theta, std::nullopt};
}

inline EstimatorState update(const EstimatorState& state, const WindowStats& window,
                             const StepSchedule& schedule) {
  if (window.n_requests == 0) throw DomainError("cannot update from a zero-traffic window");
  const double eta = step_size(schedule, state.iteration + 1);
  EstimatorState next = state;
  next.iteration = state.iteration + 1;
  next.xi_hat = detail::convex_step(state.xi_hat, window.chi, eta);
  next.beta_hat = detail::convex_step(state.beta_hat, window.theta, eta);
  return next;
}

inline TimeoutSolution recommend(const EstimatorState& state, const TunerConfig& config) {
  const ModelParams params{config.n_users, state.beta_hat, state.xi_hat};
  try {
    return solve_timeout(params, config.target_eps, config.solver_policy);
  } catch (const InfeasibleTarget& e) {
    throw InfeasibleTarget(std::string(e.what()) + " (iteration " + std::to_string(state.iteration) +
                               ", xi_hat=" + detail::num(state.xi_hat) +
                               ", beta_hat=" + detail::num(state.beta_hat) + ")",
                           e.bound());
  }
}

inline bool should_publish(const EstimatorState& state, double new_timeout_s, double publish_delta_s) {
  if (!state.last_published_timeout_s) return true;
  return std::fabs(new_timeout_s - *state.last_published_timeout_s) >= publish_delta_s;
}

/// What a sink receives on each publish.
struct Publication {
  std::uint64_t iteration = 0;
  double window_end_ts = 0.0;
  TimeoutSolution solution;
};

/// Throws to signal that delivery failed.
using PublishSink = std::function<void(const Publication&)>;

struct IterationRecord {
  std::uint64_t iteration = 0;
  double window_end_ts = 0.0;
  double chi = 0.0;
  double theta = 0.0;
  double xi_hat = 0.0;
  double beta_hat = 0.0;
  std::optional<double> timeout_s;  // absent when the target was infeasible
  std::optional<Expression> expression;
  bool published = false;
  std::optional<std::string> error;
};

struct TunerReport {
  std::vector<IterationRecord> iterations;
  std::uint64_t skipped_windows = 0;
  std::uint64_t publish_failures = 0;
  std::uint64_t publishes = 0;
};

/// Drives the loop one window at a time so callers can stream windows in.
class Tuner {
 public:
  Tuner(TunerConfig config, PublishSink sink) : config_(std::move(config)), sink_(std::move(sink)) {
    validate(config_);
  }

  /// Feeds one window; returns the iteration record, or nullopt for a
  /// skipped zero-traffic window.
  std::optional<IterationRecord> observe(const WindowStats& window) {
    if (window.n_requests == 0) {
      ++report_.skipped_windows;
      return std::nullopt;
    }
    state_ = state_ ? update(*state_, window, config_.schedule) : init_state(window);

    IterationRecord rec;
    rec.iteration = state_->iteration;
    rec.window_end_ts = window.window_end_ts();
    rec.chi = window.chi;
    rec.theta = window.theta;
    rec.xi_hat = state_->xi_hat;
    rec.beta_hat = state_->beta_hat;

    try {
      const TimeoutSolution sol = recommend(*state_, config_);
      rec.timeout_s = sol.timeout_s;
      rec.expression = sol.expression;
      if (should_publish(*state_, sol.timeout_s, config_.publish_delta_s)) {
        try {
          if (sink_) sink_(Publication{rec.iteration, rec.window_end_ts, sol});
          state_->last_published_timeout_s = sol.timeout_s;
          rec.published = true;
          ++report_.publishes;
        } catch (const std::exception& e) {
          rec.error = std::string("publish failed: ") + e.what();
          ++report_.publish_failures;
        }
      }
    } catch (const InfeasibleTarget& e) {
      rec.error = e.what();
    }

    report_.iterations.push_back(rec);
    return rec;
  }

  bool initialized() const { return state_.has_value(); }
  const std::optional<EstimatorState>& state() const { return state_; }

  /// Throws CannotInitialize if no window carried traffic.
  TunerReport finish() const {
    if (!state_) throw CannotInitialize("no window with traffic in the input stream");
    return report_;
  }

 private:
  TunerConfig config_;
  PublishSink sink_;
  std::optional<EstimatorState> state_;
  TunerReport report_;
};

template <typename WindowRange>
TunerReport run_tuner(const WindowRange& windows, const TunerConfig& config, PublishSink sink) {
  Tuner tuner(config, std::move(sink));
  for (const WindowStats& w : windows) tuner.observe(w);
  return tuner.finish();
}

}  // namespace idletune
