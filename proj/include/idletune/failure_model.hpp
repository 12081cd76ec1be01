#pragma once

// Closed-form model of idle-connection drop failures.
//
// N users each fire their first request after an exponential delay with
// rate beta; a request is "marked" (produces an LDAP bind) with probability
// xi. A pooled connection is dropped when no marked request reaches it
// within the directory's idle timeout t, which happens with probability
//
//     P(E) = (1 - xi * (1 - exp(-beta * t)))^N
//
// Everything raised to the N-th power is evaluated in the log domain so
// that populations of 10^5 users and more neither overflow nor underflow
// prematurely.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>

#include "idletune/errors.hpp"

namespace idletune {

struct ModelParams {
  std::uint64_t n_users = 1;  // N
  double beta = 0.0;          // per-user request rate, 1/s
  double xi = 0.0;            // probability that a request is marked
};

inline void validate(const ModelParams& p) {
  if (p.n_users < 1) throw DomainError("n_users must be at least 1");
  if (!(p.beta > 0.0) || !std::isfinite(p.beta))
    throw DomainError("beta must be positive and finite");
  if (!(p.xi >= 0.0 && p.xi <= 1.0)) throw DomainError("xi must lie in [0, 1]");
}

enum class Expression { Exact, LargeN };

inline std::string_view to_string(Expression e) {
  return e == Expression::Exact ? "Exact" : "LargeN";
}

struct SolverPolicy {
  enum class Mode { Auto, ForceExact, ForceLargeN };
  Mode mode = Mode::Auto;
  // Auto uses the large-N approximation strictly above this population.
  std::uint64_t large_n_threshold = 500;
};

struct TimeoutSolution {
  double timeout_s = 0.0;
  double target_eps = 0.0;
  Expression expression = Expression::Exact;
  double feasibility_bound = 0.0;
};

namespace detail {

// log(n!) - log(sqrt(2 pi n) (n/e)^n), tabulated for n <= 15.
inline constexpr std::array<double, 16> kStirlingErrorTable = {
    0.0,
    0.08106146679532725821967026,
    0.04134069595540929409382208,
    0.02767792568499833914878929,
    0.02079067210376509311152277,
    0.01664469118982119216319487,
    0.01387612882307074799874573,
    0.01189670994589177009505572,
    0.01041126526197209649747857,
    0.009255462182712732917728637,
    0.008330563433362871256469319,
    0.007573675487951840794972024,
    0.006942840107209529865664153,
    0.006408994188004207068439631,
    0.005951370112758847735624416,
    0.00555473355196280137103869,
};

inline double stirling_error(std::uint64_t n) {
  if (n < kStirlingErrorTable.size()) return kStirlingErrorTable[n];
  constexpr double S0 = 1.0 / 12.0;
  constexpr double S1 = 1.0 / 360.0;
  constexpr double S2 = 1.0 / 1260.0;
  constexpr double S3 = 1.0 / 1680.0;
  constexpr double S4 = 1.0 / 1188.0;
  const double nd = static_cast<double>(n);
  const double nn = nd * nd;
  if (n > 500) return (S0 - S1 / nn) / nd;
  if (n > 80) return (S0 - (S1 - S2 / nn) / nn) / nd;
  if (n > 35) return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nd;
  return (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nd;
}

// Deviance term x log(x/np) + np - x, computed without cancellation when x
// is close to np.
inline double binomial_deviance(double x, double np) {
  if (std::fabs(x - np) < 0.1 * (x + np)) {
    double v = (x - np) / (x + np);
    double s = (x - np) * v;
    if (std::fabs(s) < std::numeric_limits<double>::min()) return s;
    double ej = 2.0 * x * v;
    v *= v;
    for (int j = 1; j < 1000; ++j) {
      ej *= v;
      const double next = s + ej / (2 * j + 1);
      if (next == s) return next;
      s = next;
    }
  }
  return x * std::log(x / np) + np - x;
}

// Saddle-point binomial pmf; p and q = 1 - p are passed separately so that
// callers can supply each at full precision.
inline double binomial_pmf(std::uint64_t k, std::uint64_t n, double p, double q) {
  if (p == 0.0) return k == 0 ? 1.0 : 0.0;
  if (q == 0.0) return k == n ? 1.0 : 0.0;
  const double nd = static_cast<double>(n);
  if (k == 0) {
    const double lc = p < 0.1 ? -binomial_deviance(nd, nd * q) - nd * p : nd * std::log(q);
    return std::exp(lc);
  }
  if (k == n) {
    const double lc = q < 0.1 ? -binomial_deviance(nd, nd * p) - nd * q : nd * std::log(p);
    return std::exp(lc);
  }
  const double kd = static_cast<double>(k);
  const double lc = stirling_error(n) - stirling_error(k) - stirling_error(n - k) -
                    binomial_deviance(kd, nd * p) - binomial_deviance(nd - kd, nd * q);
  const double lf = std::log(2.0 * std::numbers::pi) + std::log(kd) + std::log1p(-kd / nd);
  return std::exp(lc - 0.5 * lf);
}

inline void require_probability(double eps, bool allow_one) {
  const bool ok = eps > 0.0 && (allow_one ? eps <= 1.0 : eps < 1.0);
  if (!ok) throw DomainError("target failure probability must lie in (0, 1)");
}

}  // namespace detail

/// Birth rate out of state k of the pure-birth chain: (N - k) * beta.
inline double birth_rate(const ModelParams& params, std::uint64_t k) {
  validate(params);
  if (k > params.n_users) throw DomainError("state index outside chain");
  return static_cast<double>(params.n_users - k) * params.beta;
}

/// Probability that exactly k of the N users have fired by time t, i.e. the
/// binomial pmf with success probability 1 - exp(-beta t).
inline double state_probability(const ModelParams& params, std::uint64_t k, double t) {
  validate(params);
  if (k > params.n_users) throw DomainError("state index outside chain");
  if (!(t >= 0.0)) throw DomainError("time must be nonnegative");
  const double bt = params.beta * t;
  return detail::binomial_pmf(k, params.n_users, -std::expm1(-bt), std::exp(-bt));
}

/// Probability that no marked request arrives within the idle timeout.
inline double failure_probability(const ModelParams& params, double timeout_s) {
  validate(params);
  if (!(timeout_s >= 0.0)) throw DomainError("timeout must be nonnegative");
  const double fired = -std::expm1(-params.beta * timeout_s);
  const double log_p = static_cast<double>(params.n_users) * std::log1p(-params.xi * fired);
  return std::exp(log_p);
}

/// (1 - xi)^N: the infimum over all timeouts of the failure probability.
inline double feasibility_bound(const ModelParams& params) {
  validate(params);
  return std::exp(static_cast<double>(params.n_users) * std::log1p(-params.xi));
}

namespace detail {

[[noreturn]] inline void throw_infeasible(const ModelParams& params, double eps, double bound) {
  throw InfeasibleTarget("target eps=" + detail::num(eps) + " is not above the feasibility bound " +
                             detail::num(bound) + " for N=" + std::to_string(params.n_users) +
                             ", xi=" + detail::num(params.xi) +
                             "; raise eps, raise xi or grow N",
                         bound);
}

}  // namespace detail

/// Inverts the closed form for the timeout that yields failure probability eps.
inline double solve_timeout_exact(const ModelParams& params, double eps) {
  validate(params);
  detail::require_probability(eps, false);
  const double bound = feasibility_bound(params);
  if (params.xi == 0.0 || eps <= bound) detail::throw_infeasible(params, eps, bound);

  // 1 - eps^(1/N), then the fraction of users that must have fired.
  const double needed = -std::expm1(std::log(eps) / static_cast<double>(params.n_users));
  const double fired = needed / params.xi;
  if (!(fired < 1.0)) detail::throw_infeasible(params, eps, bound);
  return -std::log1p(-fired) / params.beta;
}

/// First-order expansion of the exact solver for large N:
/// -ln(eps) / (beta * xi * N).
inline double solve_timeout_largeN(const ModelParams& params, double eps) {
  validate(params);
  detail::require_probability(eps, true);
  if (params.xi == 0.0) detail::throw_infeasible(params, eps, feasibility_bound(params));
  return -std::log(eps) / (params.beta * params.xi * static_cast<double>(params.n_users));
}

inline TimeoutSolution solve_timeout(const ModelParams& params, double eps,
                                     const SolverPolicy& policy = {}) {
  validate(params);
  detail::require_probability(eps, false);

  Expression expr = Expression::Exact;
  switch (policy.mode) {
    case SolverPolicy::Mode::Auto:
      expr = params.n_users > policy.large_n_threshold ? Expression::LargeN : Expression::Exact;
      break;
    case SolverPolicy::Mode::ForceExact:
      expr = Expression::Exact;
      break;
    case SolverPolicy::Mode::ForceLargeN:
      expr = Expression::LargeN;
      break;
  }

  TimeoutSolution sol;
  sol.target_eps = eps;
  sol.expression = expr;
  sol.feasibility_bound = feasibility_bound(params);
  if (params.xi == 0.0 || eps <= sol.feasibility_bound)
    detail::throw_infeasible(params, eps, sol.feasibility_bound);
  sol.timeout_s = expr == Expression::Exact ? solve_timeout_exact(params, eps)
                                            : solve_timeout_largeN(params, eps);
  return sol;
}

}  // namespace idletune
