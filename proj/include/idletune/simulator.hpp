#pragma once

// Stochastic counterparts of the closed-form model:
//
//  * simulate_failure_prob  - Monte Carlo over the once-per-user model,
//                             an independent check on failure_probability.
//  * simulate_system        - event-driven proxy with a pool of child
//                             processes, ProcessLife respawns and a
//                             directory that drops idle connections.
//  * generate_event_log     - synthetic request/bind streams for the tuner.
//
// All randomness comes from substreams of a master seed, so results do not
// depend on how work is split across threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <random>
#include <thread>
#include <vector>

#include "json.hpp"

#include "idletune/errors.hpp"
#include "idletune/failure_model.hpp"
#include "idletune/ingest.hpp"

namespace idletune {

using Engine = std::mt19937_64;

/// Independent engine for substream `stream` of `seed`.
inline Engine substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Engine(seq);
}

struct SimResult {
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;
  double p_hat = 0.0;
  double std_err = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr std::uint64_t kTrialsPerChunk = 4096;

inline std::uint64_t simulate_chunk(const ModelParams& params, double timeout_s, std::uint64_t trials,
                                    Engine rng) {
  std::exponential_distribution<double> first_request(params.beta);
  std::bernoulli_distribution marked(params.xi);
  std::uint64_t failures = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    bool bound = false;
    for (std::uint64_t u = 0; u < params.n_users && !bound; ++u) {
      if (first_request(rng) < timeout_s && marked(rng)) bound = true;
    }
    if (!bound) ++failures;
  }
  return failures;
}

}  // namespace detail

/// Each trial: every user draws the time of its first request; a request
/// inside [0, timeout) is marked with probability xi. The trial fails when
/// no marked request arrived.
inline SimResult simulate_failure_prob(const ModelParams& params, double timeout_s, std::uint64_t trials,
                                       std::uint64_t seed, unsigned threads = 0) {
  validate(params);
  if (trials < 1) throw DomainError("trials must be at least 1");
  if (!(timeout_s >= 0.0)) throw DomainError("timeout must be nonnegative");

  const std::uint64_t chunks = (trials + detail::kTrialsPerChunk - 1) / detail::kTrialsPerChunk;
  std::vector<std::uint64_t> failures(chunks, 0);
  auto run_chunk = [&](std::uint64_t c) {
    const std::uint64_t first = c * detail::kTrialsPerChunk;
    const std::uint64_t count = std::min(detail::kTrialsPerChunk, trials - first);
    failures[c] = detail::simulate_chunk(params, timeout_s, count, substream(seed, c));
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, chunks));
  if (threads <= 1) {
    for (std::uint64_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < threads; ++i)
      pool.emplace_back([&] {
        for (std::uint64_t c; (c = next.fetch_add(1)) < chunks;) run_chunk(c);
      });
  }

  SimResult r;
  r.trials = trials;
  r.seed = seed;
  for (std::uint64_t f : failures) r.failures += f;
  r.p_hat = static_cast<double>(r.failures) / static_cast<double>(trials);
  r.std_err = std::sqrt(r.p_hat * (1.0 - r.p_hat) / static_cast<double>(trials));
  return r;
}

struct SystemConfig {
  enum class Dispatch { UniformRandom, RoundRobin };

  std::uint64_t n_users = 1;
  double beta = 0.0;
  double xi = 0.0;
  std::uint64_t n_processes = 1;
  std::uint64_t process_life = 0;  // 0: processes never respawn
  double idle_timeout_s = 0.0;     // 0: the directory never drops a connection
  double duration_s = 0.0;
  Dispatch dispatch = Dispatch::UniformRandom;
};

inline void validate(const SystemConfig& c) {
  validate(ModelParams{c.n_users, c.beta, c.xi});
  if (c.n_processes < 1) throw DomainError("n_processes must be at least 1");
  if (!(c.idle_timeout_s >= 0.0)) throw DomainError("idle timeout must be nonnegative");
  if (!(c.duration_s > 0.0) || !std::isfinite(c.duration_s)) throw DomainError("duration must be positive");
}

struct SystemReport {
  std::uint64_t total_requests = 0;
  std::uint64_t marked_requests = 0;
  std::uint64_t failed_binds = 0;
  std::uint64_t respawns = 0;
  double failure_rate = 0.0;
  bool no_marked = false;
  // Idle gaps seen by connections at the moment of a marked use.
  std::optional<double> gap_min;
  std::optional<double> gap_median;
  std::optional<double> gap_max;
};

inline SystemReport simulate_system(const SystemConfig& config, std::uint64_t seed) {
  validate(config);

  Engine arrivals = substream(seed, 0);
  Engine routing = substream(seed, 1);
  Engine marking = substream(seed, 2);
  std::exponential_distribution<double> gap(config.beta);
  std::uniform_int_distribution<std::uint64_t> pick(0, config.n_processes - 1);
  std::bernoulli_distribution marked(config.xi);

  struct Arrival {
    double t;
    std::uint64_t user;
    bool operator>(const Arrival& o) const { return t != o.t ? t > o.t : user > o.user; }
  };
  std::priority_queue<Arrival, std::vector<Arrival>, std::greater<>> queue;
  for (std::uint64_t u = 0; u < config.n_users; ++u) queue.push({gap(arrivals), u});

  std::vector<double> last_use(config.n_processes, 0.0);
  std::vector<std::uint64_t> served(config.n_processes, 0);
  std::vector<double> gaps;
  std::uint64_t next_rr = 0;
  SystemReport rep;

  while (!queue.empty() && queue.top().t < config.duration_s) {
    const Arrival a = queue.top();
    queue.pop();
    ++rep.total_requests;

    std::uint64_t p = 0;
    if (config.dispatch == SystemConfig::Dispatch::UniformRandom) {
      p = pick(routing);
    } else {
      p = next_rr;
      next_rr = (next_rr + 1) % config.n_processes;
    }

    if (marked(marking)) {
      ++rep.marked_requests;
      const double idle = a.t - last_use[p];
      gaps.push_back(idle);
      // A dropped connection fails this bind and is re-established.
      if (config.idle_timeout_s > 0.0 && idle > config.idle_timeout_s) ++rep.failed_binds;
      last_use[p] = a.t;
    }

    if (config.process_life > 0 && ++served[p] == config.process_life) {
      served[p] = 0;
      last_use[p] = a.t;
      ++rep.respawns;
    }

    queue.push({a.t + gap(arrivals), a.user});
  }

  rep.no_marked = rep.marked_requests == 0;
  rep.failure_rate =
      rep.no_marked ? 0.0 : static_cast<double>(rep.failed_binds) / static_cast<double>(rep.marked_requests);
  if (!gaps.empty()) {
    const auto [lo, hi] = std::minmax_element(gaps.begin(), gaps.end());
    rep.gap_min = *lo;
    rep.gap_max = *hi;
    const auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
    std::nth_element(gaps.begin(), mid, gaps.end());
    double median = *mid;
    if (gaps.size() % 2 == 0) median = 0.5 * (median + *std::max_element(gaps.begin(), mid));
    rep.gap_median = median;
  }
  return rep;
}

/// N independent Poisson request streams at rate beta, merged in time order;
/// each request is a bind with probability xi.
inline std::vector<Event> generate_event_log(const ModelParams& params, double duration_s, std::uint64_t seed) {
  validate(params);
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) throw DomainError("duration must be positive");

  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(
      std::min(1e8, static_cast<double>(params.n_users) * params.beta * duration_s * 1.1 + 16.0)));
  std::exponential_distribution<double> gap(params.beta);
  std::bernoulli_distribution marked(params.xi);
  for (std::uint64_t u = 0; u < params.n_users; ++u) {
    Engine rng = substream(seed, u);
    for (double t = gap(rng); t < duration_s; t += gap(rng))
      events.push_back({t, marked(rng) ? EventKind::Bind : EventKind::Request});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.ts < b.ts; });
  return events;
}

inline nlohmann::ordered_json to_json(const SimResult& r) {
  nlohmann::ordered_json j;
  j["trials"] = r.trials;
  j["failures"] = r.failures;
  j["p_hat"] = r.p_hat;
  j["std_err"] = r.std_err;
  j["seed"] = r.seed;
  return j;
}

inline nlohmann::ordered_json to_json(const SystemReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["total_requests"] = r.total_requests;
  j["marked_requests"] = r.marked_requests;
  j["failed_binds"] = r.failed_binds;
  j["failure_rate"] = r.failure_rate;
  j["no_marked"] = r.no_marked;
  j["respawns"] = r.respawns;
  j["gap_min"] = opt(r.gap_min);
  j["gap_median"] = opt(r.gap_median);
  j["gap_max"] = opt(r.gap_max);
  return j;
}

}  // namespace idletune
