#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "idletune/estimator.hpp"

namespace idletune {
namespace {

WindowStats win(double chi, double theta, std::uint64_t n = 100, double start = 0.0) {
  WindowStats w;
  w.window_start_ts = start;
  w.window_s = 600.0;
  w.n_requests = n;
  w.n_marked = static_cast<std::uint64_t>(std::llround(chi * static_cast<double>(n)));
  w.chi = chi;
  w.theta = theta;
  w.zero_traffic = n == 0;
  return w;
}

WindowStats empty_window(double start = 0.0) { return win(0.0, 0.0, 0, start); }

TunerConfig row2_config() {
  TunerConfig c;
  c.window_s = 600.0;
  c.target_eps = 0.1;
  c.n_users = 150;
  c.publish_delta_s = 5.0;
  return c;
}

TEST(StepSize, Values) {
  EXPECT_EQ(step_size(StepSchedule::harmonic(), 0), 1.0);
  EXPECT_EQ(step_size(StepSchedule::harmonic(), 1), 0.5);
  EXPECT_DOUBLE_EQ(step_size(StepSchedule::harmonic(), 9), 0.1);
  EXPECT_EQ(step_size(StepSchedule::power(0.7), 0), 1.0);
  EXPECT_DOUBLE_EQ(step_size(StepSchedule::power(0.7), 9), std::pow(10.0, -0.7));
  EXPECT_EQ(step_size(StepSchedule::constant(0.2), 12345), 0.2);
}

TEST(StepSize, RejectsSchedulesOutsideTheirRange) {
  EXPECT_THROW(StepSchedule::power(0.5), DomainError);
  EXPECT_THROW(StepSchedule::power(1.1), DomainError);
  EXPECT_THROW(StepSchedule::constant(0.0), DomainError);
  EXPECT_THROW(StepSchedule::constant(1.5), DomainError);
}

TEST(StepSize, DecayingSchedulesSatisfyConvergenceConditions) {
  constexpr std::uint64_t kLast = 1000000;
  for (const StepSchedule s : {StepSchedule::harmonic(), StepSchedule::power(0.7), StepSchedule::power(1.0)}) {
    double sum = 0.0;
    for (std::uint64_t n = 0; n <= kLast; ++n) {
      const double eta = step_size(s, n);
      ASSERT_GT(eta, 0.0);
      ASSERT_LE(eta, 1.0);
      sum += eta;
    }
    EXPECT_LT(step_size(s, kLast), 1e-4 * step_size(s, 0));
    EXPECT_GT(sum, 13.0);
  }
}

TEST(StepSize, ConstantDoesNotDecay) {
  const StepSchedule s = StepSchedule::constant(0.05);
  EXPECT_EQ(step_size(s, 1000000), step_size(s, 0));
}

TEST(InitState, CopiesFirstObservation) {
  const EstimatorState s = init_state(win(0.4, 0.001));
  EXPECT_EQ(s.iteration, 0u);
  EXPECT_EQ(s.xi_hat, 0.4);
  EXPECT_EQ(s.beta_hat, 0.001);
  EXPECT_FALSE(s.last_published_timeout_s);

  const EstimatorState z = init_state(win(0.0, 0.002));
  EXPECT_EQ(z.xi_hat, 0.0);
  EXPECT_EQ(z.beta_hat, 0.002);

  EXPECT_THROW(init_state(empty_window()), CannotInitialize);
}

TEST(InitState, EqualsOneHarmonicStepFromZero) {
  const WindowStats w = win(0.37, 0.0042);
  const EstimatorState from_zero{0, 0.0, 0.0, std::nullopt};
  const double eta0 = step_size(StepSchedule::harmonic(), 0);
  EXPECT_EQ(from_zero.xi_hat + eta0 * (w.chi - from_zero.xi_hat), init_state(w).xi_hat);
  EXPECT_EQ(from_zero.beta_hat + eta0 * (w.theta - from_zero.beta_hat), init_state(w).beta_hat);
}

TEST(Update, HandEvaluatedStep) {
  const EstimatorState s{0, 0.4, 0.001, std::nullopt};
  const EstimatorState next = update(s, win(0.2, 0.003), StepSchedule::harmonic());
  EXPECT_EQ(next.iteration, 1u);
  EXPECT_DOUBLE_EQ(next.xi_hat, 0.3);
  EXPECT_DOUBLE_EQ(next.beta_hat, 0.002);
}

TEST(Update, FixedPoint) {
  const EstimatorState s{4, 0.25, 0.003, 12.0};
  const EstimatorState next = update(s, win(0.25, 0.003), StepSchedule::harmonic());
  EXPECT_EQ(next.iteration, 5u);
  EXPECT_EQ(next.xi_hat, 0.25);
  EXPECT_EQ(next.beta_hat, 0.003);
  EXPECT_EQ(next.last_published_timeout_s, 12.0);
}

TEST(Update, ConstantObservationsStayPut) {
  EstimatorState s = init_state(win(0.3, 0.01));
  for (int i = 0; i < 20; ++i) {
    s = update(s, win(0.3, 0.01), StepSchedule::harmonic());
    EXPECT_EQ(s.xi_hat, 0.3);
  }
}

TEST(Update, RejectsZeroTraffic) {
  EXPECT_THROW(update(init_state(win(0.3, 0.01)), empty_window(), StepSchedule::harmonic()), DomainError);
}

TEST(Update, HarmonicIsRunningMean) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int seq = 0; seq < 100; ++seq) {
    double sum_chi = 0.0;
    double sum_theta = 0.0;
    std::optional<EstimatorState> s;
    for (int i = 1; i <= 50; ++i) {
      const WindowStats w = win(u(rng), 0.05 * u(rng) + 1e-6);
      sum_chi += w.chi;
      sum_theta += w.theta;
      s = s ? update(*s, w, StepSchedule::harmonic()) : init_state(w);
      const double mean_chi = sum_chi / i;
      const double mean_theta = sum_theta / i;
      ASSERT_LE(std::fabs(s->xi_hat - mean_chi), 1e-12 * mean_chi);
      ASSERT_LE(std::fabs(s->beta_hat - mean_theta), 1e-12 * mean_theta);
    }
  }
}

TEST(Update, EstimateStaysWithinObservedRange) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const StepSchedule sched : {StepSchedule::harmonic(), StepSchedule::power(0.6), StepSchedule::constant(0.3),
                                   StepSchedule::constant(1.0)}) {
    for (int seq = 0; seq < 50; ++seq) {
      const double lo = 0.5 * u(rng);
      const double hi = lo + 0.5 * u(rng);
      std::uniform_real_distribution<double> obs(lo, hi);
      EstimatorState s = init_state(win(obs(rng), 0.01));
      double seen_lo = s.xi_hat, seen_hi = s.xi_hat;
      for (int i = 0; i < 40; ++i) {
        const WindowStats w = win(obs(rng), 0.01);
        seen_lo = std::min(seen_lo, w.chi);
        seen_hi = std::max(seen_hi, w.chi);
        s = update(s, w, sched);
        ASSERT_GE(s.xi_hat, seen_lo);
        ASSERT_LE(s.xi_hat, seen_hi);
      }
    }
  }
}

TEST(Recommend, TableRows) {
  const TimeoutSolution row2 = recommend(EstimatorState{3, 0.1338, 1.39e-3, std::nullopt}, row2_config());
  EXPECT_NEAR(row2.timeout_s / 87.03, 1.0, 0.01);
  EXPECT_EQ(row2.expression, Expression::Exact);

  TunerConfig c = row2_config();
  c.n_users = 10000;
  const TimeoutSolution row3 = recommend(EstimatorState{3, 0.5887, 0.06, std::nullopt}, c);
  EXPECT_NEAR(row3.timeout_s / 0.0065, 1.0, 0.03);
  EXPECT_EQ(row3.expression, Expression::LargeN);
}

TEST(Recommend, ZeroXiIsInfeasibleAndAnnotated) {
  try {
    recommend(EstimatorState{7, 0.0, 1e-3, std::nullopt}, row2_config());
    FAIL() << "expected InfeasibleTarget";
  } catch (const InfeasibleTarget& e) {
    EXPECT_EQ(e.bound(), 1.0);
    EXPECT_NE(std::string(e.what()).find("iteration 7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("xi_hat"), std::string::npos);
  }
}

TEST(ShouldPublish, Threshold) {
  EstimatorState s;
  EXPECT_TRUE(should_publish(s, 60.0, 5.0));
  s.last_published_timeout_s = 60.0;
  EXPECT_FALSE(should_publish(s, 63.0, 5.0));
  EXPECT_TRUE(should_publish(s, 65.0, 5.0));
  EXPECT_TRUE(should_publish(s, 55.0, 5.0));
  EXPECT_TRUE(should_publish(s, 60.0, 0.0));
}

TEST(RunTuner, SingleWindow) {
  std::vector<Publication> published;
  const TunerReport r = run_tuner(std::vector{win(0.1338, 1.39e-3)}, row2_config(),
                                  [&](const Publication& p) { published.push_back(p); });
  ASSERT_EQ(r.iterations.size(), 1u);
  EXPECT_TRUE(r.iterations[0].published);
  EXPECT_EQ(r.publishes, 1u);
  ASSERT_EQ(published.size(), 1u);
  EXPECT_EQ(published[0].solution.timeout_s, *r.iterations[0].timeout_s);
  EXPECT_EQ(published[0].window_end_ts, 600.0);
}

TEST(RunTuner, EmptyStreamCannotInitialize) {
  EXPECT_THROW(run_tuner(std::vector<WindowStats>{}, row2_config(), nullptr), CannotInitialize);
  EXPECT_THROW(run_tuner(std::vector{empty_window(), empty_window(600)}, row2_config(), nullptr),
               CannotInitialize);
}

TEST(RunTuner, ZeroTrafficWindowsAreSkipped) {
  const std::vector<WindowStats> windows{win(0.2, 0.01), empty_window(600), empty_window(1200),
                                         win(0.4, 0.03, 100, 1800)};
  const TunerReport r = run_tuner(windows, row2_config(), nullptr);
  EXPECT_EQ(r.skipped_windows, 2u);
  ASSERT_EQ(r.iterations.size(), 2u);
  EXPECT_EQ(r.iterations[1].iteration, 1u);
  EXPECT_DOUBLE_EQ(r.iterations[1].xi_hat, 0.3);
  EXPECT_DOUBLE_EQ(r.iterations[1].beta_hat, 0.02);
  EXPECT_EQ(r.iterations[1].window_end_ts, 2400.0);
}

TEST(RunTuner, StableTimeoutsPublishOnce) {
  std::vector<WindowStats> windows(30, win(0.1338, 1.39e-3));
  TunerConfig c = row2_config();
  c.publish_delta_s = 1e9;
  const TunerReport r = run_tuner(windows, c, nullptr);
  EXPECT_EQ(r.publishes, 1u);
  EXPECT_TRUE(r.iterations.front().published);

  c.publish_delta_s = 1.0;
  EXPECT_EQ(run_tuner(windows, c, nullptr).publishes, 1u);
}

TEST(RunTuner, InfeasibleWindowsAreNotFatal) {
  // chi = 0 first: nothing to recommend until marked requests show up.
  const std::vector<WindowStats> windows{win(0.0, 1e-3), win(0.2676, 2.78e-3)};
  const TunerReport r = run_tuner(windows, row2_config(), nullptr);
  ASSERT_EQ(r.iterations.size(), 2u);
  EXPECT_FALSE(r.iterations[0].timeout_s);
  EXPECT_TRUE(r.iterations[0].error);
  EXPECT_FALSE(r.iterations[0].published);
  ASSERT_TRUE(r.iterations[1].timeout_s);
  EXPECT_TRUE(r.iterations[1].published);
}

TEST(RunTuner, FailedPublishIsRetriedNextWindow) {
  int calls = 0;
  auto flaky = [&](const Publication&) {
    if (++calls == 1) throw std::runtime_error("connection refused");
  };
  const std::vector<WindowStats> windows(3, win(0.1338, 1.39e-3));
  const TunerReport r = run_tuner(windows, row2_config(), flaky);
  EXPECT_EQ(r.publish_failures, 1u);
  EXPECT_EQ(r.publishes, 1u);
  EXPECT_FALSE(r.iterations[0].published);
  ASSERT_TRUE(r.iterations[0].error);
  EXPECT_NE(r.iterations[0].error->find("connection refused"), std::string::npos);
  EXPECT_TRUE(r.iterations[1].published);
  EXPECT_FALSE(r.iterations[2].published);
}

TEST(RunTuner, PublishCountNonincreasingInDelta) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> chi(0.1, 0.3);
  std::uniform_real_distribution<double> theta(1e-3, 3e-3);
  std::vector<WindowStats> windows;
  for (int i = 0; i < 200; ++i) windows.push_back(win(chi(rng), theta(rng)));
  // Constant steps keep the timeout moving so every delta matters.
  TunerConfig c = row2_config();
  c.schedule = StepSchedule::constant(0.5);
  std::uint64_t prev = UINT64_MAX;
  for (double delta : {0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 1e6}) {
    c.publish_delta_s = delta;
    const std::uint64_t n = run_tuner(windows, c, nullptr).publishes;
    EXPECT_LE(n, prev) << "delta=" << delta;
    prev = n;
  }
  EXPECT_EQ(prev, 1u);
}

TEST(RunTuner, Deterministic) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.05, 0.5);
  std::vector<WindowStats> windows;
  for (int i = 0; i < 50; ++i) windows.push_back(win(u(rng), 0.01 * u(rng)));
  const TunerReport a = run_tuner(windows, row2_config(), nullptr);
  const TunerReport b = run_tuner(windows, row2_config(), nullptr);
  ASSERT_EQ(a.iterations.size(), b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    EXPECT_EQ(a.iterations[i].xi_hat, b.iterations[i].xi_hat);
    EXPECT_EQ(a.iterations[i].timeout_s, b.iterations[i].timeout_s);
    EXPECT_EQ(a.iterations[i].published, b.iterations[i].published);
  }
}

TEST(TunerConfig, Validation) {
  TunerConfig c = row2_config();
  c.target_eps = 1.0;
  EXPECT_THROW(Tuner(c, nullptr), DomainError);
  c = row2_config();
  c.window_s = 0.0;
  EXPECT_THROW(Tuner(c, nullptr), DomainError);
  c = row2_config();
  c.publish_delta_s = -1.0;
  EXPECT_THROW(Tuner(c, nullptr), DomainError);
}

}  // namespace
}  // namespace idletune
