#pragma once

// Line-delimited JSON renderings of solver and tuner results.

#include "json.hpp"

#include "idletune/estimator.hpp"
#include "idletune/failure_model.hpp"

namespace idletune {

inline nlohmann::ordered_json to_json(const TimeoutSolution& s) {
  nlohmann::ordered_json j;
  j["timeout_s"] = s.timeout_s;
  j["expression"] = to_string(s.expression);
  j["feasibility_bound"] = s.feasibility_bound;
  j["target_eps"] = s.target_eps;
  return j;
}

inline nlohmann::ordered_json to_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["window_end_ts"] = r.window_end_ts;
  j["chi"] = r.chi;
  j["theta"] = r.theta;
  j["xi_hat"] = r.xi_hat;
  j["beta_hat"] = r.beta_hat;
  j["timeout_s"] = r.timeout_s ? nlohmann::ordered_json(*r.timeout_s) : nlohmann::ordered_json();
  j["published"] = r.published;
  if (r.expression) j["expression"] = to_string(*r.expression);
  if (r.error) j["error"] = *r.error;
  return j;
}

inline nlohmann::ordered_json to_json(const Publication& p) {
  nlohmann::ordered_json j;
  j["iteration"] = p.iteration;
  j["window_end_ts"] = p.window_end_ts;
  j["timeout_s"] = p.solution.timeout_s;
  j["expression"] = to_string(p.solution.expression);
  j["target_eps"] = p.solution.target_eps;
  return j;
}

}  // namespace idletune
