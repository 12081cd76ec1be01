#pragma once

#include <cstdint>

namespace idletune {

/// Empirical observations over one averaging period.
struct WindowStats {
  double window_start_ts = 0.0;
  double window_s = 0.0;         // averaging period T
  std::uint64_t n_requests = 0;  // every request seen
  std::uint64_t n_marked = 0;    // requests that produced a bind
  double chi = 0.0;              // n_marked / n_requests
  double theta = 0.0;            // n_requests / (N * T), requests/s/user
  bool zero_traffic = false;

  double window_end_ts() const { return window_start_ts + window_s; }
};

}  // namespace idletune
