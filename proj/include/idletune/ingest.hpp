#pragma once

// Event-log parsing and tumbling-window aggregation.
//
// Input is one JSON object per line: {"ts": <seconds>, "kind": "request"|"bind"}.
// A bind is a marked request and counts towards both n_requests and n_marked.

#include <cmath>
#include <cstdint>
#include <istream>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "idletune/errors.hpp"
#include "idletune/window.hpp"

namespace idletune {

enum class EventKind { Request, Bind };

struct Event {
  double ts = 0.0;
  EventKind kind = EventKind::Request;

  friend bool operator==(const Event&, const Event&) = default;
};

inline std::string_view to_string(EventKind k) { return k == EventKind::Bind ? "bind" : "request"; }

inline Event parse_event(std::string_view line, std::size_t line_no = 1) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line_no);
  }
  if (!doc.is_object()) throw ParseError("record is not an object", line_no);

  const auto ts = doc.find("ts");
  if (ts == doc.end() || !ts->is_number()) throw ParseError("missing or non-numeric \"ts\"", line_no);
  const double t = ts->get<double>();
  if (!std::isfinite(t) || t < 0.0) throw ParseError("\"ts\" must be a finite nonnegative number", line_no);

  const auto kind = doc.find("kind");
  if (kind == doc.end() || !kind->is_string()) throw ParseError("missing or non-string \"kind\"", line_no);
  const auto& k = kind->get_ref<const std::string&>();
  if (k == "request") return {t, EventKind::Request};
  if (k == "bind") return {t, EventKind::Bind};
  throw ParseError("unknown event kind \"" + k + "\"", line_no);
}

inline std::string format_event(const Event& e) {
  nlohmann::ordered_json j;
  j["ts"] = e.ts;
  j["kind"] = to_string(e.kind);
  return j.dump();
}

/// Calls fn(event) for every nonblank line of the stream.
template <typename Fn>
void read_events(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_event(line, line_no));
  }
}

inline WindowStats make_window_stats(double window_start_ts, double window_s, std::uint64_t n_users,
                                     std::uint64_t n_requests, std::uint64_t n_marked) {
  WindowStats w;
  w.window_start_ts = window_start_ts;
  w.window_s = window_s;
  w.n_requests = n_requests;
  w.n_marked = n_marked;
  w.zero_traffic = n_requests == 0;
  w.chi = n_requests == 0 ? 0.0 : static_cast<double>(n_marked) / static_cast<double>(n_requests);
  w.theta = static_cast<double>(n_requests) / (static_cast<double>(n_users) * window_s);
  return w;
}

/// Aggregates the events of a single window [start, start + T).
inline WindowStats window_stats(std::span<const Event> events, double window_s, std::uint64_t n_users,
                                double window_start_ts) {
  if (!(window_s > 0.0)) throw DomainError("window length must be positive");
  if (n_users < 1) throw DomainError("n_users must be at least 1");
  const double end = window_start_ts + window_s;
  std::uint64_t marked = 0;
  double prev = window_start_ts;
  for (const Event& e : events) {
    if (e.ts < window_start_ts || e.ts >= end)
      throw SequencingError("event at ts=" + std::to_string(e.ts) + " lies outside the window");
    if (e.ts < prev) throw SequencingError("events within the window are not time-ordered");
    prev = e.ts;
    if (e.kind == EventKind::Bind) ++marked;
  }
  return make_window_stats(window_start_ts, window_s, n_users, events.size(), marked);
}

/// Streaming tumbling-window aggregator anchored at the earliest event.
///
/// Timestamps may step backwards by up to `reorder_tolerance_s`; such events
/// are held in a small reorder buffer and released in time order. Larger
/// regressions are a SequencingError. Every elapsed window is emitted,
/// including zero-traffic ones; finish() flushes the trailing window.
class Windowizer {
 public:
  static constexpr double kDefaultReorderTolerance = 1.0;

  Windowizer(double window_s, std::uint64_t n_users, double reorder_tolerance_s = kDefaultReorderTolerance)
      : window_s_(window_s), n_users_(n_users), tolerance_(reorder_tolerance_s) {
    if (!(window_s_ > 0.0)) throw DomainError("window length must be positive");
    if (n_users_ < 1) throw DomainError("n_users must be at least 1");
  }

  /// Appends any windows completed by this event to `out`.
  void push(const Event& e, std::vector<WindowStats>& out) {
    if (seen_any_ && e.ts < max_ts_ - tolerance_)
      throw SequencingError("timestamp " + std::to_string(e.ts) + " regresses more than " +
                            std::to_string(tolerance_) + " s behind " + std::to_string(max_ts_));
    if (!seen_any_ || e.ts > max_ts_) max_ts_ = e.ts;
    seen_any_ = true;
    pending_.push(Pending{e, seq_++});
    while (!pending_.empty() && pending_.top().event.ts < max_ts_ - tolerance_) {
      release(pending_.top().event, out);
      pending_.pop();
    }
  }

  void finish(std::vector<WindowStats>& out) {
    while (!pending_.empty()) {
      release(pending_.top().event, out);
      pending_.pop();
    }
    if (anchored_) {
      out.push_back(current());
      anchored_ = false;
    }
  }

 private:
  struct Pending {
    Event event;
    std::uint64_t seq;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.event.ts != b.event.ts ? a.event.ts > b.event.ts : a.seq > b.seq;
    }
  };

  WindowStats current() const {
    return make_window_stats(anchor_ + static_cast<double>(index_) * window_s_, window_s_, n_users_, requests_,
                             marked_);
  }

  void release(const Event& e, std::vector<WindowStats>& out) {
    if (!anchored_) {
      anchored_ = true;
      anchor_ = e.ts;
      index_ = 0;
      requests_ = marked_ = 0;
    }
    auto idx = static_cast<std::uint64_t>(std::floor((e.ts - anchor_) / window_s_));
    // Keep the half-open boundary exact despite rounding in the division.
    while (idx > 0 && e.ts < anchor_ + static_cast<double>(idx) * window_s_) --idx;
    while (e.ts >= anchor_ + static_cast<double>(idx + 1) * window_s_) ++idx;
    while (index_ < idx) {
      out.push_back(current());
      ++index_;
      requests_ = marked_ = 0;
    }
    ++requests_;
    if (e.kind == EventKind::Bind) ++marked_;
  }

  double window_s_;
  std::uint64_t n_users_;
  double tolerance_;

  std::priority_queue<Pending, std::vector<Pending>, Later> pending_;
  std::uint64_t seq_ = 0;
  bool seen_any_ = false;
  double max_ts_ = 0.0;

  bool anchored_ = false;
  double anchor_ = 0.0;
  std::uint64_t index_ = 0;
  std::uint64_t requests_ = 0;
  std::uint64_t marked_ = 0;
};

inline std::vector<WindowStats> windowize(std::span<const Event> events, double window_s, std::uint64_t n_users) {
  Windowizer wz(window_s, n_users);
  std::vector<WindowStats> out;
  for (const Event& e : events) wz.push(e, out);
  wz.finish(out);
  return out;
}

inline nlohmann::ordered_json to_json(const WindowStats& w) {
  nlohmann::ordered_json j;
  j["window_start_ts"] = w.window_start_ts;
  j["window_s"] = w.window_s;
  j["n_requests"] = w.n_requests;
  j["n_marked"] = w.n_marked;
  j["chi"] = w.chi;
  j["theta"] = w.theta;
  j["zero_traffic"] = w.zero_traffic;
  return j;
}

}  // namespace idletune
