#pragma once

// Publish targets for recommended idle timeouts. None of them talks to a
// directory server directly; LDIF output is meant to be applied with
// ldapmodify, webhooks hand the value to whatever automation sits behind.

#include <cmath>
#include <fstream>
#include <memory>
#include <ostream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>

#include "httplib.h"

#include "idletune/estimator.hpp"
#include "idletune/records.hpp"

namespace idletune::cli {

class SinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Directory-modify snippet for one recommendation. The timeout is rounded
/// up to whole seconds so the realized failure probability stays at or
/// below the target.
inline std::string ldif_snippet(double timeout_s) {
  const auto secs = static_cast<long long>(std::ceil(timeout_s));
  std::ostringstream os;
  os << "dn: cn=config\n"
     << "changetype: modify\n"
     << "replace: nsslapd-idletimeout\n"
     << "nsslapd-idletimeout: " << secs << "\n";
  return os.str();
}

struct WebhookTarget {
  std::string scheme_host_port;
  std::string path;
};

inline WebhookTarget parse_webhook_url(const std::string& url) {
  static const std::regex re(R"(^(http://[A-Za-z0-9.\-]+(:[0-9]{1,5})?)(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw SinkError("malformed webhook URL: " + url);
  return {m[1].str(), m[3].matched ? m[3].str() : std::string("/")};
}

namespace detail {

class StdoutSink {
 public:
  explicit StdoutSink(std::ostream& out) : out_(&out) {}
  void operator()(const Publication& p) const {
    nlohmann::ordered_json j;
    j["publish"] = to_json(p);
    *out_ << j.dump() << '\n';
  }

 private:
  std::ostream* out_;
};

class FileSink {
 public:
  FileSink(const std::string& path, bool ldif) : path_(path), ldif_(ldif) {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw SinkError("cannot open sink file " + path_);
  }
  void operator()(const Publication& p) {
    std::ofstream f(path_, std::ios::app);
    if (ldif_) {
      if (records_ > 0) f << '\n';
      f << ldif_snippet(p.solution.timeout_s);
    } else {
      f << to_json(p).dump() << '\n';
    }
    f.flush();
    if (!f) throw SinkError("write to " + path_ + " failed");
    ++records_;
  }

 private:
  std::string path_;
  bool ldif_;
  std::size_t records_ = 0;
};

class WebhookSink {
 public:
  explicit WebhookSink(const std::string& url) : target_(parse_webhook_url(url)) {}
  // One attempt per publish; the next window publishes again anyway.
  void operator()(const Publication& p) const {
    httplib::Client client(target_.scheme_host_port);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(10, 0);
    client.set_write_timeout(10, 0);
    auto res = client.Post(target_.path, to_json(p).dump(), "application/json");
    if (!res) throw SinkError("webhook request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw SinkError("webhook returned HTTP " + std::to_string(res->status));
  }

 private:
  WebhookTarget target_;
};

}  // namespace detail

/// Builds a sink from "stdout", "file:PATH", "ldif:PATH" or "webhook:URL".
inline PublishSink make_sink(const std::string& spec, std::ostream& out) {
  auto rest = [&](std::string_view prefix) { return spec.substr(prefix.size()); };
  if (spec == "stdout") return detail::StdoutSink(out);
  if (spec.starts_with("file:") && spec.size() > 5) {
    auto s = std::make_shared<detail::FileSink>(rest("file:"), false);
    return [s](const Publication& p) { (*s)(p); };
  }
  if (spec.starts_with("ldif:") && spec.size() > 5) {
    auto s = std::make_shared<detail::FileSink>(rest("ldif:"), true);
    return [s](const Publication& p) { (*s)(p); };
  }
  if (spec.starts_with("webhook:")) return detail::WebhookSink(rest("webhook:"));
  throw SinkError("unknown sink \"" + spec + "\" (expected stdout, file:PATH, ldif:PATH or webhook:URL)");
}

}  // namespace idletune::cli
