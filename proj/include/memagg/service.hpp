#pragma once

// HTTP front end of the aggregator.
//
//   GET /timemap/{link|json|cdxj}/{uri-r}           aggregated TimeMap
//   GET /timemap/link/{uri-r}?stream=true           progressively streamed
//   GET /timemap/...  + Prefer: respond-async       202 + /job/{id}
//   GET /job/{id}                                   poll an async job
//   GET /timegate/{uri-r}                           501
//   GET /health, GET /config

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "memagg/engine.hpp"
#include "memagg/error.hpp"
#include "memagg/sources.hpp"
#include "memagg/trace.hpp"

namespace memagg::service {

inline constexpr std::string_view kReportHeader = "X-Agg-Report";
inline constexpr std::string_view kProgressHeader = "X-Agg-Progress";
inline constexpr std::string_view kCompleteHeader = "X-Agg-Complete";

class PortInUse : public Error {
 public:
  using Error::Error;
};

struct ServiceOptions {
  sources::SourceRegistry registry;
  engine::AggregationPolicy policy;
  /// Read, check and propagate X-Memento-Agg-Trace.
  bool loop_guard = true;
  std::chrono::seconds job_ttl{300};
  /// Base of the self/timemap/timegate links; derived from the bound
  /// address when empty.
  std::string public_base_url;
  /// Defaults to engine::http_fetcher().
  engine::Fetcher fetcher;
  std::size_t worker_threads = 32;
  /// Generated when absent.
  std::optional<trace::AggregatorIdentity> identity;
};

/// "<id>:<status>:<latency_ms>,..." in report order.
std::string render_report_header(std::span<const engine::SourceResult> reports);

std::string_view media_type_for(std::string_view format);

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds without serving yet; port 0 picks an ephemeral port. Returns the
  /// bound port. Throws PortInUse.
  int bind(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on a background thread; returns once accepting.
  void start();
  /// Serves on the calling thread until stop().
  void listen();
  /// Idempotent. Waits for in-flight async jobs.
  void stop();

  int port() const noexcept;
  const std::string& base_url() const noexcept;
  const trace::AggregatorIdentity& identity() const noexcept;
  const engine::AggregationPolicy& policy() const noexcept;
  bool loop_guard() const noexcept;

  /// Atomically swaps the registry seen by subsequent requests.
  void set_registry(sources::SourceRegistry registry);
  std::shared_ptr<const sources::SourceRegistry> registry() const;

  /// TimeMap requests received for `uri_r` (normalized), or in total.
  std::size_t timemap_requests(std::optional<std::string_view> uri_r = std::nullopt) const;
  /// TimeMap requests that arrived carrying a trace header.
  std::size_t traced_requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace memagg::service
