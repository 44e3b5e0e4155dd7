#pragma once

// Simulated Memento archives and scenario topologies for desk-scale tests.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "memagg/error.hpp"
#include "memagg/linkfmt.hpp"
#include "memagg/service.hpp"

namespace memagg::mock {

using linkfmt::Timestamp14;
using service::PortInUse;

class ScenarioError : public Error {
 public:
  using Error::Error;
};

/// Normalized URI-R -> capture timestamps (unique per URI-R).
using HoldingsSpec = std::map<std::string, std::vector<Timestamp14>>;

/// Convenience: keys are normalized, stamps parsed. Throws ScenarioError on
/// duplicate stamps.
HoldingsSpec make_holdings(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& entries);

struct Hang {
  std::chrono::milliseconds duration;
};
struct HttpFailure {
  int status;
};
struct MalformedBody {};

using Failure = std::variant<std::monostate, Hang, HttpFailure, MalformedBody>;

struct BehaviorSpec {
  std::chrono::milliseconds latency{0};
  Failure failure;
  /// Short-code URI-Ms (http://host/m/<code>) instead of /web/<stamp>/<uri-r>.
  bool opaque_urims = false;
};

class MockArchive {
 public:
  MockArchive(HoldingsSpec holdings, BehaviorSpec behavior);
  ~MockArchive();
  MockArchive(const MockArchive&) = delete;
  MockArchive& operator=(const MockArchive&) = delete;

  /// Port 0 picks an ephemeral port. Throws PortInUse.
  int bind(const std::string& host = "127.0.0.1", int port = 0);
  void start();
  /// Idempotent; interrupts sleeping handlers.
  void stop();

  int port() const noexcept;
  std::string base_url() const;
  /// Append-style URI-T template for this archive.
  std::string timemap_template() const;

  /// TimeMap requests received for `uri_r` (normalized on lookup).
  std::size_t hit_count(std::string_view uri_r) const;
  std::size_t total_hits() const;

  /// The body this archive serves for `uri_r`, if it holds captures.
  std::optional<std::string> timemap_body(std::string_view uri_r) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Binds, starts and returns a mock. Throws PortInUse.
std::unique_ptr<MockArchive> start_mock(HoldingsSpec holdings, BehaviorSpec behavior,
                                        int port = 0);

/// A booted scenario: archives and aggregators on ephemeral loopback ports.
///
/// Scenario JSON:
///   {"nodes": [
///     {"kind": "archive", "id": "wa-a", "holdings": {"https://icadl.net": ["20180503103914"]},
///      "behavior": {"latency_ms": 50, "hang_ms": 0, "http_status": 0, "malformed": false,
///                   "opaque": false}},
///     {"kind": "aggregator", "id": "agg-a", "sources": ["wa-a", "agg-b"],
///      "loop_guard": true, "skip_visited": true, "dedup": "exact",
///      "timeout_ms": 2000, "deadline_ms": 3000, "mode": "s1"}]}
///
/// A bare array of nodes is accepted too. Cycles and self-references among
/// aggregators are legal.
class Topology {
 public:
  static std::unique_ptr<Topology> load(const std::filesystem::path& path);
  static std::unique_ptr<Topology> from_json(const nlohmann::json& scenario);
  ~Topology();

  void stop();

  const std::vector<std::string>& node_ids() const noexcept { return order_; }
  bool is_archive(std::string_view id) const;
  MockArchive& archive(std::string_view id);
  service::Service& aggregator(std::string_view id);
  /// First aggregator node in file order. Throws ScenarioError when none.
  service::Service& entry();
  const std::string& entry_id() const;

  /// Archive: TimeMap hits for uri_r. Aggregator: TimeMap requests for uri_r.
  std::size_t hit_count(std::string_view id, std::string_view uri_r) const;

 private:
  Topology() = default;

  std::vector<std::string> order_;
  std::map<std::string, std::unique_ptr<MockArchive>, std::less<>> archives_;
  std::map<std::string, std::unique_ptr<service::Service>, std::less<>> aggregators_;
  std::string entry_id_;
};

inline std::unique_ptr<Topology> load_scenario(const std::filesystem::path& path) {
  return Topology::load(path);
}

}  // namespace memagg::mock
