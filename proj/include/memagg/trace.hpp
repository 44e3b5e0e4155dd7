#pragma once

// Request trace propagated along aggregator chains: a per-request nonce, the
// aggregator instances already visited, and the source keys already queried.
//
// Wire form of the X-Memento-Agg-Trace header:
//
//   nonce=<hex32>; agg=<id1>,<id2>,...; src=<b64url(key1)>,<b64url(key2)>,...
//
// The src segment is omitted when no source has been recorded.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memagg/error.hpp"
#include "memagg/sources.hpp"

namespace memagg::trace {

inline constexpr std::string_view kHeaderName = "X-Memento-Agg-Trace";
inline constexpr std::size_t kHeaderCap = 8 * 1024;

class MalformedTrace : public Error {
 public:
  using Error::Error;
};

class CycleDetected : public Error {
 public:
  CycleDetected(std::string instance_id, std::string nonce)
      : Error("loop detected: aggregator " + instance_id + " already visited (nonce " + nonce +
              ")"),
        instance_id_(std::move(instance_id)),
        nonce_(std::move(nonce)) {}

  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::string& nonce() const noexcept { return nonce_; }

 private:
  std::string instance_id_;
  std::string nonce_;
};

/// 128 random bits, lowercase hex.
std::string random_hex128();

class AggregatorIdentity {
 public:
  /// Fresh random identity.
  static AggregatorIdentity generate() { return AggregatorIdentity(random_hex128()); }
  /// Throws MalformedTrace unless `id` matches [A-Za-z0-9_-]{1,64}.
  explicit AggregatorIdentity(std::string id);

  const std::string& id() const noexcept { return id_; }

  friend bool operator==(const AggregatorIdentity&, const AggregatorIdentity&) = default;

 private:
  std::string id_;
};

struct RequestTrace {
  std::string nonce;
  std::vector<std::string> visited_aggregators;
  /// Insertion-ordered, duplicate-free.
  std::vector<std::string> visited_sources;

  bool visited_source(std::string_view key) const;
  void add_source(std::string key);

  friend bool operator==(const RequestTrace&, const RequestTrace&) = default;
};

RequestTrace new_trace(const AggregatorIdentity& self);

/// Throws MalformedTrace.
RequestTrace parse_trace_header(std::string_view value);

/// Oldest source keys are dropped until the value fits in `cap` bytes;
/// aggregator ids are never dropped.
std::string encode_trace_header(const RequestTrace& trace, std::size_t cap = kHeaderCap);

/// Throws CycleDetected when `self` already appears in the trace; otherwise
/// returns the trace with `self` appended.
RequestTrace check_and_extend(RequestTrace trace, const AggregatorIdentity& self);

struct Partition {
  std::vector<sources::SourceConfig> kept;
  std::vector<sources::SourceConfig> skipped;
};

Partition filter_visited(std::span<const sources::SourceConfig> candidates,
                         const RequestTrace& trace);

/// Records the keys of `queried` so downstream aggregators can skip them.
RequestTrace record_sources(RequestTrace trace,
                            std::span<const sources::SourceConfig> queried);

}  // namespace memagg::trace
