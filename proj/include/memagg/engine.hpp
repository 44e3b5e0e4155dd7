#pragma once

// TimeMap aggregation: concurrent fan-out to sources, incremental merge,
// deduplication and sorting, with one report per source.

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memagg/error.hpp"
#include "memagg/linkfmt.hpp"
#include "memagg/sources.hpp"
#include "memagg/trace.hpp"

namespace memagg::engine {

using linkfmt::AbsoluteUri;
using linkfmt::Memento;
using linkfmt::TimeMapDocument;
using sources::SourceConfig;
using std::chrono::milliseconds;

class MixedUriR : public Error {
 public:
  using Error::Error;
};
class NoSources : public Error {
 public:
  using Error::Error;
};

enum class Status { ok, empty, timeout, http_error, network_error, parse_error, loop_refused, skipped };

std::string_view to_string(Status status);

struct SourceResult {
  std::string source_id;
  Status status = Status::ok;
  int http_code = 0;  // meaningful for http_error
  milliseconds latency{0};
  /// Present iff status is ok or empty.
  std::optional<TimeMapDocument> timemap;
  std::string detail;

  /// "ok", "timeout", "http_error(451)", ...
  std::string label() const;
};

enum class DedupMode { exact, datetime };
enum class QueryMode { s0, s1 };

std::string_view to_string(DedupMode mode);
/// Throws std::invalid_argument.
DedupMode parse_dedup_mode(std::string_view text);

struct AggregationPolicy {
  DedupMode dedup = DedupMode::exact;
  bool sort_final = true;
  milliseconds per_source_timeout{5000};
  milliseconds overall_deadline{10000};
  QueryMode mode = QueryMode::s1;
  /// Skip sources whose key is already recorded in the incoming trace.
  bool skip_visited_sources = true;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct AggregationOutcome {
  TimeMapDocument document;
  std::vector<SourceResult> reports;
  /// Every non-skipped source resolved before the deadline.
  bool complete = false;
};

struct ProgressEvent {
  const SourceResult& report;
  const TimeMapDocument& snapshot;
  std::size_t resolved;
  std::size_t total;
};

/// Called once per resolved source, in resolution order, never concurrently.
using ProgressSink = std::function<void(const ProgressEvent&)>;

// ---------------------------------------------------------------------------
// Transport seam. The default fetcher speaks HTTP; tests substitute their own.

struct FetchRequest {
  AbsoluteUri uri;
  /// Encoded trace header value; empty means "send no trace".
  std::string trace_header;
  milliseconds timeout;
};

struct FetchResponse {
  enum class Transport { ok, timeout, network_error };
  Transport transport = Transport::ok;
  int status = 0;
  std::string body;
  std::string error;
};

using Fetcher = std::function<FetchResponse(const FetchRequest&)>;

/// GET with `Accept: application/link-format` and the trace header.
Fetcher http_fetcher();

// ---------------------------------------------------------------------------
// Merge primitives

/// Dedup ordering key; lower wins.
struct Rank {
  int priority = 0;
  std::size_t order = 0;

  friend auto operator<=>(const Rank&, const Rank&) = default;
};

using RankFn = std::function<Rank(const std::optional<std::string>& source_id)>;

/// Ranks by (priority, position in `sources`); unknown sources rank last.
RankFn rank_by_registry(std::span<const SourceConfig> sources);
/// Every source ranks equally.
RankFn rank_uniform();

/// Exact mode drops entries whose URI-M repeats; datetime mode also drops
/// entries whose 14-digit timestamp repeats. Among duplicates the entry with
/// the lowest (rank, position) survives, at its own position.
std::vector<Memento> dedupe(std::vector<Memento> mementos, DedupMode mode, const RankFn& rank);

/// Stable ascending sort by (datetime, URI-M); first/last tags reassigned.
std::vector<Memento> sort_mementos(std::vector<Memento> mementos);

/// Union of both memento lists, deduplicated per policy and sorted when
/// policy.sort_final. Links of `accumulated` are kept. Unsorted results carry
/// no first/last tags. Throws MixedUriR.
TimeMapDocument merge(const TimeMapDocument& accumulated, const TimeMapDocument& incoming,
                      const AggregationPolicy& policy, const RankFn& rank = rank_uniform());

/// Empty document for `uri_r` carrying the aggregator's own self, timemap
/// and timegate links under `base_url` (no links when base_url is empty).
TimeMapDocument make_skeleton(const AbsoluteUri& uri_r, std::string_view base_url);

// ---------------------------------------------------------------------------

class Aggregator {
 public:
  explicit Aggregator(Fetcher fetcher = http_fetcher(), std::string base_url = {});

  /// S1 (or S0 when policy.mode is s0 and one source remains) aggregation.
  /// `trace` must already be extended with this aggregator; nullopt disables
  /// trace propagation and source skipping. Disabled sources are ignored.
  /// Throws NoSources when nothing is left to query.
  AggregationOutcome aggregate(const AbsoluteUri& uri_r, std::span<const SourceConfig> sources,
                               const std::optional<trace::RequestTrace>& trace,
                               const AggregationPolicy& policy, ProgressSink sink = {}) const;

  /// S0 relay: the upstream mementos verbatim (sorted only when
  /// policy.sort_final), under this aggregator's links.
  AggregationOutcome proxy_query(const AbsoluteUri& uri_r, const SourceConfig& source,
                                 const std::optional<trace::RequestTrace>& trace,
                                 const AggregationPolicy& policy, ProgressSink sink = {}) const;

  const std::string& base_url() const noexcept { return base_url_; }

 private:
  AggregationOutcome run(const AbsoluteUri& uri_r, std::span<const SourceConfig> sources,
                         const std::optional<trace::RequestTrace>& trace,
                         const AggregationPolicy& policy, ProgressSink sink, bool relay) const;

  Fetcher fetcher_;
  std::string base_url_;
};

}  // namespace memagg::engine
