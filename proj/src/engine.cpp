#include "memagg/engine.hpp"

#include <algorithm>
#include <climits>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace memagg::engine {
namespace {

using Clock = std::chrono::steady_clock;

template <typename KeyFn>
std::vector<Memento> keep_best(std::vector<Memento> in, const RankFn& rank, KeyFn key_of) {
  using Key = decltype(key_of(in.front()));
  std::unordered_map<Key, std::size_t> best;
  std::vector<Rank> ranks;
  ranks.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    ranks.push_back(rank(in[i].source_id));
    auto [it, inserted] = best.try_emplace(key_of(in[i]), i);
    if (!inserted && ranks[i] < ranks[it->second]) it->second = i;
  }
  std::vector<Memento> out;
  out.reserve(best.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    if (best.at(key_of(in[i])) == i) out.push_back(std::move(in[i]));
  return out;
}

SourceResult classify(const SourceConfig& src, const AbsoluteUri& uri_r, FetchResponse resp) {
  SourceResult r;
  r.source_id = src.id;
  switch (resp.transport) {
    case FetchResponse::Transport::timeout:
      r.status = Status::timeout;
      r.detail = resp.error;
      return r;
    case FetchResponse::Transport::network_error:
      r.status = Status::network_error;
      r.detail = resp.error;
      return r;
    case FetchResponse::Transport::ok: break;
  }
  if (resp.status == 200) {
    try {
      auto doc = linkfmt::parse_link_timemap(resp.body);
      doc.uri_r = uri_r;
      for (auto& m : doc.mementos) m.source_id = src.id;
      r.status = doc.mementos.empty() ? Status::empty : Status::ok;
      r.timemap = std::move(doc);
    } catch (const Error& e) {
      r.status = Status::parse_error;
      r.detail = e.what();
    }
    return r;
  }
  r.http_code = resp.status;
  if (resp.status == 404) r.status = Status::empty;
  else if (resp.status == 508) r.status = Status::loop_refused;
  else r.status = Status::http_error;
  return r;
}

struct FanOut {
  FanOut(TimeMapDocument skeleton, std::size_t total, AggregationPolicy policy, RankFn rank,
         ProgressSink sink, bool relay)
      : acc(std::move(skeleton)),
        results(total),
        policy(std::move(policy)),
        rank(std::move(rank)),
        sink(std::move(sink)),
        relay(relay) {}

  std::mutex mu;
  std::condition_variable cv;
  TimeMapDocument acc;
  std::vector<std::optional<SourceResult>> results;
  std::size_t resolved = 0;
  bool closed = false;
  const AggregationPolicy policy;
  const RankFn rank;
  const ProgressSink sink;
  const bool relay;

  // Caller holds `mu`.
  void absorb(std::size_t index, SourceResult result) {
    if (result.timemap && !result.timemap->mementos.empty()) {
      if (relay) {
        acc.mementos = result.timemap->mementos;
        if (policy.sort_final) acc.mementos = sort_mementos(std::move(acc.mementos));
        acc.sorted = policy.sort_final;
      } else {
        acc = merge(acc, *result.timemap, policy, rank);
      }
    }
    results[index] = std::move(result);
    ++resolved;
    if (sink) {
      try {
        sink(ProgressEvent{*results[index], acc, resolved, results.size()});
      } catch (...) {
        // A failing observer must not take down the aggregation.
      }
    }
  }

  void resolve(std::size_t index, SourceResult result) {
    {
      std::lock_guard lock(mu);
      if (closed || results[index]) return;
      absorb(index, std::move(result));
    }
    cv.notify_all();
  }
};

}  // namespace

std::string_view to_string(Status status) {
  switch (status) {
    case Status::ok: return "ok";
    case Status::empty: return "empty";
    case Status::timeout: return "timeout";
    case Status::http_error: return "http_error";
    case Status::network_error: return "network_error";
    case Status::parse_error: return "parse_error";
    case Status::loop_refused: return "loop_refused";
    case Status::skipped: return "skipped";
  }
  return "unknown";
}

std::string SourceResult::label() const {
  std::string out(to_string(status));
  if (status == Status::http_error) out += "(" + std::to_string(http_code) + ")";
  return out;
}

std::string_view to_string(DedupMode mode) {
  return mode == DedupMode::exact ? "exact" : "datetime";
}

DedupMode parse_dedup_mode(std::string_view text) {
  if (text == "exact") return DedupMode::exact;
  if (text == "datetime") return DedupMode::datetime;
  throw std::invalid_argument("dedup mode must be exact or datetime");
}

void AggregationPolicy::validate() const {
  if (per_source_timeout.count() <= 0 || overall_deadline.count() <= 0)
    throw std::invalid_argument("timeouts must be positive");
  if (per_source_timeout > overall_deadline)
    throw std::invalid_argument("per-source timeout exceeds the overall deadline");
}

RankFn rank_by_registry(std::span<const SourceConfig> sources) {
  std::unordered_map<std::string, Rank> ranks;
  for (std::size_t i = 0; i < sources.size(); ++i)
    ranks.try_emplace(sources[i].id, Rank{sources[i].priority, i});
  return [ranks = std::move(ranks)](const std::optional<std::string>& id) {
    if (id) {
      if (auto it = ranks.find(*id); it != ranks.end()) return it->second;
    }
    return Rank{INT_MAX, SIZE_MAX};
  };
}

RankFn rank_uniform() {
  return [](const std::optional<std::string>&) { return Rank{}; };
}

std::vector<Memento> dedupe(std::vector<Memento> mementos, DedupMode mode, const RankFn& rank) {
  if (mementos.empty()) return mementos;
  mementos = keep_best(std::move(mementos), rank, [](const Memento& m) { return m.uri_m.str(); });
  if (mode == DedupMode::datetime && !mementos.empty()) {
    // Equal instants at second precision are exactly equal 14-digit stamps.
    mementos = keep_best(std::move(mementos), rank, [](const Memento& m) {
      return m.datetime.instant().time_since_epoch().count();
    });
  }
  return mementos;
}

std::vector<Memento> sort_mementos(std::vector<Memento> mementos) {
  std::stable_sort(mementos.begin(), mementos.end(), [](const Memento& a, const Memento& b) {
    if (a.datetime != b.datetime) return a.datetime < b.datetime;
    return a.uri_m.str() < b.uri_m.str();
  });
  for (std::size_t i = 0; i < mementos.size(); ++i) {
    mementos[i].first = i == 0;
    mementos[i].last = i + 1 == mementos.size();
  }
  return mementos;
}

TimeMapDocument merge(const TimeMapDocument& accumulated, const TimeMapDocument& incoming,
                      const AggregationPolicy& policy, const RankFn& rank) {
  if (accumulated.uri_r != incoming.uri_r)
    throw MixedUriR("cannot merge TimeMaps for " + accumulated.uri_r.str() + " and " +
                    incoming.uri_r.str());
  std::vector<Memento> combined;
  combined.reserve(accumulated.mementos.size() + incoming.mementos.size());
  combined.insert(combined.end(), accumulated.mementos.begin(), accumulated.mementos.end());
  combined.insert(combined.end(), incoming.mementos.begin(), incoming.mementos.end());
  combined = dedupe(linkfmt::without_position_tags(std::move(combined)), policy.dedup, rank);

  TimeMapDocument out = accumulated;
  out.mementos = policy.sort_final ? sort_mementos(std::move(combined)) : std::move(combined);
  out.sorted = policy.sort_final;
  return out;
}

TimeMapDocument make_skeleton(const AbsoluteUri& uri_r, std::string_view base_url) {
  TimeMapDocument doc(uri_r);
  while (!base_url.empty() && base_url.back() == '/') base_url.remove_suffix(1);
  if (base_url.empty()) return doc;
  const std::string base(base_url);
  const std::string tail = "/" + uri_r.str();
  doc.self = linkfmt::TypedLink{AbsoluteUri::parse(base + "/timemap/link" + tail),
                                std::string(linkfmt::kLinkFormat)};
  doc.timemaps = {
      {AbsoluteUri::parse(base + "/timemap/link" + tail), std::string(linkfmt::kLinkFormat)},
      {AbsoluteUri::parse(base + "/timemap/json" + tail), std::string(linkfmt::kJson)},
      {AbsoluteUri::parse(base + "/timemap/cdxj" + tail), std::string(linkfmt::kCdxj)},
  };
  doc.timegate = AbsoluteUri::parse(base + "/timegate" + tail);
  return doc;
}

Aggregator::Aggregator(Fetcher fetcher, std::string base_url)
    : fetcher_(std::move(fetcher)), base_url_(std::move(base_url)) {}

AggregationOutcome Aggregator::aggregate(const AbsoluteUri& uri_r,
                                         std::span<const SourceConfig> sources,
                                         const std::optional<trace::RequestTrace>& trace,
                                         const AggregationPolicy& policy,
                                         ProgressSink sink) const {
  return run(uri_r, sources, trace, policy, std::move(sink), policy.mode == QueryMode::s0);
}

AggregationOutcome Aggregator::proxy_query(const AbsoluteUri& uri_r, const SourceConfig& source,
                                           const std::optional<trace::RequestTrace>& trace,
                                           const AggregationPolicy& policy,
                                           ProgressSink sink) const {
  return run(uri_r, std::span(&source, 1), trace, policy, std::move(sink), true);
}

AggregationOutcome Aggregator::run(const AbsoluteUri& uri_r, std::span<const SourceConfig> sources,
                                   const std::optional<trace::RequestTrace>& trace,
                                   const AggregationPolicy& policy, ProgressSink sink,
                                   bool relay) const {
  policy.validate();
  std::vector<SourceConfig> candidates;
  std::copy_if(sources.begin(), sources.end(), std::back_inserter(candidates),
               [](const SourceConfig& s) { return s.enabled; });

  std::vector<SourceConfig> kept = candidates;
  if (trace && policy.skip_visited_sources) kept = trace::filter_visited(candidates, *trace).kept;
  if (kept.empty()) throw NoSources("no sources left to query for " + uri_r.str());
  if (relay && kept.size() != 1)
    throw std::invalid_argument("proxy mode needs exactly one source, have " +
                                std::to_string(kept.size()));

  const std::string trace_header =
      trace ? trace::encode_trace_header(trace::record_sources(*trace, kept)) : std::string{};

  TimeMapDocument skeleton = make_skeleton(uri_r, base_url_);
  skeleton.sorted = policy.sort_final;
  auto state = std::make_shared<FanOut>(std::move(skeleton), kept.size(), policy,
                                        rank_by_registry(kept), std::move(sink), relay);

  const auto started = Clock::now();
  const auto deadline = started + policy.overall_deadline;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const milliseconds timeout = std::min(
        {milliseconds(kept[i].timeout_ms), policy.per_source_timeout, policy.overall_deadline});
    std::thread([state, fetcher = fetcher_, source = kept[i], uri_r, trace_header, timeout, i,
                 started] {
      FetchResponse resp;
      try {
        resp = fetcher(FetchRequest{sources::expand_template(source.timemap_template, uri_r),
                                    trace_header, timeout});
      } catch (const std::exception& e) {
        resp.transport = FetchResponse::Transport::network_error;
        resp.error = e.what();
      }
      SourceResult result = classify(source, uri_r, std::move(resp));
      result.latency = std::chrono::duration_cast<milliseconds>(Clock::now() - started);
      state->resolve(i, std::move(result));
    }).detach();
  }

  std::unique_lock lock(state->mu);
  const bool all_in =
      state->cv.wait_until(lock, deadline, [&] { return state->resolved == kept.size(); });
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (state->results[i]) continue;
    SourceResult late;
    late.source_id = kept[i].id;
    late.status = Status::timeout;
    late.latency = std::chrono::duration_cast<milliseconds>(Clock::now() - started);
    late.detail = "no response before the overall deadline";
    state->absorb(i, std::move(late));
  }
  state->closed = true;

  AggregationOutcome outcome{state->acc, {}, all_in};
  std::size_t next_kept = 0;
  for (const auto& cfg : candidates) {
    if (next_kept < kept.size() && kept[next_kept].id == cfg.id) {
      outcome.reports.push_back(*state->results[next_kept++]);
    } else {
      SourceResult skipped;
      skipped.source_id = cfg.id;
      skipped.status = Status::skipped;
      skipped.detail = "already queried upstream in this request chain";
      outcome.reports.push_back(std::move(skipped));
    }
  }
  return outcome;
}

}  // namespace memagg::engine
