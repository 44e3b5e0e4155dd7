#include "memagg/trace.hpp"

#include <algorithm>
#include <random>

#include "memagg/base64url.hpp"

namespace memagg::trace {
namespace {

bool is_hex32(std::string_view s) {
  return s.size() == 32 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

bool is_agg_id(std::string_view s) {
  return !s.empty() && s.size() <= 64 && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const auto pos = s.find(sep, begin);
    out.push_back(trim(s.substr(begin, pos == std::string_view::npos ? pos : pos - begin)));
    if (pos == std::string_view::npos) break;
    begin = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::size_t from = 0) {
  std::string out;
  for (std::size_t i = from; i < items.size(); ++i) {
    if (i > from) out += ',';
    out += items[i];
  }
  return out;
}

}  // namespace

std::string random_hex128() {
  thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (int word = 0; word < 2; ++word) {
    uint64_t v = rng();
    for (int i = 0; i < 16; ++i) {
      out += kHex[v & 0xF];
      v >>= 4;
    }
  }
  return out;
}

AggregatorIdentity::AggregatorIdentity(std::string id) : id_(std::move(id)) {
  if (!is_agg_id(id_)) throw MalformedTrace("invalid aggregator id: \"" + id_ + "\"");
}

bool RequestTrace::visited_source(std::string_view key) const {
  return std::find(visited_sources.begin(), visited_sources.end(), key) !=
         visited_sources.end();
}

void RequestTrace::add_source(std::string key) {
  if (!visited_source(key)) visited_sources.push_back(std::move(key));
}

RequestTrace new_trace(const AggregatorIdentity& self) {
  return RequestTrace{random_hex128(), {self.id()}, {}};
}

RequestTrace parse_trace_header(std::string_view value) {
  RequestTrace trace;
  bool have_nonce = false, have_agg = false, have_src = false;
  for (std::string_view segment : split(value, ';')) {
    const auto eq = segment.find('=');
    if (eq == std::string_view::npos) throw MalformedTrace("segment without '='");
    const auto key = trim(segment.substr(0, eq));
    const auto val = trim(segment.substr(eq + 1));
    if (key == "nonce") {
      if (have_nonce || !is_hex32(val)) throw MalformedTrace("bad nonce");
      trace.nonce = std::string(val);
      have_nonce = true;
    } else if (key == "agg") {
      if (have_agg) throw MalformedTrace("repeated agg segment");
      for (auto id : split(val, ',')) {
        if (!is_agg_id(id)) throw MalformedTrace("bad aggregator id");
        if (std::find(trace.visited_aggregators.begin(), trace.visited_aggregators.end(), id) !=
            trace.visited_aggregators.end())
          throw MalformedTrace("aggregator listed twice");
        trace.visited_aggregators.emplace_back(id);
      }
      have_agg = true;
    } else if (key == "src") {
      if (have_src) throw MalformedTrace("repeated src segment");
      if (!val.empty()) {
        for (auto encoded : split(val, ',')) {
          auto decoded = b64url::decode(encoded);
          if (!decoded || encoded.empty()) throw MalformedTrace("bad source key encoding");
          trace.add_source(*std::move(decoded));
        }
      }
      have_src = true;
    } else {
      throw MalformedTrace("unknown segment \"" + std::string(key) + "\"");
    }
  }
  if (!have_nonce || !have_agg) throw MalformedTrace("nonce and agg segments are required");
  return trace;
}

std::string encode_trace_header(const RequestTrace& trace, std::size_t cap) {
  std::string head = "nonce=" + trace.nonce + "; agg=" + join(trace.visited_aggregators);
  std::vector<std::string> encoded;
  encoded.reserve(trace.visited_sources.size());
  std::size_t src_len = 0;
  for (const auto& key : trace.visited_sources) {
    encoded.push_back(b64url::encode(key));
    src_len += encoded.back().size();
  }
  std::size_t from = 0;
  auto total = [&] {
    const std::size_t n = encoded.size() - from;
    return n == 0 ? head.size() : head.size() + 6 + src_len + (n - 1);
  };
  while (from < encoded.size() && total() > cap) src_len -= encoded[from++].size();
  if (from == encoded.size()) return head;
  return head + "; src=" + join(encoded, from);
}

RequestTrace check_and_extend(RequestTrace trace, const AggregatorIdentity& self) {
  const auto& aggs = trace.visited_aggregators;
  if (std::find(aggs.begin(), aggs.end(), self.id()) != aggs.end())
    throw CycleDetected(self.id(), trace.nonce);
  trace.visited_aggregators.push_back(self.id());
  return trace;
}

Partition filter_visited(std::span<const sources::SourceConfig> candidates,
                         const RequestTrace& trace) {
  Partition p;
  for (const auto& cfg : candidates) {
    if (trace.visited_source(sources::source_key(cfg)))
      p.skipped.push_back(cfg);
    else
      p.kept.push_back(cfg);
  }
  return p;
}

RequestTrace record_sources(RequestTrace trace,
                            std::span<const sources::SourceConfig> queried) {
  for (const auto& cfg : queried) trace.add_source(sources::source_key(cfg));
  return trace;
}

}  // namespace memagg::trace
