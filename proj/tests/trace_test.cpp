#include <gtest/gtest.h>

#include <set>

#include "memagg/base64url.hpp"
#include "memagg/trace.hpp"
#include "support/oracles.hpp"

namespace memagg::trace {
namespace {

sources::SourceConfig src(std::string id, std::string templ) {
  sources::SourceConfig c;
  c.id = std::move(id);
  c.name = c.id;
  c.timemap_template = std::move(templ);
  return c;
}

TEST(Trace, EncodesKnownHeader) {
  RequestTrace t{"00112233445566778899aabbccddeeff", {"agg-a", "agg-b"}, {}};
  EXPECT_EQ(encode_trace_header(t), "nonce=00112233445566778899aabbccddeeff; agg=agg-a,agg-b");
  t.add_source("http://a.example/tm/");
  EXPECT_EQ(encode_trace_header(t),
            "nonce=00112233445566778899aabbccddeeff; agg=agg-a,agg-b; src=" +
                testing::openssl_b64url("http://a.example/tm/"));
}

TEST(Trace, RoundTrips500RandomTraces) {
  testing::Rng rng(7240);
  for (int i = 0; i < 500; ++i) {
    auto t = testing::random_trace(rng);
    const std::string header = encode_trace_header(t, 1 << 20);
    EXPECT_EQ(parse_trace_header(header), t) << header;
  }
}

TEST(Trace, CapDropsOldestSourcesOnly) {
  testing::Rng rng(8192);
  for (int i = 0; i < 100; ++i) {
    auto t = testing::random_trace(rng);
    for (int k = 0; k < 300; ++k) t.add_source("http://archive" + std::to_string(k) + ".example/tm/");
    const std::string header = encode_trace_header(t);
    ASSERT_LE(header.size(), kHeaderCap);
    auto back = parse_trace_header(header);
    EXPECT_EQ(back.nonce, t.nonce);
    EXPECT_EQ(back.visited_aggregators, t.visited_aggregators);
    ASSERT_LE(back.visited_sources.size(), t.visited_sources.size());
    // The survivors are exactly the newest suffix.
    std::vector<std::string> tail(t.visited_sources.end() - long(back.visited_sources.size()),
                                  t.visited_sources.end());
    EXPECT_EQ(back.visited_sources, tail);
  }
}

TEST(Trace, NeverDropsAggregatorIds) {
  RequestTrace t;
  t.nonce = random_hex128();
  for (int i = 0; i < 200; ++i)
    t.visited_aggregators.push_back(std::string(57, char('a' + i % 26)) + std::to_string(i));
  t.add_source("http://a.example/");
  const std::string header = encode_trace_header(t);
  auto back = parse_trace_header(header);
  EXPECT_EQ(back.visited_aggregators, t.visited_aggregators);
  EXPECT_TRUE(back.visited_sources.empty());
}

TEST(Trace, RejectsMalformed) {
  for (const char* bad : {"", "nonce=abc", "agg=a", "nonce=zz; agg=a",
                          "nonce=00112233445566778899aabbccddeeff; agg=",
                          "nonce=00112233445566778899aabbccddeeff; agg=a b",
                          "nonce=00112233445566778899aabbccddeeff; agg=a; src=!!",
                          "nonce=00112233445566778899aabbccddeeff; agg=a; what=1"}) {
    EXPECT_THROW(parse_trace_header(bad), MalformedTrace) << bad;
  }
}

TEST(Trace, NoncesAreUnique) {
  std::set<std::string> seen;
  for (int i = 0; i < 10000; ++i) {
    auto n = random_hex128();
    ASSERT_EQ(n.size(), 32u);
    ASSERT_TRUE(seen.insert(n).second);
  }
}

TEST(Trace, CheckAndExtendDetectsCycles) {
  AggregatorIdentity a("agg-a"), b("agg-b");
  auto t = new_trace(a);
  EXPECT_EQ(t.visited_aggregators, std::vector<std::string>{"agg-a"});
  auto t2 = check_and_extend(t, b);
  EXPECT_EQ(t2.visited_aggregators, (std::vector<std::string>{"agg-a", "agg-b"}));
  EXPECT_EQ(t2.nonce, t.nonce);
  try {
    check_and_extend(t2, a);
    FAIL() << "expected CycleDetected";
  } catch (const CycleDetected& e) {
    EXPECT_EQ(e.instance_id(), "agg-a");
    EXPECT_EQ(e.nonce(), t.nonce);
  }
  EXPECT_THROW(AggregatorIdentity("has space"), MalformedTrace);
}

TEST(Trace, FilterVisitedPartitionsCandidates) {
  testing::Rng rng(94);
  for (int round = 0; round < 200; ++round) {
    std::vector<sources::SourceConfig> candidates;
    RequestTrace t{random_hex128(), {"x"}, {}};
    const int n = std::uniform_int_distribution<int>(0, 10)(rng);
    for (int i = 0; i < n; ++i) {
      auto c = src("s" + std::to_string(i), "http://a" + std::to_string(i) + ".example/tm/");
      if (std::uniform_int_distribution<int>(0, 1)(rng)) t.add_source(sources::source_key(c));
      candidates.push_back(c);
    }
    auto p = filter_visited(candidates, t);
    EXPECT_EQ(p.kept.size() + p.skipped.size(), candidates.size());
    for (const auto& k : p.kept) EXPECT_FALSE(t.visited_source(sources::source_key(k)));
    for (const auto& s : p.skipped) EXPECT_TRUE(t.visited_source(sources::source_key(s)));
    // Relative order is preserved in both halves.
    auto merged = p.kept;
    merged.insert(merged.end(), p.skipped.begin(), p.skipped.end());
    std::stable_sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) {
      return std::stoi(a.id.substr(1)) < std::stoi(b.id.substr(1));
    });
    EXPECT_EQ(merged, candidates);
  }
}

TEST(Trace, RecordSourcesIsSetUnion) {
  RequestTrace t{random_hex128(), {"x"}, {"http://a.example/tm/"}};
  std::vector<sources::SourceConfig> q = {src("a", "http://A.example/tm/{URI-R}"),
                                          src("b", "http://b.example/tm/")};
  auto out = record_sources(t, q);
  EXPECT_EQ(out.visited_sources,
            (std::vector<std::string>{"http://a.example/tm/", "http://b.example/tm/"}));
}

}  // namespace
}  // namespace memagg::trace
