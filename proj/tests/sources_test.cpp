#include <gtest/gtest.h>

#include "memagg/sources.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace memagg::sources {
namespace {

SourceConfig src(std::string id, std::string templ, int priority = 0) {
  SourceConfig c;
  c.id = std::move(id);
  c.name = c.id;
  c.timemap_template = std::move(templ);
  c.priority = priority;
  return c;
}

TEST(ExpandTemplate, PlaceholderAndAppend) {
  auto uri = linkfmt::AbsoluteUri::parse("https://icadl.net/a?b=c");
  EXPECT_EQ(expand_template("https://web.archive.org/web/timemap/link/", uri).str(),
            "https://web.archive.org/web/timemap/link/https://icadl.net/a?b=c");
  EXPECT_EQ(expand_template("http://arquivo.pt/wayback/timemap/*/{URI-R}?x=1", uri).str(),
            "http://arquivo.pt/wayback/timemap/*/https://icadl.net/a?b=c?x=1");
}

TEST(ExpandTemplate, AgreesWithStringReplacement) {
  testing::Rng rng(6570);
  const std::vector<std::string> templates = {"http://a.example/timemap/link/",
                                              "https://b.example/tm/{URI-R}",
                                              "https://c.example/{URI-R}/timemap"};
  for (int i = 0; i < 300; ++i) {
    auto uri = linkfmt::AbsoluteUri::parse(testing::random_uri(rng));
    for (const auto& t : templates)
      EXPECT_EQ(expand_template(t, uri).str(), testing::oracle_expand(t, uri.str()));
  }
}

TEST(ExpandTemplate, RejectsBrokenTemplates) {
  auto uri = linkfmt::AbsoluteUri::parse("https://icadl.net");
  EXPECT_THROW(expand_template("not a uri/", uri), BadTemplate);
  EXPECT_THROW(expand_template("http://a.example/{URI-R}/{URI-R}", uri), BadTemplate);
}

TEST(NormalizeUriR, DefaultsSchemeAndStripsFragment) {
  EXPECT_EQ(normalize_uri_r("icadl.net").str(), "http://icadl.net");
  EXPECT_EQ(normalize_uri_r("HTTPS://ICADL.net/Path#frag").str(), "https://icadl.net/Path");
  EXPECT_THROW(normalize_uri_r(""), UnparseableUri);
  EXPECT_THROW(normalize_uri_r("http://bad host/"), UnparseableUri);
}

TEST(NormalizeUriR, IdempotentOver500Uris) {
  testing::Rng rng(500);
  for (int i = 0; i < 500; ++i) {
    std::string raw = testing::random_uri(rng);
    if (i % 3 == 0) raw = raw.substr(raw.find("://") + 3);
    if (i % 5 == 0) raw += "#section";
    auto once = normalize_uri_r(raw);
    EXPECT_EQ(normalize_uri_r(once.str()), once) << raw;
  }
}

TEST(SourceConfig, Validation) {
  EXPECT_NO_THROW(validate(src("ia", "https://web.archive.org/web/timemap/link/")));
  EXPECT_THROW(validate(src("IA", "https://web.archive.org/web/timemap/link/")), InvalidSource);
  EXPECT_THROW(validate(src("", "https://x.example/")), InvalidSource);
  EXPECT_THROW(validate(src(std::string(33, 'a'), "https://x.example/")), InvalidSource);
  EXPECT_THROW(validate(src("ia", "web.archive.org/")), InvalidSource);
  auto c = src("ia", "https://x.example/");
  c.timeout_ms = 0;
  EXPECT_THROW(validate(c), InvalidSource);
}

TEST(Registry, ParsesDefaultsAndOrder) {
  auto reg = parse_registry(R"([
    {"id": "ia", "name": "Internet Archive", "timemap": "https://web.archive.org/web/timemap/link/"},
    {"id": "pt", "name": "Arquivo", "timemap": "http://arquivo.pt/wayback/timemap/*/{URI-R}",
     "timeout_ms": 1500, "priority": 2, "enabled": false}
  ])");
  ASSERT_EQ(reg.size(), 2u);
  EXPECT_EQ(reg.all()[0].timeout_ms, kDefaultTimeoutMs);
  EXPECT_EQ(reg.all()[0].priority, 0);
  EXPECT_TRUE(reg.all()[0].enabled);
  EXPECT_EQ(reg.all()[1].timeout_ms, 1500);
  ASSERT_EQ(reg.enabled().size(), 1u);
  EXPECT_EQ(reg.enabled()[0].id, "ia");
  ASSERT_NE(reg.find("pt"), nullptr);
  EXPECT_EQ(reg.find("zz"), nullptr);
}

TEST(Registry, DiagnosticsCarryLineNumbers) {
  try {
    parse_registry("[\n  {\"id\": \"ia\", \"name\": \"x\", \"timemap\": \"https://a.example/\"},\n"
                   "  {\"id\": \"BAD\", \"name\": \"y\", \"timemap\": \"https://b.example/\"}\n]");
    FAIL() << "expected ConfigParseError";
  } catch (const ConfigParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse_registry("[\n  {\"id\": \"ia\",\n  oops}\n]");
    FAIL() << "expected ConfigParseError";
  } catch (const ConfigParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_registry("{\"id\": \"ia\"}"), ConfigParseError);
  EXPECT_THROW(parse_registry(R"([{"id": "ia", "name": "x"}])"), ConfigParseError);
  EXPECT_THROW(parse_registry(R"([{"id": "ia", "name": "x", "timemap": "https://a.example/"},
                                   {"id": "ia", "name": "y", "timemap": "https://b.example/"}])"),
               DuplicateId);
}

TEST(Registry, SaveLoadRoundTrip) {
  testing::TempDir dir;
  SourceRegistry reg({src("ia", "https://web.archive.org/web/timemap/link/", 1),
                      src("ukwa", "https://www.webarchive.org.uk/wayback/archive/timemap/link/")});
  const auto path = dir.path() / "archives.json";
  save_registry(reg, path);
  EXPECT_EQ(load_registry(path), reg);
  EXPECT_THROW(load_registry(dir.path() / "missing.json"), ConfigParseError);
}

TEST(SourceKey, IgnoresCaseAndPlaceholder) {
  EXPECT_EQ(source_key(src("a", "HTTP://Archive.example/TM/{URI-R}")),
            source_key(src("b", "http://archive.example/tm/")));
  EXPECT_NE(source_key(src("a", "http://archive.example/tm/")),
            source_key(src("a", "http://archive.example/other/")));
}

}  // namespace
}  // namespace memagg::sources
