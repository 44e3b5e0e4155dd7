#include <gtest/gtest.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <sstream>
#include <thread>

#include "json.hpp"
#include "memagg/cli.hpp"
#include "memagg/mockarchive.hpp"
#include "support/fixtures.hpp"

namespace memagg::cli {
namespace {

using namespace std::chrono_literals;
using testing::client_for;

const std::string kUri = "https://icadl.net";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run agg(std::vector<std::string> args) {
  args.insert(args.begin(), "agg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::unique_ptr<mock::MockArchive> icadl_mock(mock::BehaviorSpec behavior = {}) {
  std::vector<std::string> stamps(std::begin(testing::kIcadlStamps), std::end(testing::kIcadlStamps));
  return mock::start_mock(mock::make_holdings({{kUri, stamps}}), behavior);
}

TEST(ExitCodes, TotalOverStatusClasses) {
  EXPECT_EQ(exit_code_for_status(200), 0);
  EXPECT_EQ(exit_code_for_status(202), 0);
  EXPECT_EQ(exit_code_for_status(404), 4);
  EXPECT_EQ(exit_code_for_status(508), 8);
  EXPECT_EQ(exit_code_for_status(400), 3);
  EXPECT_EQ(exit_code_for_status(451), 3);
  EXPECT_EQ(exit_code_for_status(500), 5);
  EXPECT_EQ(exit_code_for_status(504), 5);
  for (int s = 100; s < 600; ++s) {
    const int c = exit_code_for_status(s);
    EXPECT_TRUE(c == 0 || c == 3 || c == 4 || c == 5 || c == 8) << s;
  }
}

TEST(Usage, BadArgumentsExitOne) {
  EXPECT_EQ(agg({}).code, kExitUsage);
  EXPECT_EQ(agg({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(agg({"query", kUri}).code, kExitUsage);  // --endpoint missing
  EXPECT_EQ(agg({"query", kUri, "--endpoint", "http://x", "--format", "xml"}).code, kExitUsage);
  EXPECT_EQ(agg({"query", kUri, "--endpoint", "nonsense"}).code, kExitUsage);
  EXPECT_EQ(agg({"--help"}).code, 0);
}

TEST(Query, PrintsTheArchiveTimeMap) {
  auto m = icadl_mock();
  auto r = agg({"query", kUri, "--endpoint", m->base_url()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(linkfmt::parse_link_timemap(r.out).mementos.size(), 5u);
  EXPECT_TRUE(r.err.empty());
}

TEST(Query, ExitCodesFollowTheHttpOutcome) {
  auto m = icadl_mock();
  auto missing = agg({"query", "https://nothing.example/", "--endpoint", m->base_url()});
  EXPECT_EQ(missing.code, 4);
  EXPECT_TRUE(missing.out.empty());
  EXPECT_NE(missing.err.find("404"), std::string::npos);

  auto looped = mock::start_mock({}, mock::BehaviorSpec{0ms, mock::HttpFailure{508}, false});
  EXPECT_EQ(agg({"query", kUri, "--endpoint", looped->base_url()}).code, 8);

  const int dead_port = looped->port();
  looped->stop();
  auto down = agg({"query", kUri, "--endpoint", "http://127.0.0.1:" + std::to_string(dead_port),
                   "--timeout-ms", "1000"});
  EXPECT_EQ(down.code, kExitTransport);
}

class AggregatorCli : public ::testing::Test {
 protected:
  void SetUp() override {
    fast = icadl_mock();
    slow = mock::start_mock(mock::make_holdings({{kUri, {"20230101000000"}}}),
                            mock::BehaviorSpec{300ms, {}, false});
    service::ServiceOptions opts;
    sources::SourceConfig a{"fast", "fast", fast->timemap_template()};
    sources::SourceConfig b{"slow", "slow", slow->timemap_template()};
    opts.registry = sources::SourceRegistry({a, b});
    svc = std::make_unique<service::Service>(std::move(opts));
    svc->start();
  }

  std::unique_ptr<mock::MockArchive> fast, slow;
  std::unique_ptr<service::Service> svc;
};

TEST_F(AggregatorCli, AsyncAndStreamConvergeToSyncBody) {
  auto sync = agg({"query", kUri, "--endpoint", svc->base_url(), "--format", "json"});
  ASSERT_EQ(sync.code, 0) << sync.err;
  auto async = agg({"query", kUri, "--endpoint", svc->base_url(), "--format", "json", "--async",
                    "--poll-ms", "50"});
  ASSERT_EQ(async.code, 0) << async.err;
  EXPECT_EQ(async.out, sync.out);

  auto link = agg({"query", kUri, "--endpoint", svc->base_url()});
  auto streamed = agg({"query", kUri, "--endpoint", svc->base_url(), "--stream"});
  ASSERT_EQ(streamed.code, 0) << streamed.err;
  EXPECT_EQ(linkfmt::parse_link_timemap(streamed.out).mementos.size(), 6u);
  auto as_set = [](const std::string& body) {
    std::set<std::string> s;
    for (const auto& m : linkfmt::parse_link_timemap(body).mementos) s.insert(m.uri_m.str());
    return s;
  };
  EXPECT_EQ(as_set(streamed.out), as_set(link.out));
}

TEST_F(AggregatorCli, PreferArchivesFileRestrictsTheSourceSet) {
  testing::TempDir dir;
  sources::SourceConfig only{"slow", "slow", slow->timemap_template()};
  const auto path = dir.path() / "prefer.json";
  sources::save_registry(sources::SourceRegistry({only}), path);
  auto r = agg({"query", kUri, "--endpoint", svc->base_url(), "--prefer-archives", path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(linkfmt::parse_link_timemap(r.out).mementos.size(), 1u);
  EXPECT_EQ(fast->hit_count(kUri), 0u);

  const auto bad = dir.write("bad.json", "{not json");
  EXPECT_EQ(agg({"query", kUri, "--endpoint", svc->base_url(), "--prefer-archives", bad.string()}).code,
            kExitUsage);
}

TEST(Scenario, DuplicationReportShowsSingleHit) {
  auto r = agg({"scenario", "run", std::string(SCENARIO_DIR) + "/duplication.json", "--request",
                kUri, "--report"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(linkfmt::parse_link_timemap(r.out).mementos.size(), 5u);
  EXPECT_NE(r.out.find("# wa-a archive hits=1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("# status=200"), std::string::npos);
}

TEST(Scenario, EmptyHoldingsPrints404) {
  auto r = agg({"scenario", "run", std::string(SCENARIO_DIR) + "/empty-holdings.json", "--request",
                kUri});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.out.find("# status=404"), std::string::npos);
}

TEST(Scenario, CycleCompletesWithoutHanging) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = agg({"scenario", "run", std::string(SCENARIO_DIR) + "/cycle.json", "--request",
                kUri, "--report"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 3s);
  EXPECT_EQ(linkfmt::parse_link_timemap(r.out).mementos.size(), 4u);
}

TEST(Scenario, BrokenScenarioExitsOne) {
  testing::TempDir dir;
  const auto path = dir.write("bad.json", R"([{"kind": "aggregator", "id": "a", "sources": ["ghost"]}])");
  auto r = agg({"scenario", "run", path.string(), "--request", kUri});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("ghost"), std::string::npos);
}

TEST(Serve, BadConfigExitsOne) {
  testing::TempDir dir;
  const auto path = dir.write("archives.json", "[\n  {\"id\": \"ia\",\n  oops}\n]");
  auto r = agg({"serve", "--config", path.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  EXPECT_EQ(agg({"serve", "--config", (dir.path() / "missing.json").string()}).code, kExitUsage);
}

int free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

TEST(Serve, BootsFromConfigAndStopsOnSignal) {
  auto m = icadl_mock();
  testing::TempDir dir;
  const auto config = dir.path() / "archives.json";
  sources::save_registry(sources::SourceRegistry({{"one", "one", m->timemap_template()},
                                                  {"two", "two", m->timemap_template() + "?x"},
                                                  {"three", "three", m->timemap_template() + "?y"}}),
                         config);
  const int port = free_port();
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    setenv("AGG_PORT", std::to_string(port).c_str(), 1);
    if (!freopen((dir.path() / "stderr.txt").c_str(), "w", stderr)) _exit(126);
    execl(AGG_BINARY, AGG_BINARY, "serve", "--config", config.c_str(), "--dedup", "datetime",
          static_cast<char*>(nullptr));
    _exit(127);
  }
  auto cli = client_for("http://127.0.0.1:" + std::to_string(port), 1000);
  httplib::Result health;
  for (int i = 0; i < 100 && !(health = cli.Get("/health")); ++i) std::this_thread::sleep_for(50ms);
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  auto cfg = nlohmann::json::parse(cli.Get("/config")->body);
  EXPECT_EQ(cfg["policy"]["dedup"], "datetime");
  EXPECT_EQ(cfg["sources"].size(), 3u);
  auto tm = cli.Get("/timemap/link/" + kUri);
  EXPECT_EQ(tm->status, 200);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  std::ifstream log(dir.path() / "stderr.txt");
  std::string text((std::istreambuf_iterator<char>(log)), {});
  EXPECT_NE(text.find("instance_id=" + cfg["instance_id"].get<std::string>()), std::string::npos)
      << text;
}

}  // namespace
}  // namespace memagg::cli
