#include "memagg/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <cstdlib>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "memagg/mockarchive.hpp"
#include "memagg/prefer.hpp"
#include "memagg/service.hpp"
#include "memagg/sources.hpp"

namespace memagg::cli {
namespace {

using namespace std::chrono_literals;

struct Endpoint {
  std::string origin;  // scheme://authority
  std::string prefix;  // path without trailing slash
};

std::optional<Endpoint> split_endpoint(std::string_view base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string_view::npos) return std::nullopt;
  const auto path_start = base.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = std::string(base.substr(0, path_start));
  if (path_start != std::string_view::npos) e.prefix = std::string(base.substr(path_start));
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  if (e.origin.size() <= scheme_end + 3) return std::nullopt;
  return e;
}

httplib::Client make_client(const std::string& origin, std::chrono::milliseconds timeout) {
  httplib::Client client(origin);
  client.set_url_encode(false);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  return client;
}

int report_transport(const httplib::Result& res, const std::string& what, std::ostream& err) {
  err << "agg: " << what << ": " << httplib::to_string(res.error()) << "\n";
  return kExitTransport;
}

// Body to stdout on 2xx, otherwise a status line and the body to stderr.
int emit(int status, const std::string& body, std::ostream& out, std::ostream& err) {
  const int code = exit_code_for_status(status);
  if (code == 0) {
    out << body;
  } else {
    err << "agg: HTTP " << status << "\n" << body;
  }
  out.flush();
  return code;
}

struct QueryArgs {
  std::string uri_r;
  std::string endpoint;
  std::string format = "link";
  bool stream = false;
  bool async = false;
  std::string prefer_archives;
  int timeout_ms = 30000;
  int poll_ms = 200;
};

int do_query(const QueryArgs& a, std::ostream& out, std::ostream& err) {
  auto endpoint = split_endpoint(a.endpoint);
  if (!endpoint) {
    err << "agg: endpoint must look like http://host:port\n";
    return kExitUsage;
  }

  std::vector<std::string> prefs;
  if (a.async) prefs.emplace_back("respond-async");
  if (!a.prefer_archives.empty()) {
    try {
      const auto registry = sources::load_registry(a.prefer_archives);
      prefs.push_back(prefer::encode_archives_preference(registry.all()));
    } catch (const Error& e) {
      err << "agg: " << a.prefer_archives << ": " << e.what() << "\n";
      return kExitUsage;
    }
  }
  httplib::Headers headers;
  if (!prefs.empty()) {
    std::string value;
    for (const auto& p : prefs) value += (value.empty() ? "" : ", ") + p;
    headers.emplace(prefer::kPreferHeader, value);
  }

  const auto timeout = std::chrono::milliseconds(a.timeout_ms);
  auto client = make_client(endpoint->origin, timeout);
  client.set_keep_alive(a.async);
  std::string path = endpoint->prefix + "/timemap/" + a.format + "/" + a.uri_r;
  if (a.stream) path += (path.find('?') == std::string::npos ? "?" : "&") + std::string("stream=true");

  if (a.stream) {
    int status = 0;
    auto res = client.Get(
        path, headers,
        [&](const httplib::Response& r) {
          status = r.status;
          if (exit_code_for_status(status) != 0) err << "agg: HTTP " << status << "\n";
          return true;
        },
        [&](const char* data, size_t n) {
          auto& sink = exit_code_for_status(status) == 0 ? out : err;
          sink.write(data, static_cast<std::streamsize>(n));
          sink.flush();
          return true;
        });
    if (!res) return report_transport(res, "GET " + path, err);
    return exit_code_for_status(status);
  }

  auto res = client.Get(path, headers);
  if (!res) return report_transport(res, "GET " + path, err);
  if (res->status != 202 || !a.async) return emit(res->status, res->body, out, err);

  const std::string location = res->get_header_value("Location");
  if (location.empty()) {
    err << "agg: 202 without a Location header\n";
    return 5;
  }
  const auto give_up = std::chrono::steady_clock::now() + timeout;
  while (true) {
    std::this_thread::sleep_for(std::chrono::milliseconds(a.poll_ms));
    auto poll = client.Get(endpoint->prefix + location);
    if (!poll) return report_transport(poll, "GET " + location, err);
    if (poll->status != 202) return emit(poll->status, poll->body, out, err);
    if (std::chrono::steady_clock::now() > give_up) {
      err << "agg: job " << location << " still running after " << a.timeout_ms << " ms\n";
      return kExitTransport;
    }
  }
}

struct ServeArgs {
  std::string config;
  std::optional<int> port;
  std::string host = "127.0.0.1";
  std::optional<std::string> dedup;
  std::optional<int> timeout_ms;
  std::optional<int> deadline_ms;
  std::optional<std::string> mode;
  std::string base_url;
  bool no_loop_guard = false;
};

int do_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  service::ServiceOptions opts;
  try {
    opts.registry = sources::load_registry(a.config);
  } catch (const Error& e) {
    err << "agg: " << a.config << ": " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    if (a.dedup) opts.policy.dedup = engine::parse_dedup_mode(*a.dedup);
    if (a.timeout_ms) opts.policy.per_source_timeout = std::chrono::milliseconds(*a.timeout_ms);
    if (a.deadline_ms) opts.policy.overall_deadline = std::chrono::milliseconds(*a.deadline_ms);
    if (a.mode) opts.policy.mode = *a.mode == "s0" ? engine::QueryMode::s0 : engine::QueryMode::s1;
    opts.policy.validate();
  } catch (const std::exception& e) {
    err << "agg: " << e.what() << "\n";
    return kExitUsage;
  }
  opts.loop_guard = !a.no_loop_guard;
  opts.public_base_url = a.base_url;

  int port = 0;
  if (a.port) {
    port = *a.port;
  } else if (const char* env = std::getenv("AGG_PORT"); env && *env) {
    try {
      port = std::stoi(env);
    } catch (const std::exception&) {
      err << "agg: AGG_PORT is not a number: " << env << "\n";
      return kExitUsage;
    }
  }

  // Every thread spawned from here on inherits the blocked mask, so the
  // signals are only ever seen by sigwait below.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::Service svc(std::move(opts));
  try {
    svc.bind(a.host, port);
  } catch (const Error& e) {
    err << "agg: " << e.what() << "\n";
    return kExitUsage;
  }
  svc.start();
  err << "agg: instance_id=" << svc.identity().id() << " listening on " << svc.base_url() << " ("
      << svc.registry()->size() << " sources, dedup=" << engine::to_string(svc.policy().dedup)
      << ")" << std::endl;
  out.flush();

  int sig = 0;
  sigwait(&signals, &sig);
  err << "agg: received signal " << sig << ", shutting down" << std::endl;
  svc.stop();
  return 0;
}

struct ScenarioArgs {
  std::string file;
  std::string request;
  bool report = false;
  int timeout_ms = 30000;
};

int do_scenario(const ScenarioArgs& a, std::ostream& out, std::ostream& err) {
  std::unique_ptr<mock::Topology> topo;
  try {
    topo = mock::Topology::load(a.file);
  } catch (const Error& e) {
    err << "agg: " << e.what() << "\n";
    return kExitUsage;
  }
  auto& entry = topo->entry();
  auto client = make_client(entry.base_url(), std::chrono::milliseconds(a.timeout_ms));
  const auto started = std::chrono::steady_clock::now();
  auto res = client.Get("/timemap/link/" + a.request);
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  if (!res) {
    const int code = report_transport(res, "scenario request", err);
    topo->stop();
    return code;
  }

  const int code = exit_code_for_status(res->status);
  if (code == 0) out << res->body;
  else err << res->body;
  out << "# status=" << res->status << " elapsed_ms=" << elapsed.count() << "\n";
  if (a.report) {
    if (auto r = res->get_header_value(std::string(service::kReportHeader)); !r.empty())
      out << "# report=" << r << "\n";
    for (const auto& id : topo->node_ids())
      out << "# " << id << (topo->is_archive(id) ? " archive" : " aggregator")
          << " hits=" << topo->hit_count(id, a.request) << "\n";
  }
  out.flush();
  topo->stop();
  return code;
}

}  // namespace

int exit_code_for_status(int status) {
  if (status >= 200 && status < 300) return 0;
  if (status == 404) return 4;
  if (status == 508) return 8;
  if (status >= 500 && status < 600) return 5;
  return 3;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memento TimeMap aggregator", "agg"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the aggregator service");
  serve_cmd->add_option("--config", serve.config, "Source registry (JSON)")->required();
  serve_cmd->add_option("--port", serve.port, "Listen port (falls back to $AGG_PORT, then ephemeral)");
  serve_cmd->add_option("--host", serve.host, "Listen address")->capture_default_str();
  serve_cmd->add_option("--dedup", serve.dedup, "exact or datetime")
      ->check(CLI::IsMember({"exact", "datetime"}));
  serve_cmd->add_option("--timeout-ms", serve.timeout_ms, "Per-source timeout")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_option("--deadline-ms", serve.deadline_ms, "Overall deadline")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_option("--mode", serve.mode, "s1 (aggregate) or s0 (relay)")
      ->check(CLI::IsMember({"s0", "s1"}));
  serve_cmd->add_option("--base-url", serve.base_url, "Public base URL for self links");
  serve_cmd->add_flag("--no-loop-guard", serve.no_loop_guard, "Ignore and do not send the trace header");

  QueryArgs query;
  auto* query_cmd = app.add_subcommand("query", "Fetch a TimeMap from an aggregator or archive");
  query_cmd->add_option("uri-r", query.uri_r, "Original resource URI")->required();
  query_cmd->add_option("--endpoint", query.endpoint, "Base URL, e.g. http://127.0.0.1:8080")
      ->required();
  query_cmd->add_option("--format", query.format, "link, json or cdxj")
      ->check(CLI::IsMember({"link", "json", "cdxj"}))
      ->capture_default_str();
  query_cmd->add_flag("--stream", query.stream, "Progressive link-format delivery");
  query_cmd->add_flag("--async", query.async, "Prefer respond-async and poll the job");
  query_cmd->add_option("--prefer-archives", query.prefer_archives,
                        "Registry file sent as the per-request archive set")
      ->check(CLI::ExistingFile);
  query_cmd->add_option("--timeout-ms", query.timeout_ms, "Client timeout")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  query_cmd->add_option("--poll-ms", query.poll_ms, "Async poll interval")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  ScenarioArgs scenario;
  auto* scenario_cmd = app.add_subcommand("scenario", "Desk-scale topologies");
  scenario_cmd->require_subcommand(1);
  auto* run_cmd = scenario_cmd->add_subcommand("run", "Boot a scenario and issue one request");
  run_cmd->add_option("file", scenario.file, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--request", scenario.request, "URI-R to request")->required();
  run_cmd->add_flag("--report", scenario.report, "Print per-node hit counts");
  run_cmd->add_option("--timeout-ms", scenario.timeout_ms, "Client timeout")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*serve_cmd) return do_serve(serve, out, err);
    if (*query_cmd) return do_query(query, out, err);
    if (*run_cmd) return do_scenario(scenario, out, err);
  } catch (const std::exception& e) {
    err << "agg: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace memagg::cli
