#include "memagg/mockarchive.hpp"

#include <algorithm>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "httplib.h"
#include "socket_options.hpp"
#include "memagg/sources.hpp"

namespace memagg::mock {
namespace {

using linkfmt::AbsoluteUri;

std::string short_code(std::string_view stamp, std::string_view uri) {
  // FNV-1a, rendered base36.
  uint64_t h = 1469598103934665603ull;
  for (char c : stamp) h = (h ^ uint8_t(c)) * 1099511628211ull;
  h = (h ^ uint8_t('|')) * 1099511628211ull;
  for (char c : uri) h = (h ^ uint8_t(c)) * 1099511628211ull;
  static constexpr char kDigits[] = "0123456789abcdefghijklmnopqrstuvwxyz";
  std::string code;
  for (int i = 0; i < 8; ++i) {
    code += kDigits[h % 36];
    h /= 36;
  }
  return code;
}

}  // namespace

HoldingsSpec make_holdings(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& entries) {
  HoldingsSpec holdings;
  for (const auto& [uri, stamps] : entries) {
    auto& list = holdings[sources::normalize_uri_r(uri).str()];
    std::set<std::string> seen;
    for (const auto& s : list) seen.insert(s.str());
    for (const auto& s : stamps) {
      if (!seen.insert(s).second) throw ScenarioError("duplicate timestamp " + s + " for " + uri);
      list.push_back(Timestamp14::parse(s));
    }
  }
  return holdings;
}

struct MockArchive::Impl {
  Impl(HoldingsSpec h, BehaviorSpec b) : holdings(std::move(h)), behavior(std::move(b)) {
    for (auto& [uri, stamps] : holdings) std::sort(stamps.begin(), stamps.end());
    server.new_task_queue = [] { return new httplib::ThreadPool(16); };
    server.set_keep_alive_timeout(1);
    server.set_socket_options(detail::exclusive_port);
    server.Get(R"(/timemap/link/.*)",
               [this](const httplib::Request& req, httplib::Response& res) { serve(req, res); });
  }

  HoldingsSpec holdings;
  BehaviorSpec behavior;
  httplib::Server server;
  std::string host = "127.0.0.1";
  int port = -1;
  std::thread listener;
  std::once_flag stop_once;

  std::mutex sleep_mu;
  std::condition_variable sleep_cv;
  bool stopping = false;

  mutable std::mutex hits_mu;
  std::map<std::string, std::size_t> hits;
  std::size_t total = 0;

  std::string base_url() const { return "http://" + host + ":" + std::to_string(port); }

  // False when interrupted by stop().
  bool nap(std::chrono::milliseconds d) {
    if (d.count() <= 0) return true;
    std::unique_lock lock(sleep_mu);
    return !sleep_cv.wait_for(lock, d, [this] { return stopping; });
  }

  std::optional<std::string> body_for(const AbsoluteUri& uri_r) const {
    auto it = holdings.find(uri_r.str());
    if (it == holdings.end() || it->second.empty()) return std::nullopt;
    const std::string base = base_url();
    linkfmt::TimeMapDocument doc(uri_r);
    doc.self = linkfmt::TypedLink{AbsoluteUri::parse(base + "/timemap/link/" + uri_r.str()),
                                  std::string(linkfmt::kLinkFormat)};
    doc.timegate = AbsoluteUri::parse(base + "/timegate/" + uri_r.str());
    for (const auto& stamp : it->second) {
      const std::string uri_m = behavior.opaque_urims
                                    ? base + "/m/" + short_code(stamp.str(), uri_r.str())
                                    : base + "/web/" + stamp.str() + "/" + uri_r.str();
      doc.mementos.push_back(
          linkfmt::Memento{AbsoluteUri::parse(uri_m), stamp.to_datetime(), false, false, std::nullopt});
    }
    doc.sorted = true;
    return linkfmt::serialize_link_timemap(doc);
  }

  void serve(const httplib::Request& req, httplib::Response& res) {
    constexpr std::string_view prefix = "/timemap/link/";
    std::optional<AbsoluteUri> uri_r;
    try {
      uri_r = sources::normalize_uri_r(std::string_view(req.target).substr(prefix.size()));
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(std::string(e.what()) + "\n", "text/plain");
      return;
    }
    {
      std::lock_guard lock(hits_mu);
      ++hits[uri_r->str()];
      ++total;
    }
    if (!nap(behavior.latency)) {
      res.status = 503;
      res.set_content("shutting down\n", "text/plain");
      return;
    }
    if (const auto* hang = std::get_if<Hang>(&behavior.failure)) {
      if (!nap(hang->duration)) {
        res.status = 503;
        res.set_content("shutting down\n", "text/plain");
        return;
      }
    } else if (const auto* http = std::get_if<HttpFailure>(&behavior.failure)) {
      res.status = http->status;
      res.set_content("simulated failure\n", "text/plain");
      return;
    } else if (std::holds_alternative<MalformedBody>(behavior.failure)) {
      res.status = 200;
      res.set_content("<" + uri_r->str() + "; rel=\"original\",\n<broken", linkfmt::kLinkFormat.data());
      return;
    }
    if (auto body = body_for(*uri_r)) {
      res.status = 200;
      res.set_content(*body, std::string(linkfmt::kLinkFormat));
    } else {
      res.status = 404;
      res.set_content("no captures for " + uri_r->str() + "\n", "text/plain");
    }
  }
};

MockArchive::MockArchive(HoldingsSpec holdings, BehaviorSpec behavior)
    : impl_(std::make_unique<Impl>(std::move(holdings), std::move(behavior))) {}

MockArchive::~MockArchive() { stop(); }

int MockArchive::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    port = s.bind_to_any_port(host);
    if (port < 0) throw PortInUse("cannot bind an ephemeral port on " + host);
  } else if (!s.bind_to_port(host, port)) {
    throw PortInUse("port " + std::to_string(port) + " on " + host + " is unavailable");
  }
  impl_->host = host;
  impl_->port = port;
  return port;
}

void MockArchive::start() {
  if (impl_->port < 0) bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockArchive::stop() {
  std::call_once(impl_->stop_once, [this] {
    {
      std::lock_guard lock(impl_->sleep_mu);
      impl_->stopping = true;
    }
    impl_->sleep_cv.notify_all();
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
  });
}

int MockArchive::port() const noexcept { return impl_->port; }
std::string MockArchive::base_url() const { return impl_->base_url(); }
std::string MockArchive::timemap_template() const { return base_url() + "/timemap/link/"; }

std::size_t MockArchive::hit_count(std::string_view uri_r) const {
  const std::string key = sources::normalize_uri_r(uri_r).str();
  std::lock_guard lock(impl_->hits_mu);
  auto it = impl_->hits.find(key);
  return it == impl_->hits.end() ? 0 : it->second;
}

std::size_t MockArchive::total_hits() const {
  std::lock_guard lock(impl_->hits_mu);
  return impl_->total;
}

std::optional<std::string> MockArchive::timemap_body(std::string_view uri_r) const {
  return impl_->body_for(sources::normalize_uri_r(uri_r));
}

std::unique_ptr<MockArchive> start_mock(HoldingsSpec holdings, BehaviorSpec behavior, int port) {
  auto mock = std::make_unique<MockArchive>(std::move(holdings), std::move(behavior));
  mock->bind("127.0.0.1", port);
  mock->start();
  return mock;
}

// ---------------------------------------------------------------------------
// Topology

namespace {

BehaviorSpec behavior_from_json(const nlohmann::json& j) {
  BehaviorSpec b;
  if (j.is_null()) return b;
  if (!j.is_object()) throw ScenarioError("behavior must be an object");
  b.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
  b.opaque_urims = j.value("opaque", false);
  int modes = 0;
  if (int hang = j.value("hang_ms", 0); hang > 0) {
    b.failure = Hang{std::chrono::milliseconds(hang)};
    ++modes;
  }
  if (int status = j.value("http_status", 0); status > 0) {
    b.failure = HttpFailure{status};
    ++modes;
  }
  if (j.value("malformed", false)) {
    b.failure = MalformedBody{};
    ++modes;
  }
  if (modes > 1) throw ScenarioError("at most one failure mode per archive");
  return b;
}

HoldingsSpec holdings_from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  if (j.is_null()) return {};
  if (!j.is_object()) throw ScenarioError("holdings must map URI-Rs to timestamp lists");
  for (const auto& [uri, stamps] : j.items())
    entries.emplace_back(uri, stamps.get<std::vector<std::string>>());
  return make_holdings(entries);
}

}  // namespace

std::unique_ptr<Topology> Topology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError("scenario " + path.string() + ": " + e.what());
  }
}

std::unique_ptr<Topology> Topology::from_json(const nlohmann::json& scenario) {
  const nlohmann::json& nodes = scenario.is_array() ? scenario : scenario.value("nodes", nlohmann::json());
  if (!nodes.is_array() || nodes.empty()) throw ScenarioError("scenario has no nodes");

  std::unique_ptr<Topology> topo(new Topology());
  std::map<std::string, nlohmann::json> aggregator_specs;
  try {
    for (const auto& node : nodes) {
      const std::string id = node.at("id").get<std::string>();
      const std::string kind = node.at("kind").get<std::string>();
      if (std::find(topo->order_.begin(), topo->order_.end(), id) != topo->order_.end())
        throw ScenarioError("duplicate node id " + id);
      topo->order_.push_back(id);
      if (kind == "archive") {
        auto mock = std::make_unique<MockArchive>(
            holdings_from_json(node.value("holdings", nlohmann::json())),
            behavior_from_json(node.value("behavior", nlohmann::json())));
        mock->bind();
        topo->archives_.emplace(id, std::move(mock));
      } else if (kind == "aggregator") {
        service::ServiceOptions opts;
        opts.loop_guard = node.value("loop_guard", true);
        opts.policy.skip_visited_sources = node.value("skip_visited", true);
        opts.policy.dedup = engine::parse_dedup_mode(node.value("dedup", std::string("exact")));
        opts.policy.sort_final = node.value("sort", true);
        opts.policy.per_source_timeout = std::chrono::milliseconds(node.value("timeout_ms", 2000));
        opts.policy.overall_deadline = std::chrono::milliseconds(node.value("deadline_ms", 3000));
        opts.policy.mode =
            node.value("mode", std::string("s1")) == "s0" ? engine::QueryMode::s0 : engine::QueryMode::s1;
        auto svc = std::make_unique<service::Service>(std::move(opts));
        svc->bind();
        topo->aggregators_.emplace(id, std::move(svc));
        aggregator_specs.emplace(id, node);
        if (topo->entry_id_.empty()) topo->entry_id_ = id;
      } else {
        throw ScenarioError("unknown node kind \"" + kind + "\" for " + id);
      }
    }

    for (const auto& [id, node] : aggregator_specs) {
      auto& svc = *topo->aggregators_.at(id);
      std::vector<sources::SourceConfig> configs;
      for (const auto& ref_json : node.value("sources", nlohmann::json::array())) {
        const std::string ref = ref_json.get<std::string>();
        std::string templ;
        if (auto a = topo->archives_.find(ref); a != topo->archives_.end())
          templ = a->second->timemap_template();
        else if (auto g = topo->aggregators_.find(ref); g != topo->aggregators_.end())
          templ = g->second->base_url() + "/timemap/link/";
        else
          throw ScenarioError("aggregator " + id + " references unknown node " + ref);
        sources::SourceConfig cfg;
        cfg.id = ref;
        cfg.name = ref;
        cfg.timemap_template = templ;
        cfg.timeout_ms = int(svc.policy().per_source_timeout.count());
        configs.push_back(std::move(cfg));
      }
      svc.set_registry(sources::SourceRegistry(std::move(configs)));
    }
  } catch (const ScenarioError&) {
    throw;
  } catch (const PortInUse&) {
    throw;
  } catch (const std::exception& e) {
    throw ScenarioError(std::string("invalid scenario: ") + e.what());
  }

  for (auto& [id, mock] : topo->archives_) mock->start();
  for (auto& [id, svc] : topo->aggregators_) svc->start();
  return topo;
}

Topology::~Topology() { stop(); }

void Topology::stop() {
  for (auto& [id, mock] : archives_) mock->stop();
  std::vector<std::thread> stoppers;
  for (auto& [id, svc] : aggregators_) stoppers.emplace_back([&svc = *svc] { svc.stop(); });
  for (auto& t : stoppers) t.join();
}

bool Topology::is_archive(std::string_view id) const { return archives_.count(id) > 0; }

MockArchive& Topology::archive(std::string_view id) {
  auto it = archives_.find(id);
  if (it == archives_.end()) throw ScenarioError("no archive node " + std::string(id));
  return *it->second;
}

service::Service& Topology::aggregator(std::string_view id) {
  auto it = aggregators_.find(id);
  if (it == aggregators_.end()) throw ScenarioError("no aggregator node " + std::string(id));
  return *it->second;
}

service::Service& Topology::entry() {
  if (entry_id_.empty()) throw ScenarioError("scenario has no aggregator node");
  return aggregator(entry_id_);
}

const std::string& Topology::entry_id() const { return entry_id_; }

std::size_t Topology::hit_count(std::string_view id, std::string_view uri_r) const {
  if (auto a = archives_.find(id); a != archives_.end()) return a->second->hit_count(uri_r);
  if (auto g = aggregators_.find(id); g != aggregators_.end())
    return g->second->timemap_requests(sources::normalize_uri_r(uri_r).str());
  throw ScenarioError("no node " + std::string(id));
}

}  // namespace memagg::mock
