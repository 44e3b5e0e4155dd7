#include "memagg/service.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "httplib.h"
#include "socket_options.hpp"
#include "memagg/jobs.hpp"
#include "memagg/prefer.hpp"

namespace memagg::service {
namespace {

using engine::AggregationOutcome;
using linkfmt::AbsoluteUri;
using linkfmt::TimeMapDocument;
using sources::SourceConfig;

void log_line(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::clog << "[memagg] " << msg << std::endl;
}

struct TimemapTarget {
  std::string format;
  std::string uri;
  bool stream = false;
};

// "/timemap/{format}/{uri-r}[?query]" taken from the raw request-target. A
// `stream=true` query parameter belongs to us; anything else in the query is
// part of the URI-R.
std::optional<TimemapTarget> parse_timemap_target(std::string_view target) {
  constexpr std::string_view prefix = "/timemap/";
  if (target.substr(0, prefix.size()) != prefix) return std::nullopt;
  target.remove_prefix(prefix.size());
  const auto slash = target.find('/');
  if (slash == std::string_view::npos) return std::nullopt;

  TimemapTarget out;
  out.format = std::string(target.substr(0, slash));
  std::string_view rest = target.substr(slash + 1);
  const auto q = rest.find('?');
  out.uri = std::string(rest.substr(0, q));
  if (q != std::string_view::npos) {
    std::string kept;
    std::string_view query = rest.substr(q + 1);
    while (true) {
      const auto amp = query.find('&');
      const std::string_view param = query.substr(0, amp);
      if (param == "stream=true") {
        out.stream = true;
      } else {
        if (!kept.empty()) kept += '&';
        kept.append(param);
      }
      if (amp == std::string_view::npos) break;
      query.remove_prefix(amp + 1);
    }
    if (!kept.empty()) out.uri += "?" + kept;
  }
  return out;
}

bool known_format(std::string_view f) { return f == "link" || f == "json" || f == "cdxj"; }

std::string serialize_as(std::string_view format, const TimeMapDocument& doc) {
  if (format == "json") return linkfmt::serialize_json_timemap(doc);
  if (format == "cdxj") return linkfmt::serialize_cdxj_timemap(doc);
  return linkfmt::serialize_link_timemap(doc);
}

// Snapshot as shown to a poller: unsorted semantics, no first/last tags.
std::string render_partial(TimeMapDocument doc) {
  doc.mementos = linkfmt::without_position_tags(std::move(doc.mementos));
  doc.sorted = false;
  return linkfmt::serialize_link_timemap(doc);
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

class StreamChannel {
 public:
  void push(std::string chunk) {
    {
      std::lock_guard lock(mu_);
      chunks_.push_back(std::move(chunk));
    }
    cv_.notify_all();
  }

  void finish(std::string trailer) {
    {
      std::lock_guard lock(mu_);
      chunks_.push_back(std::move(trailer));
      finished_ = true;
    }
    cv_.notify_all();
  }

  std::optional<std::string> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return finished_ || !chunks_.empty(); });
    if (chunks_.empty()) return std::nullopt;
    std::string chunk = std::move(chunks_.front());
    chunks_.pop_front();
    return chunk;
  }

  // Touched only from the engine's progress sink, which is serialized.
  std::set<std::string> emitted;

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> chunks_;
  bool finished_ = false;
};

}  // namespace

std::string render_report_header(std::span<const engine::SourceResult> reports) {
  std::vector<std::string> items;
  for (const auto& r : reports)
    items.push_back(r.source_id + ":" + r.label() + ":" + std::to_string(r.latency.count()));
  return join(items, ",");
}

std::string_view media_type_for(std::string_view format) {
  if (format == "json") return linkfmt::kJson;
  if (format == "cdxj") return linkfmt::kCdxj;
  return linkfmt::kLinkFormat;
}

struct Service::Impl {
  explicit Impl(ServiceOptions opts)
      : options(std::move(opts)),
        identity(options.identity ? *options.identity : trace::AggregatorIdentity::generate()),
        registry(std::make_shared<const sources::SourceRegistry>(options.registry)),
        jobs(options.job_ttl) {
    options.policy.validate();
    if (!options.fetcher) options.fetcher = engine::http_fetcher();
    const std::size_t threads = options.worker_threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server.set_keep_alive_timeout(1);
    server.set_socket_options(detail::exclusive_port);
    routes();
  }

  ServiceOptions options;
  trace::AggregatorIdentity identity;

  mutable std::mutex registry_mu;
  std::shared_ptr<const sources::SourceRegistry> registry;

  httplib::Server server;
  std::unique_ptr<engine::Aggregator> aggregator;
  std::string base_url;
  int port = -1;
  std::thread listener;
  std::once_flag stop_once;

  JobStore jobs;
  std::mutex bg_mu;
  std::condition_variable bg_cv;
  std::size_t bg_active = 0;

  mutable std::mutex count_mu;
  std::map<std::string, std::size_t> per_uri;
  std::size_t total_requests = 0;
  std::size_t traced = 0;

  std::shared_ptr<const sources::SourceRegistry> current_registry() const {
    std::lock_guard lock(registry_mu);
    return registry;
  }

  void routes() {
    server.Get(R"(/timemap/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      handle_timemap(req, res);
    });
    server.Get(R"(/job/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle_job(req.matches[1].str(), res);
    });
    server.Get(R"(/timegate(/.*)?)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 501;
      res.set_content(
          "TimeGate datetime negotiation is not implemented by this aggregator.\n"
          "Use /timemap/link/{uri-r}, /timemap/json/{uri-r} or /timemap/cdxj/{uri-r}.\n",
          "text/plain");
    });
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("ok", "text/plain");
    });
    server.Get("/config", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(config_json().dump(2) + "\n", "application/json");
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      res.set_content(res.status == 404 ? "not found: no such route\n"
                                        : std::string(httplib::status_message(res.status)) + "\n",
                      "text/plain");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  nlohmann::json config_json() const {
    const auto& p = options.policy;
    return nlohmann::json{
        {"instance_id", identity.id()},
        {"base_url", base_url},
        {"loop_guard", options.loop_guard},
        {"policy",
         {{"dedup", std::string(engine::to_string(p.dedup))},
          {"sort_final", p.sort_final},
          {"per_source_timeout_ms", p.per_source_timeout.count()},
          {"overall_deadline_ms", p.overall_deadline.count()},
          {"mode", p.mode == engine::QueryMode::s0 ? "s0" : "s1"},
          {"skip_visited_sources", p.skip_visited_sources}}},
        {"sources", sources::sources_to_json(current_registry()->all())},
    };
  }

  std::size_t queryable_count(const std::vector<SourceConfig>& effective,
                              const std::optional<trace::RequestTrace>& trace) const {
    std::vector<SourceConfig> enabled;
    std::copy_if(effective.begin(), effective.end(), std::back_inserter(enabled),
                 [](const SourceConfig& s) { return s.enabled; });
    if (trace && options.policy.skip_visited_sources)
      return trace::filter_visited(enabled, *trace).kept.size();
    return enabled.size();
  }

  void write_outcome(httplib::Response& res, const AggregationOutcome& outcome,
                     std::string_view format) const {
    res.set_header(std::string(kReportHeader), render_report_header(outcome.reports));
    res.set_header(std::string(kCompleteHeader), outcome.complete ? "true" : "false");
    if (outcome.document.mementos.empty()) {
      res.status = 404;
      res.set_content("no mementos for " + outcome.document.uri_r.str() + "\n", "text/plain");
      return;
    }
    res.status = 200;
    res.set_content(serialize_as(format, outcome.document), std::string(media_type_for(format)));
  }

  void handle_timemap(const httplib::Request& req, httplib::Response& res) {
    const auto target = parse_timemap_target(req.target);
    if (!target || !known_format(target->format)) {
      res.status = 400;
      res.set_content("unknown TimeMap format; expected link, json or cdxj\n", "text/plain");
      return;
    }
    std::optional<AbsoluteUri> uri_r;
    try {
      uri_r = sources::normalize_uri_r(target->uri);
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(std::string(e.what()) + "\n", "text/plain");
      return;
    }
    if (target->stream && target->format != "link") {
      res.status = 400;
      res.set_content("streaming is only available for the link format\n", "text/plain");
      return;
    }

    const std::string trace_name(trace::kHeaderName);
    const bool has_trace_header = req.has_header(trace_name);
    {
      std::lock_guard lock(count_mu);
      ++total_requests;
      ++per_uri[uri_r->str()];
      if (has_trace_header) ++traced;
    }

    std::optional<trace::RequestTrace> trace;
    if (options.loop_guard) {
      trace = trace::new_trace(identity);
      if (has_trace_header) {
        try {
          trace = trace::check_and_extend(
              trace::parse_trace_header(req.get_header_value(trace_name)), identity);
          res.set_header(trace_name, trace::encode_trace_header(*trace));
        } catch (const trace::CycleDetected& e) {
          res.status = 508;
          res.set_content(std::string(e.what()) + "\n", "text/plain");
          return;
        } catch (const trace::MalformedTrace& e) {
          log_line(std::string("ignoring malformed trace header: ") + e.what());
        }
      }
    }

    std::vector<std::string> prefer_values;
    for (std::size_t i = 0, n = req.get_header_value_count("Prefer"); i < n; ++i)
      prefer_values.push_back(req.get_header_value("Prefer", i));
    prefer::PreferDirective directive;
    try {
      directive = prefer::parse_prefer(join(prefer_values, ", "));
    } catch (const prefer::BadPreference& e) {
      log_line(std::string("preference not applied: ") + e.what());
      directive = e.directive();
    }
    const auto registry_now = current_registry();
    auto applied = prefer::apply_preference(directive, *registry_now);

    std::vector<std::string> applied_values;
    if (auto v = prefer::render_preference_applied(applied.applied)) applied_values.push_back(*v);
    if (directive.respond_async && !target->stream) applied_values.push_back("respond-async");
    if (!applied_values.empty())
      res.set_header(std::string(prefer::kAppliedHeader), join(applied_values, ", "));

    const std::size_t total = queryable_count(applied.effective, trace);
    if (total == 0) {
      res.status = 404;
      res.set_content("no sources to query for " + uri_r->str() + "\n", "text/plain");
      return;
    }

    if (target->stream) return stream(res, *uri_r, std::move(applied.effective), trace);
    if (directive.respond_async)
      return start_job(res, *uri_r, target->format, std::move(applied.effective), trace, total);

    try {
      const auto outcome =
          aggregator->aggregate(*uri_r, applied.effective, trace, options.policy);
      write_outcome(res, outcome, target->format);
    } catch (const engine::NoSources& e) {
      res.status = 404;
      res.set_content(std::string(e.what()) + "\n", "text/plain");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(std::string("aggregation failed: ") + e.what() + "\n", "text/plain");
    }
  }

  void start_job(httplib::Response& res, const AbsoluteUri& uri_r, const std::string& format,
                 std::vector<SourceConfig> effective,
                 const std::optional<trace::RequestTrace>& trace, std::size_t total) {
    const std::string id = jobs.create(
        format, AggregationOutcome{engine::make_skeleton(uri_r, base_url), {}, false}, total);
    {
      std::lock_guard lock(bg_mu);
      ++bg_active;
    }
    std::thread([this, id, uri_r, effective = std::move(effective), trace] {
      try {
        auto outcome = aggregator->aggregate(
            uri_r, effective, trace, options.policy,
            [this, &id](const engine::ProgressEvent& ev) { jobs.update(id, ev.snapshot, ev.resolved); });
        jobs.complete(id, std::move(outcome));
      } catch (const std::exception& e) {
        log_line("job " + id + " failed: " + e.what());
        jobs.complete(id, AggregationOutcome{engine::make_skeleton(uri_r, base_url), {}, true});
      }
      std::lock_guard lock(bg_mu);
      --bg_active;
      bg_cv.notify_all();
    }).detach();

    res.status = 202;
    res.set_header("Location", "/job/" + id);
    res.set_header("Retry-After", "1");
    res.set_content("aggregation in progress; poll /job/" + id + "\n", "text/plain");
  }

  void handle_job(const std::string& id, httplib::Response& res) {
    const auto job = jobs.get(id);
    if (!job) {
      res.status = 404;
      res.set_content("unknown or expired job " + id + "\n", "text/plain");
      return;
    }
    if (job->state == JobState::complete) {
      write_outcome(res, job->outcome_so_far, job->format);
      return;
    }
    res.status = 202;
    res.set_header("Retry-After", "1");
    res.set_header(std::string(kProgressHeader),
                   std::to_string(job->resolved) + "/" + std::to_string(job->total));
    res.set_content(render_partial(job->outcome_so_far.document),
                    std::string(linkfmt::kLinkFormat));
  }

  void stream(httplib::Response& res, const AbsoluteUri& uri_r, std::vector<SourceConfig> effective,
              const std::optional<trace::RequestTrace>& trace) {
    res.set_chunked_content_provider(
        std::string(linkfmt::kLinkFormat),
        [this, uri_r, effective = std::move(effective), trace](std::size_t,
                                                               httplib::DataSink& sink) {
          // Header entries first; every entry is followed by ",\n" so batches
          // can be appended as sources resolve.
          std::string head = linkfmt::serialize_link_timemap(engine::make_skeleton(uri_r, base_url));
          head.back() = ',';
          head += '\n';
          bool alive = sink.write(head.data(), head.size());

          auto channel = std::make_shared<StreamChannel>();
          std::thread worker([this, channel, &uri_r, &effective, &trace] {
            std::string trailer;
            try {
              const auto outcome = aggregator->aggregate(
                  uri_r, effective, trace, options.policy,
                  [channel](const engine::ProgressEvent& ev) {
                    std::string batch;
                    for (const auto& m : ev.snapshot.mementos)
                      if (channel->emitted.insert(m.uri_m.str()).second)
                        batch += linkfmt::serialize_memento_link(m, false) + ",\n";
                    if (!batch.empty()) channel->push(std::move(batch));
                  });
              const char* status = outcome.document.mementos.empty() ? "empty"
                                   : outcome.complete                ? "complete"
                                                                     : "partial";
              trailer = "# report=" + render_report_header(outcome.reports) + "\n# status=" +
                        status + "\n";
            } catch (const engine::NoSources&) {
              trailer = "# status=no-sources\n";
            } catch (const std::exception& e) {
              log_line(std::string("stream aggregation failed: ") + e.what());
              trailer = "# status=error\n";
            }
            channel->finish(std::move(trailer));
          });
          while (auto chunk = channel->pop())
            if (alive) alive = sink.write(chunk->data(), chunk->size());
          worker.join();
          if (alive) sink.done();
          return alive;
        });
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    port = s.bind_to_any_port(host);
    if (port < 0) throw PortInUse("cannot bind an ephemeral port on " + host);
  } else if (!s.bind_to_port(host, port)) {
    throw PortInUse("port " + std::to_string(port) + " on " + host + " is unavailable");
  }
  impl_->port = port;
  if (!impl_->options.public_base_url.empty()) {
    impl_->base_url = impl_->options.public_base_url;
    while (!impl_->base_url.empty() && impl_->base_url.back() == '/') impl_->base_url.pop_back();
  } else {
    const std::string shown = host == "0.0.0.0" || host.empty() ? "127.0.0.1" : host;
    impl_->base_url = "http://" + shown + ":" + std::to_string(port);
  }
  impl_->aggregator = std::make_unique<engine::Aggregator>(impl_->options.fetcher, impl_->base_url);
  return port;
}

void Service::start() {
  if (impl_->port < 0) bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::listen() {
  if (impl_->port < 0) bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  std::call_once(impl_->stop_once, [this] {
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
    std::unique_lock lock(impl_->bg_mu);
    impl_->bg_cv.wait(lock, [this] { return impl_->bg_active == 0; });
  });
}

int Service::port() const noexcept { return impl_->port; }
const std::string& Service::base_url() const noexcept { return impl_->base_url; }
const trace::AggregatorIdentity& Service::identity() const noexcept { return impl_->identity; }
const engine::AggregationPolicy& Service::policy() const noexcept { return impl_->options.policy; }
bool Service::loop_guard() const noexcept { return impl_->options.loop_guard; }

void Service::set_registry(sources::SourceRegistry registry) {
  auto next = std::make_shared<const sources::SourceRegistry>(std::move(registry));
  std::lock_guard lock(impl_->registry_mu);
  impl_->registry = std::move(next);
}

std::shared_ptr<const sources::SourceRegistry> Service::registry() const {
  return impl_->current_registry();
}

std::size_t Service::timemap_requests(std::optional<std::string_view> uri_r) const {
  std::lock_guard lock(impl_->count_mu);
  if (!uri_r) return impl_->total_requests;
  auto it = impl_->per_uri.find(std::string(*uri_r));
  return it == impl_->per_uri.end() ? 0 : it->second;
}

std::size_t Service::traced_requests() const {
  std::lock_guard lock(impl_->count_mu);
  return impl_->traced;
}

}  // namespace memagg::service
