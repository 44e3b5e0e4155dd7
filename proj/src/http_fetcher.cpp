#include <chrono>

#include "httplib.h"
#include "memagg/engine.hpp"

namespace memagg::engine {

Fetcher http_fetcher() {
  return [](const FetchRequest& req) {
    using Clock = std::chrono::steady_clock;
    FetchResponse out;
    const std::string origin =
        std::string(req.uri.scheme()) + "://" + std::string(req.uri.authority());
    std::string target(req.uri.rest());
    target = target.substr(0, target.find('#'));
    if (target.empty()) target = "/";

    httplib::Client client(origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(req.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(req.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    // The URI-R travels raw inside the path.
    client.set_url_encode(false);
    client.set_follow_location(true);

    httplib::Headers headers{{"Accept", std::string(linkfmt::kLinkFormat)}};
    if (!req.trace_header.empty())
      headers.emplace(std::string(trace::kHeaderName), req.trace_header);

    const auto started = Clock::now();
    auto res = client.Get(target, headers);
    if (!res) {
      const auto elapsed = Clock::now() - started;
      const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                             elapsed + std::chrono::milliseconds(20) >= req.timeout;
      out.transport = timed_out ? FetchResponse::Transport::timeout
                                : FetchResponse::Transport::network_error;
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = std::move(res->body);
    return out;
  };
}

}  // namespace memagg::engine
