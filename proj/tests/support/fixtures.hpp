#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "httplib.h"
#include "memagg/linkfmt.hpp"

namespace memagg::testing {

// A five-memento TimeMap for https://icadl.net as served by a MemGator-style
// aggregator.
inline constexpr std::string_view kIcadlTimeMap =
    R"(<https://icadl.net>; rel="original",
<https://memgator.example/timemap/link/https://icadl.net>; rel="self"; type="application/link-format",
<https://web.archive.org/web/20180503103914/http://icadl.net/>; rel="first memento"; datetime="Thu, 03 May 2018 10:39:14 GMT",
<https://web.archive.org/web/20200815050320/https://icadl.net/>; rel="memento"; datetime="Sat, 15 Aug 2020 05:03:20 GMT",
<https://web.archive.org/web/20200826164340/https://icadl.net/>; rel="memento"; datetime="Wed, 26 Aug 2020 16:43:40 GMT",
<https://web.archive.org/web/20201101023226/https://icadl.net/>; rel="memento"; datetime="Sun, 01 Nov 2020 02:32:26 GMT",
<http://web.archive.org/web/20220602205625/https://icadl.net/>; rel="last memento"; datetime="Thu, 02 Jun 2022 20:56:25 GMT",
<https://memgator.example/timemap/link/https://icadl.net>; rel="timemap"; type="application/link-format",
<https://memgator.example/timemap/json/https://icadl.net>; rel="timemap"; type="application/json",
<https://memgator.example/timemap/cdxj/https://icadl.net>; rel="timemap"; type="application/cdxj+ors",
<https://memgator.example/timegate/https://icadl.net>; rel="timegate")";

inline constexpr const char* kIcadlStamps[] = {"20180503103914", "20200815050320", "20200826164340",
                                               "20201101023226", "20220602205625"};

inline linkfmt::Memento memento(std::string_view uri_m, std::string_view ts14) {
  return linkfmt::Memento{linkfmt::AbsoluteUri::parse(uri_m),
                          linkfmt::Timestamp14::parse(ts14).to_datetime(), false, false,
                          std::nullopt};
}

inline httplib::Client client_for(const std::string& base_url, int timeout_ms = 10000) {
  httplib::Client c(base_url);
  c.set_url_encode(false);
  c.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  c.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  return c;
}

/// A unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path write(const std::string& name, std::string_view content) const;

 private:
  std::filesystem::path path_;
};

}  // namespace memagg::testing
