#pragma once

// Memento TimeMap model plus its link-format, JSON and CDXJ codecs.

#include <chrono>
#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memagg/error.hpp"

namespace memagg::linkfmt {

class InvalidUri : public Error {
 public:
  using Error::Error;
};
class MalformedLink : public Error {
 public:
  using Error::Error;
};
class BadDatetime : public Error {
 public:
  using Error::Error;
};
class MissingOriginal : public Error {
 public:
  using Error::Error;
};
class OutOfRange : public Error {
 public:
  using Error::Error;
};

inline constexpr std::string_view kLinkFormat = "application/link-format";
inline constexpr std::string_view kJson = "application/json";
inline constexpr std::string_view kCdxj = "application/cdxj+ors";

/// An absolute http(s) URI. Scheme and host are lowercased on construction;
/// everything after the authority is kept byte-for-byte.
class AbsoluteUri {
 public:
  /// Throws InvalidUri.
  static AbsoluteUri parse(std::string_view text);
  static std::optional<AbsoluteUri> try_parse(std::string_view text) noexcept;

  const std::string& str() const noexcept { return value_; }
  std::string_view scheme() const noexcept;
  std::string_view authority() const noexcept;
  /// Path, query and fragment, verbatim.
  std::string_view rest() const noexcept;

  friend bool operator==(const AbsoluteUri&, const AbsoluteUri&) = default;
  friend auto operator<=>(const AbsoluteUri& a, const AbsoluteUri& b) {
    return a.value_ <=> b.value_;
  }

 private:
  AbsoluteUri(std::string value, std::size_t scheme_len, std::size_t authority_end)
      : value_(std::move(value)), scheme_len_(scheme_len), authority_end_(authority_end) {}

  std::string value_;
  std::size_t scheme_len_ = 0;
  std::size_t authority_end_ = 0;
};

/// UTC instant with second precision, rendered as an RFC 1123 date.
class HttpDatetime {
 public:
  using Seconds = std::chrono::sys_seconds;

  HttpDatetime() = default;
  explicit HttpDatetime(Seconds instant) noexcept : instant_(instant) {}

  /// Strict "Thu, 03 May 2018 10:39:14 GMT". RFC 850 and asctime forms are
  /// rejected, as is a weekday that disagrees with the date. Throws BadDatetime.
  static HttpDatetime parse_rfc1123(std::string_view text);

  /// Throws BadDatetime on an invalid calendar date or time of day.
  static HttpDatetime from_civil(int year, unsigned month, unsigned day,
                                 unsigned hour, unsigned minute, unsigned second);

  Seconds instant() const noexcept { return instant_; }
  std::string rfc1123() const;
  /// "2018-05-03T10:39:14Z"
  std::string iso8601() const;

  friend auto operator<=>(const HttpDatetime&, const HttpDatetime&) = default;

 private:
  Seconds instant_{};
};

/// YYYYMMDDhhmmss, years 1000 through 9999.
class Timestamp14 {
 public:
  /// Throws BadDatetime for malformed digits, OutOfRange for year < 1000.
  static Timestamp14 parse(std::string_view digits);
  /// Throws OutOfRange outside years 1000..9999.
  static Timestamp14 from_datetime(const HttpDatetime& dt);

  HttpDatetime to_datetime() const;
  const std::string& str() const noexcept { return digits_; }

  friend auto operator<=>(const Timestamp14&, const Timestamp14&) = default;

 private:
  explicit Timestamp14(std::string digits) : digits_(std::move(digits)) {}
  std::string digits_;
};

inline Timestamp14 datetime_to_timestamp14(const HttpDatetime& dt) {
  return Timestamp14::from_datetime(dt);
}
inline HttpDatetime timestamp14_to_datetime(const Timestamp14& ts) {
  return ts.to_datetime();
}

/// One capture. The "memento" relation is implicit; first/last are the
/// optional positional tags.
struct Memento {
  AbsoluteUri uri_m;
  HttpDatetime datetime;
  bool first = false;
  bool last = false;
  std::optional<std::string> source_id;

  /// "memento", "first memento", "last memento" or "first last memento".
  std::string rel_value() const;

  friend bool operator==(const Memento&, const Memento&) = default;
};

struct TypedLink {
  AbsoluteUri uri;
  std::string type;

  friend bool operator==(const TypedLink&, const TypedLink&) = default;
};

struct TimeMapDocument {
  explicit TimeMapDocument(AbsoluteUri original) : uri_r(std::move(original)) {}

  AbsoluteUri uri_r;
  std::optional<TypedLink> self;
  /// rel="timemap" variants (link, json, cdxj).
  std::vector<TypedLink> timemaps;
  std::optional<AbsoluteUri> timegate;
  std::vector<Memento> mementos;
  /// Link-values with relations this codec does not interpret, kept verbatim.
  std::vector<std::string> extras;
  /// When set, first/last tags are derived from position on serialization.
  bool sorted = false;

  friend bool operator==(const TimeMapDocument&, const TimeMapDocument&) = default;
};

TimeMapDocument parse_link_timemap(std::string_view text);

std::string serialize_link_timemap(const TimeMapDocument& doc);
std::string serialize_json_timemap(const TimeMapDocument& doc);
std::string serialize_cdxj_timemap(const TimeMapDocument& doc);

/// Serializes one memento as a link-value, without separator.
std::string serialize_memento_link(const Memento& m, bool with_position_tags = true);

/// Returns a copy with first/last tags cleared.
std::vector<Memento> without_position_tags(std::vector<Memento> mementos);

}  // namespace memagg::linkfmt
