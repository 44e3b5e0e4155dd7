#include "memagg/linkfmt.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <utility>

#include "json.hpp"

namespace memagg::linkfmt {
namespace {

using namespace std::chrono;

constexpr std::array<std::string_view, 7> kWeekdays = {"Sun", "Mon", "Tue", "Wed",
                                                       "Thu", "Fri", "Sat"};
constexpr std::array<std::string_view, 12> kMonths = {"Jan", "Feb", "Mar", "Apr",
                                                      "May", "Jun", "Jul", "Aug",
                                                      "Sep", "Oct", "Nov", "Dec"};

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) {
  return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

bool forbidden_uri_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return u <= 0x20 || u == 0x7f || c == '<' || c == '>' || c == '"';
}

bool valid_host(std::string_view host) {
  if (host.empty()) return false;
  if (host.front() == '[') {
    if (host.back() != ']' || host.size() < 3) return false;
    return std::all_of(host.begin() + 1, host.end() - 1, [](char c) {
      return is_alnum(c) || c == ':' || c == '.';
    });
  }
  return std::all_of(host.begin(), host.end(), [](char c) {
    return is_alnum(c) || c == '-' || c == '.' || c == '_' || c == '~' || c == '%';
  });
}

// Parses `n` digits at `s[pos]`; -1 on failure.
int digits_at(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) return -1;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (!is_digit(s[i])) return -1;
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

struct Civil {
  int year;
  unsigned month, day, hour, minute, second, weekday;
};

Civil to_civil(sys_seconds t) {
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  return Civil{int(ymd.year()),
               unsigned(ymd.month()),
               unsigned(ymd.day()),
               unsigned(hms.hours().count()),
               unsigned(hms.minutes().count()),
               unsigned(hms.seconds().count()),
               weekday{day_point}.c_encoding()};
}

// ---------------------------------------------------------------------------
// Link-format tokenizer

struct RawLink {
  std::string_view target;
  std::vector<std::pair<std::string, std::string>> params;
  std::string_view raw;

  const std::string* param(std::string_view name) const {
    for (const auto& [k, v] : params)
      if (k == name) return &v;
    return nullptr;
  }
};

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

bool is_tchar(char c) {
  return is_alnum(c) || std::string_view("!#$%&'*+-.^_`|~").find(c) != std::string_view::npos;
}

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : s_(text) {}

  std::vector<RawLink> run() {
    std::vector<RawLink> links;
    while (true) {
      skip_separators();
      if (i_ >= s_.size()) break;
      links.push_back(link_value());
      skip_ws();
      // Comment lines may also trail the final link-value.
      while (i_ < s_.size() && s_[i_] == '#' && s_[i_ - 1] == '\n') {
        while (i_ < s_.size() && s_[i_] != '\n') ++i_;
        skip_ws();
      }
      if (i_ < s_.size() && s_[i_] != ',')
        fail("expected ',' between link-values");
    }
    return links;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw MalformedLink(what + " at offset " + std::to_string(i_));
  }

  void skip_ws() {
    while (i_ < s_.size() && is_ws(s_[i_])) ++i_;
  }

  // Whitespace, empty list elements and '#' comment lines.
  void skip_separators() {
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (is_ws(c) || c == ',') {
        ++i_;
      } else if (c == '#') {
        while (i_ < s_.size() && s_[i_] != '\n') ++i_;
      } else {
        break;
      }
    }
  }

  RawLink link_value() {
    RawLink link;
    const std::size_t start = i_;
    if (s_[i_] != '<') fail("expected '<'");
    ++i_;
    const std::size_t target_begin = i_;
    while (i_ < s_.size() && s_[i_] != '>') {
      if (s_[i_] == '<') fail("unbalanced angle brackets");
      ++i_;
    }
    if (i_ >= s_.size()) fail("unbalanced angle brackets");
    link.target = s_.substr(target_begin, i_ - target_begin);
    ++i_;
    std::size_t end = i_;

    while (true) {
      skip_ws();
      if (i_ >= s_.size() || s_[i_] != ';') break;
      ++i_;
      skip_ws();
      const std::size_t name_begin = i_;
      while (i_ < s_.size() && is_tchar(s_[i_])) ++i_;
      if (i_ == name_begin) fail("empty link parameter name");
      std::string name = lowered(s_.substr(name_begin, i_ - name_begin));
      std::string value;
      skip_ws();
      if (i_ < s_.size() && s_[i_] == '=') {
        ++i_;
        skip_ws();
        value = param_value();
      }
      link.params.emplace_back(std::move(name), std::move(value));
      end = i_;
    }
    link.raw = s_.substr(start, end - start);
    return link;
  }

  std::string param_value() {
    std::string value;
    if (i_ < s_.size() && s_[i_] == '"') {
      ++i_;
      while (true) {
        if (i_ >= s_.size()) fail("unterminated quoted string");
        char c = s_[i_++];
        if (c == '"') break;
        if (c == '\\') {
          if (i_ >= s_.size()) fail("unterminated quoted string");
          c = s_[i_++];
        }
        value += c;
      }
      return value;
    }
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (is_ws(c) || c == ';' || c == ',' || c == '"' || c == '<' || c == '>') break;
      value += c;
      ++i_;
    }
    return value;
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_ws(s[i])) ++i;
    const std::size_t b = i;
    while (i < s.size() && !is_ws(s[i])) ++i;
    if (i > b) out.push_back(lowered(s.substr(b, i - b)));
  }
  return out;
}

AbsoluteUri link_target(const RawLink& link) {
  if (auto uri = AbsoluteUri::try_parse(link.target)) return *std::move(uri);
  throw MalformedLink("not an absolute http(s) URI: <" + std::string(link.target) + ">");
}

std::string quote_value(std::string_view v) {
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string typed_link(const TypedLink& link, std::string_view rel) {
  std::string out = "<" + link.uri.str() + ">; rel=\"" + std::string(rel) + "\"";
  if (!link.type.empty()) out += "; type=" + quote_value(link.type);
  return out;
}

std::string json_string(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

}  // namespace

// ---------------------------------------------------------------------------
// AbsoluteUri

std::optional<AbsoluteUri> AbsoluteUri::try_parse(std::string_view text) noexcept {
  try {
    if (text.empty() || std::any_of(text.begin(), text.end(), forbidden_uri_char))
      return std::nullopt;
    const std::size_t sep = text.find("://");
    if (sep == std::string_view::npos) return std::nullopt;
    std::string scheme = lowered(text.substr(0, sep));
    if (scheme != "http" && scheme != "https") return std::nullopt;

    const std::size_t auth_begin = sep + 3;
    std::size_t auth_end = text.find_first_of("/?#", auth_begin);
    if (auth_end == std::string_view::npos) auth_end = text.size();
    const std::string_view authority = text.substr(auth_begin, auth_end - auth_begin);
    if (authority.empty()) return std::nullopt;

    const std::size_t at = authority.rfind('@');
    const std::string_view userinfo =
        at == std::string_view::npos ? std::string_view{} : authority.substr(0, at + 1);
    std::string_view hostport =
        at == std::string_view::npos ? authority : authority.substr(at + 1);

    std::string_view host = hostport;
    std::string_view port;
    const std::size_t close = hostport.rfind(']');
    const std::size_t colon = hostport.rfind(':');
    if (colon != std::string_view::npos && (close == std::string_view::npos || colon > close)) {
      host = hostport.substr(0, colon);
      port = hostport.substr(colon);  // includes ':'
      if (!std::all_of(port.begin() + 1, port.end(), is_digit)) return std::nullopt;
      if (port.size() > 6 || (port.size() > 1 && std::stoi(std::string(port.substr(1))) > 65535))
        return std::nullopt;
    }
    if (!valid_host(host)) return std::nullopt;

    std::string value = scheme + "://";
    value += userinfo;
    value += lowered(host);
    value += port;
    const std::size_t authority_end = value.size();
    value += text.substr(auth_end);
    return AbsoluteUri(std::move(value), scheme.size(), authority_end);
  } catch (...) {
    return std::nullopt;
  }
}

AbsoluteUri AbsoluteUri::parse(std::string_view text) {
  if (auto uri = try_parse(text)) return *std::move(uri);
  throw InvalidUri("not an absolute http(s) URI: " + std::string(text));
}

std::string_view AbsoluteUri::scheme() const noexcept {
  return std::string_view(value_).substr(0, scheme_len_);
}

std::string_view AbsoluteUri::authority() const noexcept {
  const std::size_t begin = scheme_len_ + 3;
  return std::string_view(value_).substr(begin, authority_end_ - begin);
}

std::string_view AbsoluteUri::rest() const noexcept {
  return std::string_view(value_).substr(authority_end_);
}

// ---------------------------------------------------------------------------
// HttpDatetime / Timestamp14

HttpDatetime HttpDatetime::from_civil(int y, unsigned mo, unsigned d, unsigned h,
                                      unsigned mi, unsigned s) {
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59)
    throw BadDatetime("invalid calendar date or time");
  return HttpDatetime(sys_days{ymd} + hours{h} + minutes{mi} + seconds{s});
}

HttpDatetime HttpDatetime::parse_rfc1123(std::string_view text) {
  // "Thu, 03 May 2018 10:39:14 GMT"
  auto bad = [&] { return BadDatetime("not an RFC 1123 date: \"" + std::string(text) + "\""); };
  if (text.size() != 29 || text.substr(3, 2) != ", " || text[7] != ' ' || text[11] != ' ' ||
      text[16] != ' ' || text[19] != ':' || text[22] != ':' || text.substr(25) != " GMT")
    throw bad();
  const auto wday = std::find(kWeekdays.begin(), kWeekdays.end(), text.substr(0, 3));
  const auto mon = std::find(kMonths.begin(), kMonths.end(), text.substr(8, 3));
  const int d = digits_at(text, 5, 2);
  const int y = digits_at(text, 12, 4);
  const int h = digits_at(text, 17, 2);
  const int mi = digits_at(text, 20, 2);
  const int s = digits_at(text, 23, 2);
  if (wday == kWeekdays.end() || mon == kMonths.end() || d < 0 || y < 0 || h < 0 || mi < 0 ||
      s < 0)
    throw bad();
  const auto dt = from_civil(y, unsigned(mon - kMonths.begin()) + 1, unsigned(d), unsigned(h),
                             unsigned(mi), unsigned(s));
  if (to_civil(dt.instant()).weekday != unsigned(wday - kWeekdays.begin()))
    throw BadDatetime("weekday does not match date: \"" + std::string(text) + "\"");
  return dt;
}

std::string HttpDatetime::rfc1123() const {
  const Civil c = to_civil(instant_);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s, %02u %s %04d %02u:%02u:%02u GMT",
                kWeekdays[c.weekday].data(), c.day, kMonths[c.month - 1].data(), c.year, c.hour,
                c.minute, c.second);
  return buf;
}

std::string HttpDatetime::iso8601() const {
  const Civil c = to_civil(instant_);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:%02u:%02uZ", c.year, c.month, c.day,
                c.hour, c.minute, c.second);
  return buf;
}

Timestamp14 Timestamp14::parse(std::string_view digits) {
  if (digits.size() != 14 || !std::all_of(digits.begin(), digits.end(), is_digit))
    throw BadDatetime("timestamp must be 14 digits: \"" + std::string(digits) + "\"");
  const int y = digits_at(digits, 0, 4);
  if (y < 1000) throw OutOfRange("timestamp year before 1000: " + std::string(digits));
  // Validates the calendar fields.
  HttpDatetime::from_civil(y, unsigned(digits_at(digits, 4, 2)), unsigned(digits_at(digits, 6, 2)),
                           unsigned(digits_at(digits, 8, 2)), unsigned(digits_at(digits, 10, 2)),
                           unsigned(digits_at(digits, 12, 2)));
  return Timestamp14(std::string(digits));
}

Timestamp14 Timestamp14::from_datetime(const HttpDatetime& dt) {
  const Civil c = to_civil(dt.instant());
  if (c.year < 1000 || c.year > 9999)
    throw OutOfRange("year outside 1000..9999: " + std::to_string(c.year));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u%02u%02u%02u", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return Timestamp14(buf);
}

HttpDatetime Timestamp14::to_datetime() const {
  return HttpDatetime::from_civil(digits_at(digits_, 0, 4), unsigned(digits_at(digits_, 4, 2)),
                                  unsigned(digits_at(digits_, 6, 2)),
                                  unsigned(digits_at(digits_, 8, 2)),
                                  unsigned(digits_at(digits_, 10, 2)),
                                  unsigned(digits_at(digits_, 12, 2)));
}

// ---------------------------------------------------------------------------
// Codecs

std::string Memento::rel_value() const {
  std::string rel;
  if (first) rel += "first ";
  if (last) rel += "last ";
  return rel + "memento";
}

std::vector<Memento> without_position_tags(std::vector<Memento> mementos) {
  for (auto& m : mementos) m.first = m.last = false;
  return mementos;
}

TimeMapDocument parse_link_timemap(std::string_view text) {
  std::optional<AbsoluteUri> original;
  std::optional<TypedLink> self;
  std::vector<TypedLink> timemaps;
  std::optional<AbsoluteUri> timegate;
  std::vector<Memento> mementos;
  std::vector<std::string> extras;
  bool seen_first = false, seen_last = false;

  for (const RawLink& link : Tokenizer(text).run()) {
    const std::string* rel = link.param("rel");
    if (rel == nullptr) throw MalformedLink("link-value without rel: " + std::string(link.raw));
    const auto tags = split_ws(*rel);
    auto has = [&](std::string_view t) {
      return std::find(tags.begin(), tags.end(), t) != tags.end();
    };
    const std::string* type = link.param("type");
    bool known = false;

    if (has("original")) {
      if (original) throw MalformedLink("more than one rel=\"original\" entry");
      original = link_target(link);
      known = true;
    }
    if (has("self")) {
      self = TypedLink{link_target(link), type ? *type : std::string{}};
      known = true;
    }
    if (has("timemap")) {
      timemaps.push_back(TypedLink{link_target(link), type ? *type : std::string{}});
      known = true;
    }
    if (has("timegate")) {
      timegate = link_target(link);
      known = true;
    }
    if (has("memento")) {
      const std::string* dt = link.param("datetime");
      if (dt == nullptr)
        throw BadDatetime("memento without datetime: " + std::string(link.raw));
      Memento m{link_target(link), HttpDatetime::parse_rfc1123(*dt), false, false, std::nullopt};
      m.first = has("first");
      m.last = has("last");
      if ((m.first && std::exchange(seen_first, true)) ||
          (m.last && std::exchange(seen_last, true)))
        throw MalformedLink("more than one first or last memento");
      mementos.push_back(std::move(m));
      known = true;
    }
    if (!known) extras.emplace_back(link.raw);
  }

  if (!original) throw MissingOriginal("TimeMap has no rel=\"original\" entry");
  TimeMapDocument doc(*std::move(original));
  doc.self = std::move(self);
  doc.timemaps = std::move(timemaps);
  doc.timegate = std::move(timegate);
  doc.mementos = std::move(mementos);
  doc.extras = std::move(extras);
  return doc;
}

std::string serialize_memento_link(const Memento& m, bool with_position_tags) {
  Memento shown = m;
  if (!with_position_tags) shown.first = shown.last = false;
  return "<" + m.uri_m.str() + ">; rel=\"" + shown.rel_value() + "\"; datetime=\"" +
         m.datetime.rfc1123() + "\"";
}

std::string serialize_link_timemap(const TimeMapDocument& doc) {
  std::vector<std::string> parts;
  parts.push_back("<" + doc.uri_r.str() + ">; rel=\"original\"");
  if (doc.self) parts.push_back(typed_link(*doc.self, "self"));
  const std::size_t n = doc.mementos.size();
  for (std::size_t i = 0; i < n; ++i) {
    Memento m = doc.mementos[i];
    if (doc.sorted) {
      m.first = i == 0;
      m.last = i + 1 == n;
    }
    parts.push_back(serialize_memento_link(m));
  }
  for (const auto& tm : doc.timemaps) parts.push_back(typed_link(tm, "timemap"));
  if (doc.timegate) parts.push_back("<" + doc.timegate->str() + ">; rel=\"timegate\"");
  for (const auto& extra : doc.extras) parts.push_back(extra);

  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out += parts[i];
    out += i + 1 < parts.size() ? ",\n" : "\n";
  }
  return out;
}

std::string serialize_json_timemap(const TimeMapDocument& doc) {
  nlohmann::ordered_json j;
  j["original_uri"] = doc.uri_r.str();
  j["timegate_uri"] = doc.timegate ? nlohmann::ordered_json(doc.timegate->str()) : nullptr;
  auto timemaps = nlohmann::ordered_json::array();
  for (const auto& tm : doc.timemaps)
    timemaps.push_back({{"uri", tm.uri.str()}, {"type", tm.type}});
  j["timemap_uri"] = std::move(timemaps);
  auto mementos = nlohmann::ordered_json::array();
  for (const auto& m : doc.mementos)
    mementos.push_back({{"uri", m.uri_m.str()}, {"datetime", m.datetime.iso8601()}});
  j["mementos"] = std::move(mementos);
  return j.dump(2) + "\n";
}

std::string serialize_cdxj_timemap(const TimeMapDocument& doc) {
  std::string out = "!meta {\"original_uri\": " + json_string(doc.uri_r.str()) + "}\n";
  if (doc.self) out += "!id {\"uri\": " + json_string(doc.self->uri.str()) + "}\n";
  for (const auto& tm : doc.timemaps)
    out += "!meta {\"timemap_uri\": " + json_string(tm.uri.str()) +
           ", \"type\": " + json_string(tm.type) + "}\n";
  if (doc.timegate) out += "!meta {\"timegate_uri\": " + json_string(doc.timegate->str()) + "}\n";
  for (const auto& m : doc.mementos)
    out += Timestamp14::from_datetime(m.datetime).str() + " {\"uri\": " +
           json_string(m.uri_m.str()) + "}\n";
  return out;
}

}  // namespace memagg::linkfmt
