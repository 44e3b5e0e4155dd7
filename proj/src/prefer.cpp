#include "memagg/prefer.hpp"

#include <algorithm>

#include "memagg/base64url.hpp"

namespace memagg::prefer {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

// Splits on `sep` outside double quotes.
std::vector<std::string_view> split_unquoted(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  bool quoted = false;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    else if (s[i] == '\\' && quoted) ++i;
    else if (s[i] == sep && !quoted) {
      out.push_back(trim(s.substr(begin, i - begin)));
      begin = i + 1;
    }
  }
  out.push_back(trim(s.substr(begin)));
  return out;
}

std::string unquote(std::string_view v) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') return std::string(v);
  std::string out;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) ++i;
    out += v[i];
  }
  return out;
}

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<sources::SourceConfig> decode_archives(std::string_view value) {
  auto json_text = b64url::decode(value);
  if (!json_text) throw Error("archives preference is not base64url");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("archives preference is not JSON: ") + e.what());
  }
  if (!j.is_array() || j.empty()) throw Error("archives preference must be a non-empty array");
  if (j.size() > kMaxOverrideSources)
    throw Error("archives preference lists more than " + std::to_string(kMaxOverrideSources) +
                " sources");
  try {
    return sources::sources_from_json(j);
  } catch (const Error& e) {
    throw Error(std::string("archives preference: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("archives preference: ") + e.what());
  }
}

}  // namespace

PreferDirective parse_prefer(std::string_view header_value) {
  PreferDirective directive;
  directive.raw = std::string(header_value);
  std::optional<std::string> archives;

  for (std::string_view pref : split_unquoted(header_value, ',')) {
    if (pref.empty()) continue;
    // Preference parameters after ';' carry nothing we act on.
    const std::string_view head = split_unquoted(pref, ';').front();
    const auto eq = head.find('=');
    const std::string name = lowered(trim(head.substr(0, eq)));
    const std::string value =
        eq == std::string_view::npos ? std::string{} : unquote(trim(head.substr(eq + 1)));
    if (name == "respond-async") {
      directive.respond_async = true;
    } else if (name == "archives" && !archives) {
      archives = value;
    }
  }

  if (archives) {
    try {
      directive.archives_override = decode_archives(*archives);
    } catch (const Error& e) {
      throw BadPreference(e.what(), directive);
    }
  }
  return directive;
}

Applied apply_preference(const PreferDirective& directive,
                         const sources::SourceRegistry& registry) {
  if (directive.archives_override && !directive.archives_override->empty())
    return Applied{*directive.archives_override, true};
  return Applied{registry.enabled(), false};
}

std::optional<std::string> render_preference_applied(bool applied) {
  if (!applied) return std::nullopt;
  return std::string("archives");
}

std::string encode_archives_preference(std::span<const sources::SourceConfig> archives) {
  return "archives=" + b64url::encode(sources::sources_to_json(archives).dump());
}

}  // namespace memagg::prefer
