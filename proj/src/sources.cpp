#include "memagg/sources.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace memagg::sources {
namespace {

std::size_t count_placeholders(std::string_view s) {
  std::size_t n = 0;
  for (auto pos = s.find(kPlaceholder); pos != std::string_view::npos;
       pos = s.find(kPlaceholder, pos + kPlaceholder.size()))
    ++n;
  return n;
}

bool valid_scheme(std::string_view s) {
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
  });
}

// Byte offsets of each top-level array element, so semantic errors can name a
// line. Assumes `text` already parsed as JSON.
std::vector<std::size_t> element_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  int depth = 0;
  bool in_string = false;
  bool expect_element = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (depth == 1 && expect_element) {
      offsets.push_back(i);
      expect_element = false;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '[':
      case '{':
        if (++depth == 1) expect_element = true;
        break;
      case ']':
      case '}': --depth; break;
      case ',':
        if (depth == 1) expect_element = true;
        break;
      default: break;
    }
  }
  return offsets;
}

std::size_t line_of(std::string_view text, std::size_t offset) {
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + std::min(offset, text.size()), '\n'));
}

}  // namespace

void validate(const SourceConfig& cfg) {
  static const std::regex id_pattern("[a-z0-9_-]{1,32}");
  if (!std::regex_match(cfg.id, id_pattern))
    throw InvalidSource("source id must match [a-z0-9_-]{1,32}: \"" + cfg.id + "\"");
  if (cfg.timeout_ms <= 0)
    throw InvalidSource("source " + cfg.id + ": timeout_ms must be positive");
  if (cfg.priority < 0)
    throw InvalidSource("source " + cfg.id + ": priority must be non-negative");
  try {
    expand_template(cfg.timemap_template, AbsoluteUri::parse("http://example.com/"));
  } catch (const BadTemplate& e) {
    throw InvalidSource("source " + cfg.id + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const SourceConfig& cfg) {
  j = nlohmann::json{{"id", cfg.id},
                     {"name", cfg.name},
                     {"timemap", cfg.timemap_template},
                     {"timeout_ms", cfg.timeout_ms},
                     {"priority", cfg.priority},
                     {"enabled", cfg.enabled}};
}

void from_json(const nlohmann::json& j, SourceConfig& cfg) {
  if (!j.is_object()) throw InvalidSource("source entry must be a JSON object");
  auto req = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string())
      throw InvalidSource(std::string("missing or non-string \"") + key + "\"");
    return it->get<std::string>();
  };
  auto opt_int = [&](const char* key, int fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_integer())
      throw InvalidSource(std::string("\"") + key + "\" must be an integer");
    return it->get<int>();
  };
  cfg.id = req("id");
  cfg.name = j.contains("name") ? req("name") : cfg.id;
  cfg.timemap_template = req("timemap");
  cfg.timeout_ms = opt_int("timeout_ms", kDefaultTimeoutMs);
  cfg.priority = opt_int("priority", 0);
  cfg.enabled = true;
  if (auto it = j.find("enabled"); it != j.end()) {
    if (!it->is_boolean()) throw InvalidSource("\"enabled\" must be a boolean");
    cfg.enabled = it->get<bool>();
  }
}

std::vector<SourceConfig> sources_from_json(const nlohmann::json& array) {
  if (!array.is_array()) throw InvalidSource("source list must be a JSON array");
  std::vector<SourceConfig> out;
  std::set<std::string> ids;
  for (const auto& entry : array) {
    auto cfg = entry.get<SourceConfig>();
    validate(cfg);
    if (!ids.insert(cfg.id).second) throw DuplicateId("duplicate source id: " + cfg.id);
    out.push_back(std::move(cfg));
  }
  return out;
}

nlohmann::json sources_to_json(std::span<const SourceConfig> sources) {
  auto j = nlohmann::json::array();
  for (const auto& s : sources) j.push_back(s);
  return j;
}

SourceRegistry::SourceRegistry(std::vector<SourceConfig> sources) : sources_(std::move(sources)) {
  std::set<std::string> ids;
  for (const auto& s : sources_) {
    validate(s);
    if (!ids.insert(s.id).second) throw DuplicateId("duplicate source id: " + s.id);
  }
}

std::vector<SourceConfig> SourceRegistry::enabled() const {
  std::vector<SourceConfig> out;
  std::copy_if(sources_.begin(), sources_.end(), std::back_inserter(out),
               [](const SourceConfig& s) { return s.enabled; });
  return out;
}

const SourceConfig* SourceRegistry::find(std::string_view id) const noexcept {
  auto it = std::find_if(sources_.begin(), sources_.end(),
                         [&](const SourceConfig& s) { return s.id == id; });
  return it == sources_.end() ? nullptr : &*it;
}

SourceRegistry parse_registry(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigParseError(e.what(), line_of(text, e.byte ? e.byte - 1 : 0));
  }
  if (!j.is_array()) throw ConfigParseError("config must be a JSON array of sources", 1);

  const auto offsets = element_offsets(text);
  std::vector<SourceConfig> sources;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::size_t line = i < offsets.size() ? line_of(text, offsets[i]) : 0;
    SourceConfig cfg;
    try {
      cfg = j[i].get<SourceConfig>();
      validate(cfg);
    } catch (const InvalidSource& e) {
      throw ConfigParseError("source #" + std::to_string(i + 1) + ": " + e.what(), line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigParseError("source #" + std::to_string(i + 1) + ": " + e.what(), line);
    }
    if (!ids.insert(cfg.id).second)
      throw DuplicateId("line " + std::to_string(line) + ": duplicate source id: " + cfg.id);
    sources.push_back(std::move(cfg));
  }
  return SourceRegistry(std::move(sources));
}

SourceRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError("cannot open config file " + path.string(), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_registry(buf.str());
}

std::string dump_registry(const SourceRegistry& registry) {
  return sources_to_json(registry.all()).dump(2) + "\n";
}

void save_registry(const SourceRegistry& registry, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file " + path.string());
  out << dump_registry(registry);
}

AbsoluteUri expand_template(std::string_view templ, const AbsoluteUri& uri_r) {
  const std::size_t n = count_placeholders(templ);
  if (n > 1) throw BadTemplate("template has more than one {URI-R}: " + std::string(templ));
  std::string expanded;
  if (n == 1) {
    const auto pos = templ.find(kPlaceholder);
    expanded.append(templ.substr(0, pos));
    expanded.append(uri_r.str());
    expanded.append(templ.substr(pos + kPlaceholder.size()));
  } else {
    expanded.append(templ);
    expanded.append(uri_r.str());
  }
  auto uri = AbsoluteUri::try_parse(expanded);
  if (!uri) throw BadTemplate("template does not expand to an absolute URI: " + std::string(templ));
  return *std::move(uri);
}

AbsoluteUri normalize_uri_r(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
    text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
    text.remove_suffix(1);
  if (text.empty()) throw UnparseableUri("empty URI");

  std::string candidate(text.substr(0, text.find('#')));
  const auto sep = candidate.find("://");
  if (candidate.rfind("//", 0) == 0) {
    candidate.insert(0, "http:");
  } else if (sep == std::string::npos || !valid_scheme(std::string_view(candidate).substr(0, sep))) {
    candidate.insert(0, "http://");
  }
  auto uri = AbsoluteUri::try_parse(candidate);
  if (!uri) throw UnparseableUri("cannot parse URI: " + std::string(text));
  return *std::move(uri);
}

std::string source_key(const SourceConfig& cfg) {
  std::string key = cfg.timemap_template;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  static constexpr std::string_view lower_placeholder = "{uri-r}";
  for (auto pos = key.find(lower_placeholder); pos != std::string::npos;
       pos = key.find(lower_placeholder, pos))
    key.erase(pos, lower_placeholder.size());
  return key;
}

}  // namespace memagg::sources
