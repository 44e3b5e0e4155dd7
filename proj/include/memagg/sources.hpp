#pragma once

// Aggregation targets: configuration, registry, and URI-T template expansion.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "memagg/error.hpp"
#include "memagg/linkfmt.hpp"

namespace memagg::sources {

using linkfmt::AbsoluteUri;

class BadTemplate : public Error {
 public:
  using Error::Error;
};
class UnparseableUri : public Error {
 public:
  using Error::Error;
};
class InvalidSource : public Error {
 public:
  using Error::Error;
};
class DuplicateId : public Error {
 public:
  using Error::Error;
};
/// Carries the 1-based line of the failure when one is known (0 otherwise).
class ConfigParseError : public Error {
 public:
  ConfigParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline constexpr std::string_view kPlaceholder = "{URI-R}";
inline constexpr int kDefaultTimeoutMs = 5000;

struct SourceConfig {
  std::string id;
  std::string name;
  std::string timemap_template;
  int timeout_ms = kDefaultTimeoutMs;
  /// Lower wins when deduplicating.
  int priority = 0;
  bool enabled = true;

  friend bool operator==(const SourceConfig&, const SourceConfig&) = default;
};

/// Throws InvalidSource naming the offending field.
void validate(const SourceConfig& cfg);

// JSON shape shared by the config file and the Prefer extension:
// {id, name, timemap, timeout_ms?, priority?, enabled?}
void to_json(nlohmann::json& j, const SourceConfig& cfg);
void from_json(const nlohmann::json& j, SourceConfig& cfg);

/// Decodes and validates a JSON array of source objects. Throws
/// InvalidSource or DuplicateId.
std::vector<SourceConfig> sources_from_json(const nlohmann::json& array);
nlohmann::json sources_to_json(std::span<const SourceConfig> sources);

class SourceRegistry {
 public:
  SourceRegistry() = default;
  /// Throws DuplicateId or InvalidSource.
  explicit SourceRegistry(std::vector<SourceConfig> sources);

  const std::vector<SourceConfig>& all() const noexcept { return sources_; }
  /// The default query set, in configuration order.
  std::vector<SourceConfig> enabled() const;
  const SourceConfig* find(std::string_view id) const noexcept;
  std::size_t size() const noexcept { return sources_.size(); }
  bool empty() const noexcept { return sources_.empty(); }

  friend bool operator==(const SourceRegistry&, const SourceRegistry&) = default;

 private:
  std::vector<SourceConfig> sources_;
};

/// Parses config-file text. Syntax errors raise ConfigParseError with a line
/// number; semantic errors raise ConfigParseError naming the entry, or
/// DuplicateId.
SourceRegistry parse_registry(std::string_view text);
SourceRegistry load_registry(const std::filesystem::path& path);
std::string dump_registry(const SourceRegistry& registry);
void save_registry(const SourceRegistry& registry, const std::filesystem::path& path);

/// Substitutes the raw URI-R for `{URI-R}`, or appends it when the template
/// has no placeholder. No percent-encoding is applied.
AbsoluteUri expand_template(std::string_view templ, const AbsoluteUri& uri_r);

/// Defaults the scheme to http, lowercases scheme and host, strips the
/// fragment. Throws UnparseableUri.
AbsoluteUri normalize_uri_r(std::string_view text);

/// Lowercased template with the placeholder removed; the identity used for
/// cross-chain source deduplication.
std::string source_key(const SourceConfig& cfg);

}  // namespace memagg::sources
