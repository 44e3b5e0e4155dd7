#pragma once

// Client-selected archive sets carried in the HTTP Prefer header (RFC 7240).
//
//   Prefer: respond-async, archives=<b64url(JSON array of sources)>
//
// The JSON is the same schema as the configuration file.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memagg/error.hpp"
#include "memagg/sources.hpp"

namespace memagg::prefer {

inline constexpr std::string_view kPreferHeader = "Prefer";
inline constexpr std::string_view kAppliedHeader = "Preference-Applied";
inline constexpr std::size_t kMaxOverrideSources = 64;

struct PreferDirective {
  std::optional<std::vector<sources::SourceConfig>> archives_override;
  bool respond_async = false;
  std::string raw;
};

/// Raised for an archives= value that does not decode into a valid source
/// list. The rest of the header is still honoured via directive().
class BadPreference : public Error {
 public:
  BadPreference(const std::string& what, PreferDirective partial)
      : Error(what), partial_(std::move(partial)) {}
  const PreferDirective& directive() const noexcept { return partial_; }

 private:
  PreferDirective partial_;
};

PreferDirective parse_prefer(std::string_view header_value);

struct Applied {
  std::vector<sources::SourceConfig> effective;
  bool applied = false;
};

Applied apply_preference(const PreferDirective& directive,
                         const sources::SourceRegistry& registry);

/// "archives" when applied, nothing otherwise.
std::optional<std::string> render_preference_applied(bool applied);

/// "archives=<b64url(json)>" for a client-side Prefer value.
std::string encode_archives_preference(std::span<const sources::SourceConfig> archives);

}  // namespace memagg::prefer
