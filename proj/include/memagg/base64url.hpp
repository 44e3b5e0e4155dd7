#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace memagg::b64url {

// Unpadded base64url (RFC 4648 section 5).
std::string encode(std::string_view bytes);

// Accepts padded or unpadded input; nullopt on any invalid character or
// impossible length.
std::optional<std::string> decode(std::string_view text);

}  // namespace memagg::b64url
