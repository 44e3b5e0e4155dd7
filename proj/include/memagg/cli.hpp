#pragma once

// The `agg` command line: serve, query, scenario run.

#include <ostream>

namespace memagg::cli {

/// Process exit code for an HTTP outcome: 2xx -> 0, 404 -> 4, 508 -> 8,
/// other 4xx -> 3, other 5xx -> 5.
int exit_code_for_status(int http_status);

inline constexpr int kExitUsage = 1;
inline constexpr int kExitTransport = 2;

/// TimeMaps go to `out`, diagnostics to `err`. `agg serve` blocks until
/// SIGINT or SIGTERM.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace memagg::cli
