#pragma once

#include "httplib.h"

namespace memagg::detail {

// httplib's default adds SO_REUSEPORT, which lets a second server silently
// share a bound port.
inline void exclusive_port(socket_t sock) {
  int yes = 1;
  setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
}

}  // namespace memagg::detail
