#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>

#include "tlstap/bytes.hpp"

namespace tlstap {

// Direction relative to the flow initiator (the SYN sender, or the sender of
// the first packet seen when the capture starts mid-connection).
enum class Direction { ClientToServer, ServerToClient };

inline Direction reverse(Direction d) {
  return d == Direction::ClientToServer ? Direction::ServerToClient
                                        : Direction::ClientToServer;
}

struct IpAddr {
  bool is_v6 = false;
  std::array<uint8_t, 16> bytes{};  // v4 uses the first 4 bytes

  auto operator<=>(const IpAddr&) const = default;
  std::string to_string() const;
};

// Canonical connection key: endpoints are stored client-first, where the
// client is the flow initiator. A packet in either direction maps to the same
// FlowKey plus a Direction flag.
struct FlowKey {
  IpAddr client_ip;
  IpAddr server_ip;
  uint16_t client_port = 0;
  uint16_t server_port = 0;

  auto operator<=>(const FlowKey&) const = default;
  std::string to_string() const;

  // Filesystem-safe form used for payload dump file names.
  std::string to_file_stem() const;
};

struct StreamChunk {
  FlowKey flow;
  Direction direction = Direction::ClientToServer;
  Bytes bytes;
  Micros capture_time = 0;
  // True when the SYN for this flow was observed; false for mid-capture
  // flows, where the TLS layer may still flip the orientation based on
  // which side sent the ClientHello.
  bool syn_seen = false;
};

struct FlowKeyHash {
  size_t operator()(const FlowKey& k) const;
};

}  // namespace tlstap
