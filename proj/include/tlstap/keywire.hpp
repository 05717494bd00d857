#pragma once

#include <atomic>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tlstap/keystore.hpp"

namespace tlstap {

inline constexpr uint8_t kKeyMessageVersion = 0x01;

// Wire frame carrying one key entry:
//   version(1) kind(1) client_random(32) secret_len(2,BE) secret
//   sent_time(8,BE micros)
struct KeyMessage {
  KeyKind kind = KeyKind::Master;
  std::array<uint8_t, kRandomLen> client_random{};
  Bytes secret;
  Micros sent_time = 0;

  bool operator==(const KeyMessage&) const = default;
};

Bytes encode_key_message(const KeyMessage& msg);

// Incremental stream decoder; sets failed() on any malformed frame.
class KeyMessageDecoder {
 public:
  void feed(ByteSpan bytes);
  std::optional<KeyMessage> next();
  bool failed() const { return failed_; }

 private:
  Bytes buffer_;
  bool failed_ = false;
};

// Mutual shared-secret handshake run inside the (externally secured)
// transport before key frames flow. Both sides prove knowledge of the
// secret via HMAC-SHA384 over a peer-chosen challenge.
inline constexpr size_t kAuthChallengeLen = 16;
inline constexpr size_t kAuthProofLen = 32;

Bytes auth_proof(const std::string& secret, std::string_view role,
                 ByteSpan challenge);

struct ReceiverConfig {
  std::string listen_host = "127.0.0.1";
  uint16_t port = 0;  // 0 = ephemeral
  std::optional<std::string> auth_secret;
  std::optional<std::string> tee_path;  // timestamped-keylog TSV
  size_t max_entries = 0;               // 0 = unbounded; else LRU cap
};

// Accepts forwarder connections, decodes KeyMessages, stamps arrival times
// and ingests into the shared KeyStore. Per-connection decode errors drop
// that connection only.
class KeyReceiver {
 public:
  KeyReceiver(ReceiverConfig config, KeyStore& store);
  ~KeyReceiver();

  void start();
  void stop();
  uint16_t port() const { return bound_port_; }

  struct Stats {
    uint64_t connections_accepted = 0;
    uint64_t connections_dropped = 0;
    uint64_t messages_ingested = 0;
    uint64_t evictions = 0;
  };
  Stats stats() const;

  // Blocks until `count` messages have been ingested (test/CLI aid).
  bool wait_for_messages(uint64_t count, Micros timeout_micros);

 private:
  void accept_loop();
  void serve_connection(int fd);

  ReceiverConfig config_;
  KeyStore& store_;
  int listen_fd_ = -1;
  uint16_t bound_port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  mutable std::mutex mutex_;
  std::vector<std::thread> connection_threads_;
  std::vector<int> connection_fds_;
  std::deque<std::array<uint8_t, kRandomLen>> lru_;
  Stats stats_;
};

// Blocking client side of the key channel; used by the forwarder.
class KeyChannelClient {
 public:
  KeyChannelClient(std::string host, uint16_t port,
                   std::optional<std::string> auth_secret);
  ~KeyChannelClient();

  // Throws TlstapError on authentication failure (fatal); returns false on
  // transient connect errors.
  bool connect();
  bool connected() const { return fd_ >= 0; }
  bool send(const KeyMessage& msg);  // false = link broke, caller rebuffers
  void close();

 private:
  std::string host_;
  uint16_t port_;
  std::optional<std::string> auth_secret_;
  int fd_ = -1;
};

}  // namespace tlstap
