#pragma once

#include <atomic>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tlstap/keystore.hpp"
#include "tlstap/keywire.hpp"

namespace tlstap {

enum class ForwardMode { ForwardAll, Allowlist, Blocklist };
enum class FilterDecision { Forward, Withhold };

struct ForwarderConfig {
  std::string keylog_path;
  std::string collector_host = "127.0.0.1";
  uint16_t collector_port = 0;
  ForwardMode mode = ForwardMode::ForwardAll;
  std::vector<std::string> domain_rules;
  std::vector<Micros> reconnect_backoff = {100000, 500000, 1000000, 5000000};
  std::optional<FilterDecision> unknown_domain_action;  // see filter_entry
  std::optional<std::string> auth_secret;
  size_t buffer_cap = 10000;
  bool force_polling = false;

  // `key = value` lines; CLI flags override file values.
  static ForwarderConfig from_file(const std::string& path);
  void validate() const;
};

// `*.suffix` patterns match any single-or-more label prefix; otherwise exact.
bool domain_matches(const std::string& pattern, const std::string& domain);

// Selective-decryption policy. The keylog itself carries no domain, so the
// domain is whatever the deployment's attribution hook supplied (or nullopt).
// Unknown domains follow unknown_domain_action; its default is Forward under
// ForwardAll and Withhold under the list modes.
FilterDecision filter_entry(const KeyLogEntry& entry,
                            const std::optional<std::string>& domain,
                            const ForwarderConfig& config);

// Tails an SSLKEYLOG file: emits each newly appended complete line exactly
// once, in file order. Survives truncation/rotation by re-reading from
// offset 0. Uses inotify when available, 50 ms polling otherwise.
class KeylogWatcher {
 public:
  explicit KeylogWatcher(std::string path, bool force_polling = false);
  ~KeylogWatcher();

  // Waits up to timeout_micros for appended data, then drains it.
  std::vector<std::string> poll_lines(Micros timeout_micros);
  bool using_inotify() const { return inotify_fd_ >= 0; }

 private:
  void drain_new_data(std::vector<std::string>& out);
  void rearm_watch();

  std::string path_;
  int inotify_fd_ = -1;
  int watch_fd_ = -1;
  int file_fd_ = -1;
  uint64_t offset_ = 0;
  std::string pending_;
};

struct ForwarderStats {
  uint64_t lines_seen = 0;
  uint64_t entries_forwarded = 0;
  uint64_t entries_withheld = 0;
  uint64_t entries_dropped_overflow = 0;
  uint64_t lines_skipped = 0;
  uint64_t lines_malformed = 0;
  uint64_t reconnects = 0;
};

// Endpoint daemon: watch -> filter -> frame -> send, with an in-memory
// retransmit buffer (cap: buffer_cap, overflow drops oldest).
class Forwarder {
 public:
  using DomainHook =
      std::function<std::optional<std::string>(const KeyLogEntry&)>;

  explicit Forwarder(ForwarderConfig config, DomainHook domain_hook = nullptr);

  // Processes until `stop` becomes true. Throws on authentication failure.
  void run(const std::atomic<bool>& stop);

  ForwarderStats stats() const { return stats_; }

 private:
  void enqueue(KeyLogEntry entry);
  bool flush_queue(KeyChannelClient& client, const std::atomic<bool>& stop);

  ForwarderConfig config_;
  DomainHook domain_hook_;
  std::deque<KeyMessage> queue_;
  size_t backoff_step_ = 0;
  ForwarderStats stats_;
};

}  // namespace tlstap
