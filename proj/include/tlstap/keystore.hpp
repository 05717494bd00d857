#pragma once

#include <array>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlstap/bytes.hpp"
#include "tlstap/crypto.hpp"

namespace tlstap {

enum class KeyKind : uint8_t {
  PreMaster = 1,
  Master = 2,
  SessionKeys = 3,  // raw 72-byte key expansion block
};

struct KeyLogEntry {
  KeyKind kind = KeyKind::Master;
  std::array<uint8_t, kRandomLen> client_random{};
  Bytes secret;
  Micros arrival_time = 0;

  bool operator==(const KeyLogEntry&) const = default;
};

struct KeyStoreStats {
  uint64_t entries_total = 0;
  uint64_t duplicates = 0;
  uint64_t malformed_lines = 0;
  uint64_t skipped_lines = 0;
};

struct KeylogParse {
  enum class Outcome { Entry, Skip, Malformed };
  Outcome outcome = Outcome::Skip;
  KeyLogEntry entry;
};

// One line of NSS SSLKEYLOG text. `CLIENT_RANDOM <64 hex> <96 hex>` is a
// master secret; other plausible secret lengths are pre-master secrets.
// Comments and unrelated labels (TLS 1.3 secrets) are skipped.
KeylogParse parse_keylog_line(std::string_view line);
std::string format_keylog_line(const KeyLogEntry& entry);

// Timestamped keylog TSV: `arrival_unix_micros \t LABEL \t hex_random \t
// hex_secret` where LABEL is CLIENT_RANDOM (kind by secret length) or
// SESSION_KEYS (raw key block).
KeylogParse parse_timestamped_line(std::string_view line);
std::string format_timestamped_line(const KeyLogEntry& entry);

// Key material indexed by client random. Concurrent-safe: any number of
// ingest writers and lookup readers.
class KeyStore {
 public:
  // First entry for a client random wins; later ones count as duplicates.
  void ingest(const KeyLogEntry& entry);

  // as_of gates on arrival_time (inclusive); nullopt means "any".
  std::optional<KeyLogEntry> lookup(
      const std::array<uint8_t, kRandomLen>& client_random,
      std::optional<Micros> as_of) const;

  bool erase(const std::array<uint8_t, kRandomLen>& client_random);
  size_t size() const;
  KeyStoreStats stats() const;
  void count_malformed();
  void count_skipped();

  // Entries in first-ingest order (for tee files and reports).
  std::vector<KeyLogEntry> snapshot() const;

  struct FileLoad {
    size_t loaded = 0;
    size_t skipped = 0;
    size_t malformed = 0;
  };
  // Plain keylog files carry no arrival time; all entries get
  // `arrival_time` (0 = available from the epoch).
  FileLoad load_keylog_file(const std::string& path, Micros arrival_time = 0);
  FileLoad load_timestamped_file(const std::string& path);

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, KeyLogEntry> entries_;
  std::vector<std::string> ingest_order_;
  KeyStoreStats stats_;
};

}  // namespace tlstap
