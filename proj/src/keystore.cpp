#include "tlstap/keystore.hpp"

#include <fstream>
#include <sstream>

namespace tlstap {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

KeylogParse entry_from_hex(std::string_view random_hex,
                           std::string_view secret_hex,
                           std::optional<KeyKind> forced_kind) {
  KeylogParse result;
  auto random = from_hex(random_hex);
  if (!random || random->size() != kRandomLen) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  auto secret = from_hex(secret_hex);
  if (!secret || secret->size() < 2) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  result.entry.kind = forced_kind.value_or(
      secret->size() == kMasterSecretLen ? KeyKind::Master
                                         : KeyKind::PreMaster);
  if (result.entry.kind == KeyKind::SessionKeys &&
      secret->size() != kKeyBlockLen) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  std::copy(random->begin(), random->end(), result.entry.client_random.begin());
  result.entry.secret = std::move(*secret);
  result.outcome = KeylogParse::Outcome::Entry;
  return result;
}

}  // namespace

KeylogParse parse_keylog_line(std::string_view line) {
  KeylogParse result;
  auto tokens = split_ws(line);
  if (tokens.empty() || tokens[0].starts_with('#')) return result;  // Skip
  if (tokens[0] != "CLIENT_RANDOM") return result;                  // Skip
  if (tokens.size() != 3) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  return entry_from_hex(tokens[1], tokens[2], std::nullopt);
}

std::string format_keylog_line(const KeyLogEntry& entry) {
  return "CLIENT_RANDOM " + to_hex(entry.client_random) + " " +
         to_hex(entry.secret);
}

KeylogParse parse_timestamped_line(std::string_view line) {
  KeylogParse result;
  auto tokens = split_ws(line);
  if (tokens.empty() || tokens[0].starts_with('#')) return result;
  if (tokens.size() != 4) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  Micros arrival = 0;
  try {
    arrival = std::stoll(tokens[0]);
  } catch (...) {
    result.outcome = KeylogParse::Outcome::Malformed;
    return result;
  }
  std::optional<KeyKind> forced;
  if (tokens[1] == "SESSION_KEYS")
    forced = KeyKind::SessionKeys;
  else if (tokens[1] != "CLIENT_RANDOM") {
    result.outcome = KeylogParse::Outcome::Skip;
    return result;
  }
  result = entry_from_hex(tokens[2], tokens[3], forced);
  result.entry.arrival_time = arrival;
  return result;
}

std::string format_timestamped_line(const KeyLogEntry& entry) {
  std::string label =
      entry.kind == KeyKind::SessionKeys ? "SESSION_KEYS" : "CLIENT_RANDOM";
  return std::to_string(entry.arrival_time) + "\t" + label + "\t" +
         to_hex(entry.client_random) + "\t" + to_hex(entry.secret);
}

void KeyStore::ingest(const KeyLogEntry& entry) {
  std::string key(entry.client_random.begin(), entry.client_random.end());
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(std::move(key), entry);
  if (!inserted) {
    stats_.duplicates++;
    return;
  }
  ingest_order_.push_back(it->first);
  stats_.entries_total++;
}

std::optional<KeyLogEntry> KeyStore::lookup(
    const std::array<uint8_t, kRandomLen>& client_random,
    std::optional<Micros> as_of) const {
  std::string key(client_random.begin(), client_random.end());
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  if (as_of && it->second.arrival_time > *as_of) return std::nullopt;
  return it->second;
}

bool KeyStore::erase(const std::array<uint8_t, kRandomLen>& client_random) {
  std::string key(client_random.begin(), client_random.end());
  std::unique_lock lock(mutex_);
  return entries_.erase(key) > 0;
}

size_t KeyStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

KeyStoreStats KeyStore::stats() const {
  std::shared_lock lock(mutex_);
  return stats_;
}

void KeyStore::count_malformed() {
  std::unique_lock lock(mutex_);
  stats_.malformed_lines++;
}

void KeyStore::count_skipped() {
  std::unique_lock lock(mutex_);
  stats_.skipped_lines++;
}

std::vector<KeyLogEntry> KeyStore::snapshot() const {
  std::shared_lock lock(mutex_);
  std::vector<KeyLogEntry> out;
  out.reserve(ingest_order_.size());
  for (const auto& key : ingest_order_) {
    auto it = entries_.find(key);
    if (it != entries_.end()) out.push_back(it->second);
  }
  return out;
}

KeyStore::FileLoad KeyStore::load_keylog_file(const std::string& path,
                                              Micros arrival_time) {
  std::ifstream in(path);
  if (!in) throw TlstapError("cannot open keylog file: " + path);
  FileLoad result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parsed = parse_keylog_line(line);
    switch (parsed.outcome) {
      case KeylogParse::Outcome::Entry:
        parsed.entry.arrival_time = arrival_time;
        ingest(parsed.entry);
        result.loaded++;
        break;
      case KeylogParse::Outcome::Skip:
        count_skipped();
        result.skipped++;
        break;
      case KeylogParse::Outcome::Malformed:
        count_malformed();
        result.malformed++;
        break;
    }
  }
  return result;
}

KeyStore::FileLoad KeyStore::load_timestamped_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TlstapError("cannot open timestamped keylog: " + path);
  FileLoad result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parsed = parse_timestamped_line(line);
    switch (parsed.outcome) {
      case KeylogParse::Outcome::Entry:
        ingest(parsed.entry);
        result.loaded++;
        break;
      case KeylogParse::Outcome::Skip:
        count_skipped();
        result.skipped++;
        break;
      case KeylogParse::Outcome::Malformed:
        count_malformed();
        result.malformed++;
        break;
    }
  }
  return result;
}

}  // namespace tlstap
