#include "tlstap/forwarder.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/inotify.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace tlstap {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Micros parse_duration(const std::string& text) {
  std::string t = trim(text);
  Micros mult = 1000;  // default: milliseconds
  if (t.ends_with("us")) {
    mult = 1;
    t = t.substr(0, t.size() - 2);
  } else if (t.ends_with("ms")) {
    mult = 1000;
    t = t.substr(0, t.size() - 2);
  } else if (t.ends_with("s")) {
    mult = 1000000;
    t = t.substr(0, t.size() - 1);
  }
  return static_cast<Micros>(std::stoll(t)) * mult;
}

}  // namespace

ForwarderConfig ForwarderConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TlstapError("cannot open forwarder config: " + path);
  ForwarderConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw TlstapError("bad config line " + std::to_string(lineno) + " in " +
                        path);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "keylog_path") {
      config.keylog_path = value;
    } else if (key == "collector") {
      size_t colon = value.rfind(':');
      if (colon == std::string::npos)
        throw TlstapError("collector must be host:port");
      config.collector_host = value.substr(0, colon);
      config.collector_port =
          static_cast<uint16_t>(std::stoi(value.substr(colon + 1)));
    } else if (key == "mode") {
      if (value == "forward-all")
        config.mode = ForwardMode::ForwardAll;
      else if (value == "allowlist")
        config.mode = ForwardMode::Allowlist;
      else if (value == "blocklist")
        config.mode = ForwardMode::Blocklist;
      else
        throw TlstapError("unknown mode: " + value);
    } else if (key == "rules") {
      config.domain_rules = split_list(value);
    } else if (key == "backoff") {
      config.reconnect_backoff.clear();
      for (const auto& item : split_list(value))
        config.reconnect_backoff.push_back(parse_duration(item));
    } else if (key == "unknown_domain") {
      if (value == "forward")
        config.unknown_domain_action = FilterDecision::Forward;
      else if (value == "withhold")
        config.unknown_domain_action = FilterDecision::Withhold;
      else
        throw TlstapError("unknown_domain must be forward or withhold");
    } else if (key == "auth_secret") {
      config.auth_secret = value;
    } else if (key == "buffer_cap") {
      config.buffer_cap = static_cast<size_t>(std::stoull(value));
    } else {
      throw TlstapError("unknown config key: " + key);
    }
  }
  return config;
}

void ForwarderConfig::validate() const {
  if (keylog_path.empty()) throw TlstapError("keylog_path is required");
  if (collector_port == 0) throw TlstapError("collector host:port is required");
  if ((mode == ForwardMode::Allowlist || mode == ForwardMode::Blocklist) &&
      domain_rules.empty())
    throw TlstapError("allowlist/blocklist mode requires domain rules");
  if (reconnect_backoff.empty())
    throw TlstapError("reconnect backoff schedule must not be empty");
}

bool domain_matches(const std::string& pattern, const std::string& domain) {
  if (pattern.starts_with("*.")) {
    std::string_view suffix(pattern.c_str() + 1);  // ".corp.example"
    return domain.size() > suffix.size() &&
           domain.compare(domain.size() - suffix.size(), suffix.size(),
                          suffix) == 0;
  }
  return pattern == domain;
}

FilterDecision filter_entry(const KeyLogEntry& entry,
                            const std::optional<std::string>& domain,
                            const ForwarderConfig& config) {
  (void)entry;
  if (config.mode == ForwardMode::ForwardAll) return FilterDecision::Forward;
  if (!domain) {
    return config.unknown_domain_action.value_or(FilterDecision::Withhold);
  }
  bool matched = false;
  for (const auto& rule : config.domain_rules)
    if (domain_matches(rule, *domain)) {
      matched = true;
      break;
    }
  if (config.mode == ForwardMode::Allowlist)
    return matched ? FilterDecision::Forward : FilterDecision::Withhold;
  return matched ? FilterDecision::Withhold : FilterDecision::Forward;
}

KeylogWatcher::KeylogWatcher(std::string path, bool force_polling)
    : path_(std::move(path)) {
  if (!force_polling) {
    inotify_fd_ = inotify_init1(IN_NONBLOCK | IN_CLOEXEC);
    if (inotify_fd_ >= 0) rearm_watch();
  }
}

KeylogWatcher::~KeylogWatcher() {
  if (file_fd_ >= 0) ::close(file_fd_);
  if (inotify_fd_ >= 0) ::close(inotify_fd_);
}

void KeylogWatcher::rearm_watch() {
  if (inotify_fd_ < 0) return;
  if (watch_fd_ >= 0) {
    inotify_rm_watch(inotify_fd_, watch_fd_);
    watch_fd_ = -1;
  }
  // Watch the file itself once it exists; until then, its parent directory.
  watch_fd_ = inotify_add_watch(inotify_fd_, path_.c_str(),
                                IN_MODIFY | IN_CLOSE_WRITE | IN_MOVE_SELF |
                                    IN_DELETE_SELF | IN_ATTRIB);
  if (watch_fd_ < 0) {
    std::string dir = path_;
    size_t slash = dir.find_last_of('/');
    dir = slash == std::string::npos ? "." : dir.substr(0, slash);
    watch_fd_ = inotify_add_watch(inotify_fd_, dir.c_str(),
                                  IN_CREATE | IN_MOVED_TO | IN_MODIFY);
  }
}

std::vector<std::string> KeylogWatcher::poll_lines(Micros timeout_micros) {
  std::vector<std::string> out;
  // Drain first: data may have appeared before we started waiting.
  drain_new_data(out);
  if (!out.empty()) return out;

  if (inotify_fd_ >= 0) {
    pollfd pfd{inotify_fd_, POLLIN, 0};
    int ready = ::poll(&pfd, 1, static_cast<int>(timeout_micros / 1000));
    if (ready > 0) {
      char buf[4096];
      while (::read(inotify_fd_, buf, sizeof(buf)) > 0) {
      }
      rearm_watch();  // file may have been created/rotated
    }
  } else {
    ::usleep(static_cast<useconds_t>(std::min<Micros>(timeout_micros, 50000)));
  }
  drain_new_data(out);
  return out;
}

void KeylogWatcher::drain_new_data(std::vector<std::string>& out) {
  struct stat st{};
  if (::stat(path_.c_str(), &st) != 0) {
    // File vanished (rotation): restart from scratch when it reappears.
    if (file_fd_ >= 0) {
      ::close(file_fd_);
      file_fd_ = -1;
      offset_ = 0;
      pending_.clear();
    }
    return;
  }
  if (file_fd_ >= 0 && static_cast<uint64_t>(st.st_size) < offset_) {
    // Truncated: re-read from offset 0.
    ::close(file_fd_);
    file_fd_ = -1;
    offset_ = 0;
    pending_.clear();
  }
  if (file_fd_ < 0) {
    file_fd_ = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
    if (file_fd_ < 0) return;
    if (inotify_fd_ >= 0) rearm_watch();
    offset_ = 0;
  }

  char buf[8192];
  for (;;) {
    ssize_t got = ::pread(file_fd_, buf, sizeof(buf),
                          static_cast<off_t>(offset_));
    if (got <= 0) break;
    offset_ += static_cast<uint64_t>(got);
    pending_.append(buf, static_cast<size_t>(got));
  }
  size_t start = 0;
  for (;;) {
    size_t nl = pending_.find('\n', start);
    if (nl == std::string::npos) break;
    out.push_back(pending_.substr(start, nl - start));
    start = nl + 1;
  }
  pending_.erase(0, start);
}

Forwarder::Forwarder(ForwarderConfig config, DomainHook domain_hook)
    : config_(std::move(config)), domain_hook_(std::move(domain_hook)) {
  config_.validate();
}

void Forwarder::enqueue(KeyLogEntry entry) {
  KeyMessage msg;
  msg.kind = entry.kind;
  msg.client_random = entry.client_random;
  msg.secret = std::move(entry.secret);
  msg.sent_time = wall_clock_micros();
  queue_.push_back(std::move(msg));
  while (queue_.size() > config_.buffer_cap) {
    queue_.pop_front();
    stats_.entries_dropped_overflow++;
  }
}

bool Forwarder::flush_queue(KeyChannelClient& client,
                            const std::atomic<bool>& stop) {
  while (!queue_.empty() && !stop) {
    if (!client.connected()) {
      if (client.connect()) {
        backoff_step_ = 0;
      } else {
        Micros wait = config_.reconnect_backoff[std::min(
            backoff_step_, config_.reconnect_backoff.size() - 1)];
        backoff_step_++;
        stats_.reconnects++;
        // Bounded naps so stop stays responsive and new lines keep queueing.
        Micros slept = 0;
        while (slept < wait && !stop) {
          ::usleep(10000);
          slept += 10000;
        }
        return false;
      }
    }
    if (client.send(queue_.front())) {
      queue_.pop_front();
      stats_.entries_forwarded++;
    } else {
      stats_.reconnects++;
      return false;
    }
  }
  return true;
}

void Forwarder::run(const std::atomic<bool>& stop) {
  KeylogWatcher watcher(config_.keylog_path, config_.force_polling);
  KeyChannelClient client(config_.collector_host, config_.collector_port,
                          config_.auth_secret);
  while (!stop) {
    auto lines = watcher.poll_lines(50000);
    for (const auto& line : lines) {
      stats_.lines_seen++;
      auto parsed = parse_keylog_line(line);
      if (parsed.outcome == KeylogParse::Outcome::Skip) {
        stats_.lines_skipped++;
        continue;
      }
      if (parsed.outcome == KeylogParse::Outcome::Malformed) {
        stats_.lines_malformed++;
        continue;
      }
      std::optional<std::string> domain;
      if (domain_hook_) domain = domain_hook_(parsed.entry);
      if (filter_entry(parsed.entry, domain, config_) ==
          FilterDecision::Withhold) {
        stats_.entries_withheld++;
        continue;
      }
      enqueue(std::move(parsed.entry));
    }
    flush_queue(client, stop);
  }
  // Best-effort drain of already-queued entries on shutdown; no reconnects.
  while (!queue_.empty() && client.connected()) {
    if (!client.send(queue_.front())) break;
    queue_.pop_front();
    stats_.entries_forwarded++;
  }
}

}  // namespace tlstap
