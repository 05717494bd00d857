#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>

#include "tlstap/flow.hpp"

namespace tlstap {

enum class AppProtocol { Http1, Http2, Unknown };

const char* to_string(AppProtocol protocol);

// Classifies a stream from its first bytes: the HTTP/2 connection preface,
// or an HTTP/1 method token followed by a space. Mid-stream joins are
// classified Unknown by the caller (the first request bytes are gone).
AppProtocol detect_protocol(ByteSpan first_bytes);

struct CleartextEvent {
  FlowKey flow;
  Direction direction = Direction::ClientToServer;
  uint64_t offset = 0;  // byte offset within the decrypted stream
  ByteSpan bytes;
  bool gap_before = false;  // records were missed earlier in this stream
  Micros capture_time = 0;
};

class CleartextSink {
 public:
  virtual ~CleartextSink() = default;
  virtual void on_cleartext(const CleartextEvent& event) = 0;
};

class NullSink final : public CleartextSink {
 public:
  void on_cleartext(const CleartextEvent&) override {}
};

// Structured log: one tab-separated line per event under a `#fields` header.
// With a dump directory set, payloads are also appended byte-true to
// `<flow>-<direction>.bin` files.
class TsvLogSink final : public CleartextSink {
 public:
  explicit TsvLogSink(const std::string& log_path,
                      std::string dump_dir = std::string());
  void on_cleartext(const CleartextEvent& event) override;

  uint64_t event_count() const { return event_count_; }
  static std::string dump_file_name(const FlowKey& flow, Direction direction);

 private:
  struct StreamState {
    bool protocol_decided = false;
    AppProtocol protocol = AppProtocol::Unknown;
  };

  std::ofstream log_;
  std::string dump_dir_;
  uint64_t event_count_ = 0;
  std::unordered_map<std::string, StreamState> streams_;
  std::unordered_map<std::string, std::ofstream> dumps_;
};

}  // namespace tlstap
