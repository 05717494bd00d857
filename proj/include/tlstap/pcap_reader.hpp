#pragma once

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "tlstap/bytes.hpp"

namespace tlstap {

enum class LinkType { Ethernet, RawIp };

struct Frame {
  Bytes data;
  Micros capture_time = 0;
  LinkType link = LinkType::Ethernet;
};

// Sequential reader for pcap and pcapng capture files. Only Ethernet and
// raw-IP link types are accepted; anything else is rejected with a
// diagnostic, per the engine's scope.
class CaptureReader {
 public:
  // Throws TlstapError if the file is missing, unreadable, or not a capture
  // in a supported format/link type.
  explicit CaptureReader(const std::string& path);
  ~CaptureReader();

  CaptureReader(const CaptureReader&) = delete;
  CaptureReader& operator=(const CaptureReader&) = delete;

  // Next frame in capture order, or nullopt at end of file. Truncated
  // trailing data is dropped with a diagnostic counter.
  std::optional<Frame> next();

  uint64_t frames_read() const { return frames_read_; }
  uint64_t truncated_tail() const { return truncated_tail_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  uint64_t frames_read_ = 0;
  uint64_t truncated_tail_ = 0;
};

}  // namespace tlstap
