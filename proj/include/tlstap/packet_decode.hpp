#pragma once

#include <optional>
#include <string>

#include "tlstap/flow.hpp"
#include "tlstap/pcap_reader.hpp"

namespace tlstap {

struct TcpSegment {
  IpAddr src_ip;
  IpAddr dst_ip;
  uint16_t src_port = 0;
  uint16_t dst_port = 0;
  uint32_t seq = 0;
  bool syn = false;
  bool fin = false;
  bool rst = false;
  Bytes payload;
  Micros capture_time = 0;
};

enum class DecodeStatus { Ok, NotTcp, Fragmented, Unparseable };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::Unparseable;
  TcpSegment segment;  // valid only when status == Ok
};

// Frame -> IPv4/IPv6 -> TCP. IP fragments are counted and skipped; no
// defragmentation. IPv6 extension headers are not walked.
DecodeResult decode_frame(const Frame& frame);

// Minimal capture filter: conjunctions of `tcp`, `[src|dst] port N` and
// `[src|dst] host A` joined by `and`. This is the subset the file backend
// interprets; anything else is rejected at parse time.
class CaptureFilter {
 public:
  // Throws TlstapError on unsupported syntax. Empty string matches all.
  static CaptureFilter parse(const std::string& expression);

  bool matches(const TcpSegment& segment) const;
  bool match_all() const { return terms_.empty(); }

 private:
  struct Term {
    enum class Kind { Tcp, Port, Host } kind = Kind::Tcp;
    enum class Side { Any, Src, Dst } side = Side::Any;
    uint16_t port = 0;
    IpAddr host;
  };
  std::vector<Term> terms_;
};

std::optional<IpAddr> parse_ip(const std::string& text);

}  // namespace tlstap
