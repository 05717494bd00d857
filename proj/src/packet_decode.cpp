#include "tlstap/packet_decode.hpp"

#include <arpa/inet.h>

#include <cstring>
#include <functional>
#include <sstream>

namespace tlstap {

std::string IpAddr::to_string() const {
  char buf[INET6_ADDRSTRLEN] = {0};
  if (is_v6)
    inet_ntop(AF_INET6, bytes.data(), buf, sizeof(buf));
  else
    inet_ntop(AF_INET, bytes.data(), buf, sizeof(buf));
  return buf;
}

std::string FlowKey::to_string() const {
  std::ostringstream out;
  out << client_ip.to_string() << ":" << client_port << "->"
      << server_ip.to_string() << ":" << server_port;
  return out.str();
}

std::string FlowKey::to_file_stem() const {
  std::string s = client_ip.to_string() + "_" + std::to_string(client_port) +
                  "_" + server_ip.to_string() + "_" +
                  std::to_string(server_port);
  for (auto& c : s)
    if (c == ':' || c == '.') c = '-';
  return s;
}

size_t FlowKeyHash::operator()(const FlowKey& k) const {
  size_t h = std::hash<uint32_t>{}((k.client_port << 16) | k.server_port);
  for (int i = 0; i < 16; i += 8) {
    uint64_t a, b;
    std::memcpy(&a, k.client_ip.bytes.data() + i, 8);
    std::memcpy(&b, k.server_ip.bytes.data() + i, 8);
    h ^= std::hash<uint64_t>{}(a + 0x9e3779b97f4a7c15ull * (i + 1));
    h ^= std::hash<uint64_t>{}(b + 0x517cc1b727220a95ull * (i + 2));
  }
  return h;
}

namespace {

DecodeResult decode_ip(const uint8_t* data, size_t len, Micros ts);

DecodeResult decode_tcp(const uint8_t* data, size_t len, IpAddr src, IpAddr dst,
                        Micros ts) {
  if (len < 20) return {DecodeStatus::Unparseable, {}};
  TcpSegment seg;
  seg.src_ip = src;
  seg.dst_ip = dst;
  seg.src_port = read_u16be(data);
  seg.dst_port = read_u16be(data + 2);
  seg.seq = read_u32be(data + 4);
  uint8_t data_offset = (data[12] >> 4) * 4;
  if (data_offset < 20 || data_offset > len)
    return {DecodeStatus::Unparseable, {}};
  uint8_t flags = data[13];
  seg.fin = flags & 0x01;
  seg.syn = flags & 0x02;
  seg.rst = flags & 0x04;
  seg.payload.assign(data + data_offset, data + len);
  seg.capture_time = ts;
  return {DecodeStatus::Ok, std::move(seg)};
}

DecodeResult decode_ipv4(const uint8_t* data, size_t len, Micros ts) {
  if (len < 20) return {DecodeStatus::Unparseable, {}};
  uint8_t ihl = (data[0] & 0x0f) * 4;
  if (ihl < 20 || ihl > len) return {DecodeStatus::Unparseable, {}};
  uint16_t total_len = read_u16be(data + 2);
  if (total_len < ihl) return {DecodeStatus::Unparseable, {}};
  if (total_len < len) len = total_len;  // strip link-layer padding
  uint16_t frag = read_u16be(data + 6);
  if ((frag & 0x1fff) != 0 || (frag & 0x2000) != 0)
    return {DecodeStatus::Fragmented, {}};
  if (data[9] != 6) return {DecodeStatus::NotTcp, {}};
  IpAddr src, dst;
  std::memcpy(src.bytes.data(), data + 12, 4);
  std::memcpy(dst.bytes.data(), data + 16, 4);
  return decode_tcp(data + ihl, len - ihl, src, dst, ts);
}

DecodeResult decode_ipv6(const uint8_t* data, size_t len, Micros ts) {
  if (len < 40) return {DecodeStatus::Unparseable, {}};
  uint16_t payload_len = read_u16be(data + 4);
  if (40 + static_cast<size_t>(payload_len) < len)
    len = 40 + payload_len;
  // Extension-header chains are out of scope; only direct TCP is decoded.
  if (data[6] != 6) return {DecodeStatus::NotTcp, {}};
  IpAddr src, dst;
  src.is_v6 = dst.is_v6 = true;
  std::memcpy(src.bytes.data(), data + 8, 16);
  std::memcpy(dst.bytes.data(), data + 24, 16);
  return decode_tcp(data + 40, len - 40, src, dst, ts);
}

DecodeResult decode_ip(const uint8_t* data, size_t len, Micros ts) {
  if (len < 1) return {DecodeStatus::Unparseable, {}};
  uint8_t version = data[0] >> 4;
  if (version == 4) return decode_ipv4(data, len, ts);
  if (version == 6) return decode_ipv6(data, len, ts);
  return {DecodeStatus::Unparseable, {}};
}

}  // namespace

DecodeResult decode_frame(const Frame& frame) {
  const uint8_t* data = frame.data.data();
  size_t len = frame.data.size();

  if (frame.link == LinkType::RawIp) return decode_ip(data, len, frame.capture_time);

  if (len < 14) return {DecodeStatus::Unparseable, {}};
  uint16_t ethertype = read_u16be(data + 12);
  size_t offset = 14;
  // single VLAN tag
  if (ethertype == 0x8100) {
    if (len < 18) return {DecodeStatus::Unparseable, {}};
    ethertype = read_u16be(data + 16);
    offset = 18;
  }
  if (ethertype == 0x0800)
    return decode_ipv4(data + offset, len - offset, frame.capture_time);
  if (ethertype == 0x86dd)
    return decode_ipv6(data + offset, len - offset, frame.capture_time);
  return {DecodeStatus::NotTcp, {}};
}

std::optional<IpAddr> parse_ip(const std::string& text) {
  IpAddr addr;
  if (inet_pton(AF_INET, text.c_str(), addr.bytes.data()) == 1) return addr;
  addr.is_v6 = true;
  if (inet_pton(AF_INET6, text.c_str(), addr.bytes.data()) == 1) return addr;
  return std::nullopt;
}

CaptureFilter CaptureFilter::parse(const std::string& expression) {
  CaptureFilter filter;
  std::istringstream in(expression);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);

  size_t i = 0;
  bool expect_term = true;
  while (i < tokens.size()) {
    if (!expect_term) {
      if (tokens[i] != "and")
        throw TlstapError("unsupported filter (only 'and' conjunction): " +
                          expression);
      i++;
      expect_term = true;
      continue;
    }
    Term term;
    if (tokens[i] == "src" || tokens[i] == "dst") {
      term.side = tokens[i] == "src" ? Term::Side::Src : Term::Side::Dst;
      if (++i >= tokens.size())
        throw TlstapError("dangling qualifier in filter: " + expression);
    }
    if (tokens[i] == "tcp" && term.side == Term::Side::Any) {
      term.kind = Term::Kind::Tcp;
      i++;
    } else if (tokens[i] == "port") {
      term.kind = Term::Kind::Port;
      if (++i >= tokens.size())
        throw TlstapError("port filter needs a number: " + expression);
      int port = std::stoi(tokens[i++]);
      if (port < 0 || port > 65535)
        throw TlstapError("port out of range in filter: " + expression);
      term.port = static_cast<uint16_t>(port);
    } else if (tokens[i] == "host") {
      term.kind = Term::Kind::Host;
      if (++i >= tokens.size())
        throw TlstapError("host filter needs an address: " + expression);
      auto addr = parse_ip(tokens[i++]);
      if (!addr) throw TlstapError("bad host address in filter: " + expression);
      term.host = *addr;
    } else {
      throw TlstapError("unsupported filter primitive '" + tokens[i] +
                        "' (supported: tcp, port, host)");
    }
    filter.terms_.push_back(term);
    expect_term = false;
  }
  if (expect_term && !tokens.empty())
    throw TlstapError("trailing 'and' in filter: " + expression);
  return filter;
}

bool CaptureFilter::matches(const TcpSegment& seg) const {
  for (const auto& term : terms_) {
    switch (term.kind) {
      case Term::Kind::Tcp:
        break;  // decode_frame already guarantees TCP
      case Term::Kind::Port: {
        bool src = seg.src_port == term.port;
        bool dst = seg.dst_port == term.port;
        if (term.side == Term::Side::Src && !src) return false;
        if (term.side == Term::Side::Dst && !dst) return false;
        if (term.side == Term::Side::Any && !src && !dst) return false;
        break;
      }
      case Term::Kind::Host: {
        bool src = seg.src_ip == term.host;
        bool dst = seg.dst_ip == term.host;
        if (term.side == Term::Side::Src && !src) return false;
        if (term.side == Term::Side::Dst && !dst) return false;
        if (term.side == Term::Side::Any && !src && !dst) return false;
        break;
      }
    }
  }
  return true;
}

}  // namespace tlstap
