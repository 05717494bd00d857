#include "tlstap/reassembly.hpp"

#include <algorithm>
#include <cstring>

namespace tlstap {

namespace {

struct Endpoint {
  IpAddr ip;
  uint16_t port;
  auto operator<=>(const Endpoint&) const = default;
};

FlowKey canonical_key(const TcpSegment& seg) {
  Endpoint a{seg.src_ip, seg.src_port};
  Endpoint b{seg.dst_ip, seg.dst_port};
  if (b < a) std::swap(a, b);
  FlowKey key;
  key.client_ip = a.ip;
  key.client_port = a.port;
  key.server_ip = b.ip;
  key.server_port = b.port;
  return key;
}

}  // namespace

TcpReassembler::FlowState& TcpReassembler::flow_for(const TcpSegment& seg,
                                                    Direction& direction) {
  FlowKey canon = canonical_key(seg);
  auto [it, inserted] = flows_.try_emplace(canon);
  FlowState& flow = it->second;
  if (inserted) {
    // First packet decides the provisional orientation; a SYN makes it firm.
    flow.key.client_ip = seg.src_ip;
    flow.key.client_port = seg.src_port;
    flow.key.server_ip = seg.dst_ip;
    flow.key.server_port = seg.dst_port;
    flow.syn_seen = seg.syn;
  } else if (seg.syn && !flow.syn_seen) {
    // SYN observed after non-SYN traffic for the same canonical flow
    // (e.g. capture started mid-handshake of a previous connection):
    // adopt the SYN sender as client.
    flow.syn_seen = true;
    if (seg.src_ip != flow.key.client_ip ||
        seg.src_port != flow.key.client_port) {
      std::swap(flow.key.client_ip, flow.key.server_ip);
      std::swap(flow.key.client_port, flow.key.server_port);
      std::swap(flow.dir[0], flow.dir[1]);
    }
  }
  bool from_client = seg.src_ip == flow.key.client_ip &&
                     seg.src_port == flow.key.client_port &&
                     seg.dst_ip == flow.key.server_ip &&
                     seg.dst_port == flow.key.server_port;
  direction = from_client ? Direction::ClientToServer
                          : Direction::ServerToClient;
  return flow;
}

std::vector<StreamChunk> TcpReassembler::feed(const TcpSegment& seg) {
  stats_.packets_total++;
  std::vector<StreamChunk> out;

  Direction direction;
  FlowState& flow = flow_for(seg, direction);
  if (flow.dropped) return out;
  DirState& dir = flow.dir[static_cast<int>(direction)];

  if (seg.rst) {
    flow.dir[0].finished = flow.dir[1].finished = true;
    return out;
  }

  if (seg.syn) {
    if (!dir.base_known) {
      dir.base_known = true;
      dir.base_seq = seg.seq + 1;  // SYN consumes one sequence number
    }
    return out;
  }

  if (seg.fin) dir.finished = true;
  if (seg.payload.empty()) return out;

  if (!dir.base_known) {
    // Mid-capture stream: deliver from the first byte we saw.
    dir.base_known = true;
    dir.base_seq = seg.seq;
  }

  // Unwrap the 32-bit sequence number relative to the next expected offset.
  uint32_t expected_seq = dir.base_seq + static_cast<uint32_t>(dir.next_offset);
  int64_t diff = static_cast<int32_t>(seg.seq - expected_seq);
  int64_t start_signed = static_cast<int64_t>(dir.next_offset) + diff;
  if (start_signed + static_cast<int64_t>(seg.payload.size()) <=
      static_cast<int64_t>(dir.next_offset)) {
    stats_.duplicate_segments++;
    return out;
  }

  uint64_t off = start_signed < 0 ? 0 : static_cast<uint64_t>(start_signed);
  ByteSpan payload(seg.payload);
  if (start_signed < static_cast<int64_t>(dir.next_offset)) {
    // Head overlaps bytes already delivered: trim and count the retransmit.
    size_t trim = static_cast<size_t>(
        static_cast<int64_t>(dir.next_offset) - start_signed);
    payload = payload.subspan(trim);
    off = dir.next_offset;
    stats_.duplicate_segments++;
  }

  // Merge into the pending map, keeping first-seen bytes on overlap.
  while (!payload.empty()) {
    auto it = dir.pending.lower_bound(off);
    if (it != dir.pending.begin()) {
      auto prev = std::prev(it);
      uint64_t prev_end = prev->first + prev->second.size();
      if (prev_end > off) {
        size_t overlap = static_cast<size_t>(
            std::min<uint64_t>(prev_end - off, payload.size()));
        size_t at = static_cast<size_t>(off - prev->first);
        if (std::memcmp(prev->second.data() + at, payload.data(), overlap) != 0)
          stats_.conflicting_overlaps++;
        payload = payload.subspan(overlap);
        off += overlap;
        continue;
      }
    }
    if (it != dir.pending.end() && it->first == off) {
      size_t overlap = std::min(payload.size(), it->second.size());
      if (std::memcmp(it->second.data(), payload.data(), overlap) != 0)
        stats_.conflicting_overlaps++;
      payload = payload.subspan(overlap);
      off += overlap;
      continue;
    }
    size_t take = payload.size();
    if (it != dir.pending.end())
      take = std::min<uint64_t>(take, it->first - off);
    dir.pending.emplace(off, Bytes(payload.begin(), payload.begin() + take));
    dir.pending_bytes += take;
    payload = payload.subspan(take);
    off += take;
  }

  if (dir.pending_bytes > buffer_cap_) {
    flow.dropped = true;
    for (auto& d : flow.dir) {
      d.pending.clear();
      d.pending_bytes = 0;
    }
    stats_.flows_dropped_buffer_cap++;
    return out;
  }

  // Deliver the contiguous prefix, if the gap (if any) just closed.
  if (!dir.pending.empty() && dir.pending.begin()->first == dir.next_offset) {
    StreamChunk chunk;
    chunk.flow = flow.key;
    chunk.direction = direction;
    chunk.capture_time = seg.capture_time;
    chunk.syn_seen = flow.syn_seen;
    while (!dir.pending.empty() &&
           dir.pending.begin()->first == dir.next_offset) {
      auto& bytes = dir.pending.begin()->second;
      chunk.bytes.insert(chunk.bytes.end(), bytes.begin(), bytes.end());
      dir.next_offset += bytes.size();
      dir.pending_bytes -= bytes.size();
      dir.pending.erase(dir.pending.begin());
    }
    out.push_back(std::move(chunk));
  }

  return out;
}

void TcpReassembler::finish() {
  for (auto& [key, flow] : flows_) {
    for (auto& dir : flow.dir)
      if (!dir.pending.empty()) stats_.directions_with_gap_at_end++;
  }
}

void TcpReassembler::count_decode(DecodeStatus status) {
  switch (status) {
    case DecodeStatus::Ok:
      break;
    case DecodeStatus::NotTcp:
      stats_.packets_not_tcp++;
      break;
    case DecodeStatus::Fragmented:
      stats_.packets_fragmented++;
      break;
    case DecodeStatus::Unparseable:
      stats_.packets_unparseable++;
      break;
  }
}

}  // namespace tlstap
