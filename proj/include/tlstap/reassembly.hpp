#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "tlstap/flow.hpp"
#include "tlstap/packet_decode.hpp"

namespace tlstap {

struct ReassemblyStats {
  uint64_t packets_total = 0;
  uint64_t packets_not_tcp = 0;
  uint64_t packets_fragmented = 0;
  uint64_t packets_unparseable = 0;
  uint64_t packets_filtered = 0;
  uint64_t duplicate_segments = 0;
  uint64_t conflicting_overlaps = 0;
  uint64_t flows_dropped_buffer_cap = 0;
  uint64_t directions_with_gap_at_end = 0;
};

// Per-direction, in-order, exactly-once TCP payload reconstruction.
// Out-of-order segments are buffered up to a per-direction cap; exceeding the
// cap drops the whole flow with a counter instead of growing without bound.
class TcpReassembler {
 public:
  static constexpr size_t kDefaultBufferCap = 1 << 20;  // 1 MiB

  explicit TcpReassembler(size_t buffer_cap_per_direction = kDefaultBufferCap)
      : buffer_cap_(buffer_cap_per_direction) {}

  // Feed one decoded segment; returns zero or more chunks that became
  // deliverable. Each chunk's capture_time is the timestamp of the packet
  // that completed its delivery.
  std::vector<StreamChunk> feed(const TcpSegment& segment);

  // Capture-end flush: streams with unfilled gaps emit nothing further (the
  // contiguous prefix was already delivered); gap counters are updated.
  void finish();

  void count_decode(DecodeStatus status);
  void count_filtered() { stats_.packets_filtered++; }

  const ReassemblyStats& stats() const { return stats_; }

 private:
  struct DirState {
    bool base_known = false;
    uint32_t base_seq = 0;       // sequence number of stream offset 0
    uint64_t next_offset = 0;    // next stream offset to deliver
    std::map<uint64_t, Bytes> pending;  // out-of-order, keyed by offset
    size_t pending_bytes = 0;
    bool finished = false;
  };

  struct FlowState {
    FlowKey key;        // client-first orientation
    bool syn_seen = false;
    bool dropped = false;
    DirState dir[2];    // indexed by Direction
  };

  FlowState& flow_for(const TcpSegment& segment, Direction& direction);

  size_t buffer_cap_;
  ReassemblyStats stats_;
  std::unordered_map<FlowKey, FlowState, FlowKeyHash> flows_;
};

}  // namespace tlstap
