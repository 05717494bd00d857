#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlstap/analysis_sink.hpp"
#include "tlstap/keystore.hpp"
#include "tlstap/reassembly.hpp"
#include "tlstap/tls_records.hpp"

namespace tlstap {

enum class SessionPhase {
  AwaitingClientHello,
  AwaitingServerHello,
  AwaitingCCS,
  Encrypted,
  Unsupported,  // wrong suite or resumed handshake
  NonTls,
};

const char* to_string(SessionPhase phase);

struct SessionStats {
  uint64_t tls_payload_bytes_total = 0;      // plaintext-equivalent AppData
  uint64_t tls_payload_bytes_decrypted = 0;
  uint64_t records_total = 0;                // ApplicationData records only
  uint64_t records_decrypted = 0;
  uint64_t records_auth_failed = 0;
  bool fully_decrypted = false;
};

struct EngineConfig {
  Micros traffic_delay = 0;       // added to the lookup time (simulated buffer)
  bool seq_from_nonce = true;     // recover AAD seq from the explicit nonce
  bool gate_by_arrival_time = true;  // false = keys usable regardless of time
  bool decrypt_enabled = true;       // false = parse-only (bench baseline)
};

// Per-connection state machine tying parsed handshakes to key material.
class TlsSession {
 public:
  FlowKey flow;
  HandshakeSummary summary;
  SessionPhase phase = SessionPhase::AwaitingClientHello;
  std::optional<SessionKeys> keys;
  uint64_t seq_c2s = 0;
  uint64_t seq_s2c = 0;
  std::optional<Micros> first_ciphertext_time;
  SessionStats stats;

  // internals owned by the engine
  struct DirectionState {
    RecordParser parser;
    HandshakeAccumulator handshake;
    bool cipher_active = false;
    uint64_t plaintext_offset = 0;
    bool missed_records = false;  // a record needing keys was not decrypted
    uint64_t bytes_total = 0;
    uint64_t bytes_decrypted = 0;
  };
  DirectionState dirs[2];
  // Wire direction carrying client->server TLS traffic. Normally the flow
  // initiator, flipped if the ClientHello shows up on the other side of a
  // SYN-less flow.
  Direction client_wire_dir = Direction::ClientToServer;
  bool key_available_at_first_ciphertext = false;
  bool handshake_parse_error = false;
  bool resumed = false;
};

struct EngineCounters {
  uint64_t records_skipped_missing_key = 0;
  uint64_t records_malformed = 0;
  uint64_t alerts_plaintext = 0;
  uint64_t alerts_encrypted = 0;
  uint64_t finished_decrypted = 0;
  uint64_t finished_auth_failed = 0;
  uint64_t handshake_parse_errors = 0;
  uint64_t desynced_directions = 0;
  uint64_t discarded_trailing_bytes = 0;
  uint64_t bad_key_material = 0;
  uint64_t appdata_before_ccs = 0;
};

struct SessionReport {
  std::string flow;
  SessionPhase phase = SessionPhase::AwaitingClientHello;
  SessionStats stats;
  bool had_key = false;
};

struct AggregateReport {
  uint64_t sessions_total = 0;        // TLS sessions (NonTls excluded)
  uint64_t sessions_nontls = 0;
  uint64_t sessions_unsupported = 0;  // wrong suite / resumed handshake
  uint64_t sessions_no_appdata = 0;
  uint64_t sessions_considered = 0;   // supported suite with AppData records
  uint64_t sessions_fully_decrypted = 0;
  uint64_t bytes_total = 0;
  uint64_t bytes_decrypted = 0;
  uint64_t bytes_c2s_total = 0;  // client request bytes (s)
  uint64_t bytes_s2c_total = 0;  // server response bytes (r)
  uint64_t records_total = 0;
  uint64_t records_decrypted = 0;
  uint64_t records_auth_failed = 0;
  EngineCounters counters;
  ReassemblyStats reassembly;
  std::vector<SessionReport> sessions;

  // Rates over considered sessions; nullopt when the denominator is zero.
  std::optional<double> connection_success_rate() const;
  std::optional<double> byte_success_rate() const;
  std::string to_text() const;
};

class DecryptEngine {
 public:
  DecryptEngine(EngineConfig config, const KeyStore& store,
                CleartextSink* sink);

  void feed_chunk(const StreamChunk& chunk);
  void finish();  // flush parsers, finalize per-session statistics
  AggregateReport report(const ReassemblyStats& reassembly) const;

 private:
  struct EngineEventCounts;
  TlsSession& session_for(const StreamChunk& chunk);
  void process_record(TlsSession& session, Direction wire_dir,
                      const TlsRecord& record, bool syn_seen);
  void handle_handshake_plain(TlsSession& session, Direction wire_dir,
                              const TlsRecord& record, bool syn_seen);
  void handle_encrypted(TlsSession& session, Direction wire_dir,
                        const TlsRecord& record);
  bool try_attach_keys(TlsSession& session, Micros now);

  EngineConfig config_;
  const KeyStore& store_;
  CleartextSink* sink_;
  std::unordered_map<FlowKey, std::unique_ptr<TlsSession>, FlowKeyHash>
      sessions_;
  std::vector<TlsSession*> session_order_;
  EngineCounters counters_;
  bool finished_ = false;
};

// Drive capture -> reassembly -> parsing -> decryption over a whole file.
AggregateReport run_capture(const std::string& capture_path,
                            const std::string& filter_expression,
                            const KeyStore& store, const EngineConfig& config,
                            CleartextSink* sink);

struct DelaySweepRow {
  Micros delay = 0;
  std::optional<double> connection_rate;
  std::optional<double> byte_rate;
  uint64_t bytes_total = 0;
  uint64_t sessions_considered = 0;
};

// One full engine pass per delay (sessions reset between passes). The
// capture is parsed once and replayed from memory.
std::vector<DelaySweepRow> sweep_delays(const std::string& capture_path,
                                        const KeyStore& store,
                                        const EngineConfig& base_config,
                                        const std::vector<Micros>& delays);

// TSV rows in the layout the delay plot reads: offset (ms), conns, tls_bytes.
std::string sweep_rows_to_tsv(const std::vector<DelaySweepRow>& rows);

}  // namespace tlstap
