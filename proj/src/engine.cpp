#include "tlstap/engine.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "tlstap/packet_decode.hpp"
#include "tlstap/pcap_reader.hpp"

namespace tlstap {

namespace {

FlowKey canonical(const FlowKey& key) {
  FlowKey out = key;
  if (std::tie(out.server_ip, out.server_port) <
      std::tie(out.client_ip, out.client_port)) {
    std::swap(out.client_ip, out.server_ip);
    std::swap(out.client_port, out.server_port);
  }
  return out;
}

std::string format_rate(std::optional<double> rate) {
  if (!rate) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *rate);
  return buf;
}

// Every encrypted record consumes one sender sequence number, decrypted here
// or not; the counters must track that to stay usable when seq_from_nonce is
// off.
void advance_seq(TlsSession& session, Direction wire_dir) {
  if (wire_dir == session.client_wire_dir)
    session.seq_c2s++;
  else
    session.seq_s2c++;
}

}  // namespace

const char* to_string(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::AwaitingClientHello:
      return "AwaitingClientHello";
    case SessionPhase::AwaitingServerHello:
      return "AwaitingServerHello";
    case SessionPhase::AwaitingCCS:
      return "AwaitingCCS";
    case SessionPhase::Encrypted:
      return "Encrypted";
    case SessionPhase::Unsupported:
      return "Unsupported";
    case SessionPhase::NonTls:
      return "NonTls";
  }
  return "?";
}

DecryptEngine::DecryptEngine(EngineConfig config, const KeyStore& store,
                             CleartextSink* sink)
    : config_(config), store_(store), sink_(sink) {}

TlsSession& DecryptEngine::session_for(const StreamChunk& chunk) {
  FlowKey key = canonical(chunk.flow);
  auto it = sessions_.find(key);
  if (it == sessions_.end()) {
    auto session = std::make_unique<TlsSession>();
    session->flow = chunk.flow;
    it = sessions_.emplace(key, std::move(session)).first;
    session_order_.push_back(it->second.get());
  }
  return *it->second;
}

void DecryptEngine::feed_chunk(const StreamChunk& chunk) {
  TlsSession& session = session_for(chunk);
  if (session.phase == SessionPhase::NonTls) return;

  // The chunk direction is relative to the flow initiator; map it onto the
  // session's notion of which wire direction the TLS client talks on.
  Direction wire_dir = chunk.direction;
  auto& dir_state = session.dirs[static_cast<int>(wire_dir)];
  auto records = dir_state.parser.feed(chunk.bytes, chunk.capture_time);

  if (dir_state.parser.status() == RecordParser::StreamStatus::NonTls &&
      !session.summary.client_random) {
    session.phase = SessionPhase::NonTls;
    return;
  }

  for (const auto& record : records)
    process_record(session, wire_dir, record, chunk.syn_seen);
}

void DecryptEngine::process_record(TlsSession& session, Direction wire_dir,
                                   const TlsRecord& record, bool syn_seen) {
  auto& dir_state = session.dirs[static_cast<int>(wire_dir)];

  switch (static_cast<ContentType>(record.content_type)) {
    case ContentType::ChangeCipherSpec:
      dir_state.cipher_active = true;
      if (session.phase == SessionPhase::AwaitingCCS)
        session.phase = SessionPhase::Encrypted;
      return;

    case ContentType::Alert:
      if (dir_state.cipher_active) {
        counters_.alerts_encrypted++;
        advance_seq(session, wire_dir);
      } else {
        counters_.alerts_plaintext++;
      }
      return;

    case ContentType::Handshake:
      if (dir_state.cipher_active)
        handle_encrypted(session, wire_dir, record);
      else
        handle_handshake_plain(session, wire_dir, record, syn_seen);
      return;

    case ContentType::ApplicationData:
      if (!dir_state.cipher_active) {
        counters_.appdata_before_ccs++;
        return;
      }
      handle_encrypted(session, wire_dir, record);
      return;
  }
}

void DecryptEngine::handle_handshake_plain(TlsSession& session,
                                           Direction wire_dir,
                                           const TlsRecord& record,
                                           bool syn_seen) {
  auto& dir_state = session.dirs[static_cast<int>(wire_dir)];
  for (const auto& msg : dir_state.handshake.feed(record.payload)) {
    if (msg.msg_type == kHandshakeClientHello &&
        !session.summary.client_random) {
      auto hello = parse_client_hello(msg.body);
      if (!hello) {
        session.handshake_parse_error = true;
        counters_.handshake_parse_errors++;
        continue;
      }
      session.summary.client_random = hello->random;
      session.summary.client_session_id = hello->session_id;
      session.phase = SessionPhase::AwaitingServerHello;
      // ClientHello fixes the TLS client side. For flows without a SYN the
      // flow orientation follows it too.
      session.client_wire_dir = wire_dir;
      if (!syn_seen && wire_dir == Direction::ServerToClient) {
        std::swap(session.flow.client_ip, session.flow.server_ip);
        std::swap(session.flow.client_port, session.flow.server_port);
        session.client_wire_dir = Direction::ServerToClient;
      }
    } else if (msg.msg_type == kHandshakeServerHello &&
               !session.summary.server_random) {
      auto hello = parse_server_hello(msg.body);
      if (!hello) {
        session.handshake_parse_error = true;
        counters_.handshake_parse_errors++;
        continue;
      }
      session.summary.server_random = hello->random;
      session.summary.cipher_suite = hello->cipher_suite;
      session.summary.server_session_id = hello->session_id;
      session.summary.version =
          (hello->ver_major == 3 && hello->ver_minor == 3)
              ? NegotiatedVersion::Tls12
              : NegotiatedVersion::Other;

      bool is_resumed = !session.summary.client_session_id.empty() &&
                        session.summary.client_session_id ==
                            session.summary.server_session_id;
      if (is_resumed) {
        session.resumed = true;
        session.phase = SessionPhase::Unsupported;
      } else if (hello->cipher_suite != kSupportedSuite ||
                 session.summary.version != NegotiatedVersion::Tls12) {
        session.phase = SessionPhase::Unsupported;
      } else {
        session.phase = SessionPhase::AwaitingCCS;
      }
    }
  }
}

void DecryptEngine::handle_encrypted(TlsSession& session, Direction wire_dir,
                                     const TlsRecord& record) {
  auto& dir_state = session.dirs[static_cast<int>(wire_dir)];
  bool is_appdata =
      record.content_type == static_cast<uint8_t>(ContentType::ApplicationData);
  bool first_ciphertext = false;

  if (is_appdata) {
    if (!session.first_ciphertext_time) {
      session.first_ciphertext_time = record.capture_time;
      first_ciphertext = true;
    }
    session.stats.records_total++;
  }

  auto parts = split_aead_record(record);
  if (!parts) {
    counters_.records_malformed++;
    advance_seq(session, wire_dir);
    return;
  }
  if (is_appdata) {
    uint64_t plaintext_len = parts->ciphertext.size();
    session.stats.tls_payload_bytes_total += plaintext_len;
    dir_state.bytes_total += plaintext_len;
  }

  if (!config_.decrypt_enabled) {
    // Parse-only mode: account, never decrypt.
    if (is_appdata) dir_state.missed_records = true;
    advance_seq(session, wire_dir);
    return;
  }

  bool unsupported = session.phase == SessionPhase::Unsupported;
  if (!unsupported && !session.keys)
    try_attach_keys(session, record.capture_time);
  if (first_ciphertext)
    session.key_available_at_first_ciphertext = session.keys.has_value();

  if (!session.keys) {
    // Missing key (still in transit, withheld, or unsupported suite):
    // skip this record only, the session stays alive.
    if (is_appdata) {
      counters_.records_skipped_missing_key++;
      dir_state.missed_records = true;
    }
    advance_seq(session, wire_dir);
    return;
  }

  TlsDirection tls_dir = wire_dir == session.client_wire_dir
                             ? TlsDirection::ClientToServer
                             : TlsDirection::ServerToClient;
  uint64_t seq;
  if (config_.seq_from_nonce) {
    seq = read_u64be(parts->explicit_nonce.data());
  } else {
    seq = wire_dir == session.client_wire_dir ? session.seq_c2s
                                              : session.seq_s2c;
  }
  auto plaintext = decrypt_record(*session.keys, tls_dir, seq, *parts,
                                  record.content_type, record.ver_major,
                                  record.ver_minor);
  advance_seq(session, wire_dir);

  if (!plaintext) {
    if (is_appdata) {
      session.stats.records_auth_failed++;
      dir_state.missed_records = true;
    } else {
      counters_.finished_auth_failed++;
    }
    return;
  }

  if (!is_appdata) {
    counters_.finished_decrypted++;
    return;
  }

  session.stats.records_decrypted++;
  session.stats.tls_payload_bytes_decrypted += plaintext->size();
  dir_state.bytes_decrypted += plaintext->size();

  if (sink_) {
    CleartextEvent event;
    event.flow = session.flow;
    event.direction = wire_dir == session.client_wire_dir
                          ? Direction::ClientToServer
                          : Direction::ServerToClient;
    event.offset = dir_state.plaintext_offset;
    event.bytes = *plaintext;
    event.gap_before = dir_state.missed_records;
    event.capture_time = record.capture_time;
    sink_->on_cleartext(event);
  }
  dir_state.plaintext_offset += plaintext->size();
}

bool DecryptEngine::try_attach_keys(TlsSession& session, Micros now) {
  if (session.keys) return true;
  if (!session.summary.client_random || !session.summary.server_random)
    return false;
  if (session.summary.cipher_suite != kSupportedSuite) return false;

  std::optional<Micros> as_of;
  if (config_.gate_by_arrival_time) as_of = now + config_.traffic_delay;
  auto entry = store_.lookup(*session.summary.client_random, as_of);
  if (!entry) return false;

  const auto& client_random = *session.summary.client_random;
  const auto& server_random = *session.summary.server_random;
  try {
    switch (entry->kind) {
      case KeyKind::PreMaster: {
        Bytes master =
            derive_master_secret(entry->secret, client_random, server_random);
        session.keys =
            derive_session_keys(master, client_random, server_random);
        break;
      }
      case KeyKind::Master:
        session.keys = derive_session_keys(entry->secret, client_random,
                                           server_random);
        break;
      case KeyKind::SessionKeys:
        session.keys = SessionKeys::from_key_block(entry->secret);
        break;
    }
  } catch (const TlstapError&) {
    counters_.bad_key_material++;
    return false;
  }
  return session.keys.has_value();
}

void DecryptEngine::finish() {
  if (finished_) return;
  finished_ = true;
  for (auto* session : session_order_) {
    for (auto& dir : session->dirs) {
      dir.parser.finish();
      counters_.discarded_trailing_bytes += dir.parser.discarded_trailing_bytes();
      if (dir.parser.desynced()) counters_.desynced_directions++;
    }
    // Re-classify flows that never produced a plausible TLS record.
    if (session->phase == SessionPhase::AwaitingClientHello &&
        !session->summary.client_random) {
      auto status0 = session->dirs[0].parser.status();
      auto status1 = session->dirs[1].parser.status();
      if (status0 != RecordParser::StreamStatus::Tls &&
          status1 != RecordParser::StreamStatus::Tls)
        session->phase = SessionPhase::NonTls;
    }
    auto& stats = session->stats;
    stats.fully_decrypted = session->key_available_at_first_ciphertext &&
                            stats.records_total > 0 &&
                            stats.records_decrypted == stats.records_total &&
                            stats.records_auth_failed == 0;
  }
}

AggregateReport DecryptEngine::report(const ReassemblyStats& reassembly) const {
  AggregateReport report;
  report.counters = counters_;
  report.reassembly = reassembly;
  for (const auto* session : session_order_) {
    SessionReport sr;
    sr.flow = session->flow.to_string();
    sr.phase = session->phase;
    sr.stats = session->stats;
    sr.had_key = session->keys.has_value();
    report.sessions.push_back(std::move(sr));

    if (session->phase == SessionPhase::NonTls) {
      report.sessions_nontls++;
      continue;
    }
    report.sessions_total++;
    if (session->phase == SessionPhase::Unsupported) {
      report.sessions_unsupported++;
      continue;
    }
    if (session->stats.records_total == 0) {
      report.sessions_no_appdata++;
      continue;
    }
    report.sessions_considered++;
    if (session->stats.fully_decrypted) report.sessions_fully_decrypted++;
    report.bytes_total += session->stats.tls_payload_bytes_total;
    report.bytes_decrypted += session->stats.tls_payload_bytes_decrypted;
    int client_dir = static_cast<int>(session->client_wire_dir);
    report.bytes_c2s_total += session->dirs[client_dir].bytes_total;
    report.bytes_s2c_total += session->dirs[1 - client_dir].bytes_total;
    report.records_total += session->stats.records_total;
    report.records_decrypted += session->stats.records_decrypted;
    report.records_auth_failed += session->stats.records_auth_failed;
  }
  return report;
}

std::optional<double> AggregateReport::connection_success_rate() const {
  if (sessions_considered == 0) return std::nullopt;
  return static_cast<double>(sessions_fully_decrypted) /
         static_cast<double>(sessions_considered);
}

std::optional<double> AggregateReport::byte_success_rate() const {
  if (bytes_total == 0) return std::nullopt;
  return static_cast<double>(bytes_decrypted) /
         static_cast<double>(bytes_total);
}

std::string AggregateReport::to_text() const {
  std::ostringstream out;
  out << "sessions: total=" << sessions_total << " nontls=" << sessions_nontls
      << " unsupported=" << sessions_unsupported
      << " no_appdata=" << sessions_no_appdata
      << " considered=" << sessions_considered
      << " fully_decrypted=" << sessions_fully_decrypted << "\n";
  out << "bytes: total=" << bytes_total << " decrypted=" << bytes_decrypted
      << " sent_s=" << bytes_c2s_total << " received_r=" << bytes_s2c_total
      << "\n";
  out << "records: total=" << records_total
      << " decrypted=" << records_decrypted
      << " auth_failed=" << records_auth_failed
      << " skipped_missing_key=" << counters.records_skipped_missing_key
      << "\n";
  out << "rates: connections=" << format_rate(connection_success_rate())
      << " bytes=" << format_rate(byte_success_rate()) << "\n";
  out << "anomalies: malformed_records=" << counters.records_malformed
      << " handshake_parse_errors=" << counters.handshake_parse_errors
      << " desynced_directions=" << counters.desynced_directions
      << " bad_key_material=" << counters.bad_key_material
      << " appdata_before_ccs=" << counters.appdata_before_ccs << "\n";
  out << "reassembly: packets=" << reassembly.packets_total
      << " not_tcp=" << reassembly.packets_not_tcp
      << " fragmented=" << reassembly.packets_fragmented
      << " unparseable=" << reassembly.packets_unparseable
      << " filtered=" << reassembly.packets_filtered
      << " duplicates=" << reassembly.duplicate_segments
      << " conflicts=" << reassembly.conflicting_overlaps
      << " dropped_flows=" << reassembly.flows_dropped_buffer_cap
      << " gaps_at_end=" << reassembly.directions_with_gap_at_end << "\n";
  return out.str();
}

AggregateReport run_capture(const std::string& capture_path,
                            const std::string& filter_expression,
                            const KeyStore& store, const EngineConfig& config,
                            CleartextSink* sink) {
  CaptureReader reader(capture_path);
  CaptureFilter filter = CaptureFilter::parse(filter_expression);
  TcpReassembler reassembler;
  DecryptEngine engine(config, store, sink);

  while (auto frame = reader.next()) {
    auto decoded = decode_frame(*frame);
    if (decoded.status != DecodeStatus::Ok) {
      reassembler.count_decode(decoded.status);
      continue;
    }
    if (!filter.matches(decoded.segment)) {
      reassembler.count_filtered();
      continue;
    }
    for (const auto& chunk : reassembler.feed(decoded.segment))
      engine.feed_chunk(chunk);
  }
  reassembler.finish();
  engine.finish();
  return engine.report(reassembler.stats());
}

std::vector<DelaySweepRow> sweep_delays(const std::string& capture_path,
                                        const KeyStore& store,
                                        const EngineConfig& base_config,
                                        const std::vector<Micros>& delays) {
  // Parse and reassemble once; replay the chunk stream per delay value.
  std::vector<StreamChunk> chunks;
  TcpReassembler reassembler;
  {
    CaptureReader reader(capture_path);
    while (auto frame = reader.next()) {
      auto decoded = decode_frame(*frame);
      if (decoded.status != DecodeStatus::Ok) {
        reassembler.count_decode(decoded.status);
        continue;
      }
      for (auto& chunk : reassembler.feed(decoded.segment))
        chunks.push_back(std::move(chunk));
    }
    reassembler.finish();
  }

  std::vector<DelaySweepRow> rows;
  for (Micros delay : delays) {
    EngineConfig config = base_config;
    config.traffic_delay = delay;
    config.gate_by_arrival_time = true;
    DecryptEngine engine(config, store, nullptr);
    for (const auto& chunk : chunks) engine.feed_chunk(chunk);
    engine.finish();
    AggregateReport report = engine.report(reassembler.stats());
    DelaySweepRow row;
    row.delay = delay;
    row.connection_rate = report.connection_success_rate();
    row.byte_rate = report.byte_success_rate();
    row.bytes_total = report.bytes_total;
    row.sessions_considered = report.sessions_considered;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_rows_to_tsv(const std::vector<DelaySweepRow>& rows) {
  std::ostringstream out;
  out << "offset\tconns\ttls_bytes\n";
  for (const auto& row : rows) {
    if (row.delay % 1000 == 0) {
      out << row.delay / 1000;
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f",
                    static_cast<double>(row.delay) / 1000.0);
      out << buf;
    }
    out << '\t' << format_rate(row.connection_rate) << '\t'
        << format_rate(row.byte_rate) << '\n';
  }
  return out.str();
}

}  // namespace tlstap
