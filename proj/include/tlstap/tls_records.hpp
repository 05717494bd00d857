#pragma once

#include <array>
#include <optional>
#include <vector>

#include "tlstap/bytes.hpp"
#include "tlstap/crypto.hpp"

namespace tlstap {

enum class ContentType : uint8_t {
  ChangeCipherSpec = 20,
  Alert = 21,
  Handshake = 22,
  ApplicationData = 23,
};

inline constexpr size_t kMaxRecordPayload = (1 << 14) + 2048;

struct TlsRecord {
  uint8_t content_type = 0;
  uint8_t ver_major = 0;
  uint8_t ver_minor = 0;
  Bytes payload;
  Micros capture_time = 0;
};

// Stream-based record framing for one direction of one connection. Records
// may span TCP chunks; framing is a pure function of the byte stream.
class RecordParser {
 public:
  enum class StreamStatus { Undetermined, Tls, NonTls };

  // Append stream bytes, return every record completed by them. A record's
  // capture_time is the timestamp of the chunk that completed it.
  std::vector<TlsRecord> feed(ByteSpan bytes, Micros capture_time);

  // Stream ended: a trailing partial record is discarded with a diagnostic.
  void finish();

  StreamStatus status() const { return status_; }
  bool desynced() const { return desynced_; }
  size_t discarded_trailing_bytes() const { return discarded_trailing_; }

 private:
  Bytes buffer_;
  StreamStatus status_ = StreamStatus::Undetermined;
  bool desynced_ = false;
  size_t discarded_trailing_ = 0;
};

struct HandshakeMessage {
  uint8_t msg_type = 0;
  Bytes body;
};

inline constexpr uint8_t kHandshakeClientHello = 1;
inline constexpr uint8_t kHandshakeServerHello = 2;

// Reassembles handshake messages across record boundaries (one direction,
// cleartext records only).
class HandshakeAccumulator {
 public:
  std::vector<HandshakeMessage> feed(ByteSpan record_payload);
  bool has_partial() const { return !buffer_.empty(); }

 private:
  Bytes buffer_;
};

struct ClientHelloInfo {
  std::array<uint8_t, kRandomLen> random{};
  Bytes session_id;
};

struct ServerHelloInfo {
  std::array<uint8_t, kRandomLen> random{};
  Bytes session_id;
  uint16_t cipher_suite = 0;
  uint8_t ver_major = 0;
  uint8_t ver_minor = 0;
};

enum class NegotiatedVersion { Unknown, Tls12, Other };

// What the engine needs for key matching: the two randoms, the chosen suite
// and the session IDs (for resumption detection).
struct HandshakeSummary {
  std::optional<std::array<uint8_t, kRandomLen>> client_random;
  std::optional<std::array<uint8_t, kRandomLen>> server_random;
  std::optional<uint16_t> cipher_suite;
  Bytes client_session_id;
  Bytes server_session_id;
  NegotiatedVersion version = NegotiatedVersion::Unknown;
};

// Both parsers take the handshake message body (after the 4-byte message
// header) and return nullopt on truncation.
std::optional<ClientHelloInfo> parse_client_hello(ByteSpan body);
std::optional<ServerHelloInfo> parse_server_hello(ByteSpan body);

// Split an encrypted record's payload into explicit nonce / ciphertext / tag.
// Returns nullopt for payloads shorter than the 24-byte AEAD minimum.
std::optional<AeadRecordParts> split_aead_record(const TlsRecord& record);

}  // namespace tlstap
