#include "tlstap/tls_records.hpp"

#include <cstring>

namespace tlstap {

namespace {

bool plausible_header(const uint8_t* p) {
  uint8_t type = p[0];
  uint16_t len = read_u16be(p + 3);
  return type >= 20 && type <= 23 && p[1] == 3 && p[2] <= 4 && len >= 1 &&
         len <= kMaxRecordPayload;
}

}  // namespace

std::vector<TlsRecord> RecordParser::feed(ByteSpan bytes, Micros capture_time) {
  std::vector<TlsRecord> out;
  if (status_ == StreamStatus::NonTls || desynced_) return out;

  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  while (buffer_.size() >= 5) {
    if (status_ == StreamStatus::Undetermined) {
      if (!plausible_header(buffer_.data())) {
        status_ = StreamStatus::NonTls;
        buffer_.clear();
        return out;
      }
      status_ = StreamStatus::Tls;
    }
    uint16_t len = read_u16be(buffer_.data() + 3);
    uint8_t type = buffer_[0];
    if (type < 20 || type > 23 || buffer_[1] != 3 || len > kMaxRecordPayload) {
      // Framing desync after a valid TLS start; stop parsing this direction.
      desynced_ = true;
      buffer_.clear();
      return out;
    }
    if (buffer_.size() < 5u + len) break;
    TlsRecord record;
    record.content_type = type;
    record.ver_major = buffer_[1];
    record.ver_minor = buffer_[2];
    record.payload.assign(buffer_.begin() + 5, buffer_.begin() + 5 + len);
    record.capture_time = capture_time;
    buffer_.erase(buffer_.begin(), buffer_.begin() + 5 + len);
    out.push_back(std::move(record));
  }
  return out;
}

void RecordParser::finish() {
  if (!buffer_.empty()) {
    if (status_ == StreamStatus::Undetermined) {
      // Short stream that never produced a full header; classify now so it
      // is excluded from decryption statistics.
      status_ = buffer_.size() >= 5 && plausible_header(buffer_.data())
                    ? StreamStatus::Tls
                    : StreamStatus::NonTls;
    }
    if (status_ == StreamStatus::Tls) discarded_trailing_ = buffer_.size();
    buffer_.clear();
  }
}

std::vector<HandshakeMessage> HandshakeAccumulator::feed(
    ByteSpan record_payload) {
  buffer_.insert(buffer_.end(), record_payload.begin(), record_payload.end());
  std::vector<HandshakeMessage> out;
  while (buffer_.size() >= 4) {
    uint32_t len = static_cast<uint32_t>(buffer_[1]) << 16 |
                   static_cast<uint32_t>(buffer_[2]) << 8 | buffer_[3];
    if (buffer_.size() < 4u + len) break;
    HandshakeMessage msg;
    msg.msg_type = buffer_[0];
    msg.body.assign(buffer_.begin() + 4, buffer_.begin() + 4 + len);
    buffer_.erase(buffer_.begin(), buffer_.begin() + 4 + len);
    out.push_back(std::move(msg));
  }
  return out;
}

std::optional<ClientHelloInfo> parse_client_hello(ByteSpan body) {
  // client_version(2) random(32) session_id_len(1) session_id ...
  if (body.size() < 2 + kRandomLen + 1) return std::nullopt;
  ClientHelloInfo info;
  std::memcpy(info.random.data(), body.data() + 2, kRandomLen);
  uint8_t sid_len = body[2 + kRandomLen];
  if (sid_len > 32 || body.size() < 2 + kRandomLen + 1u + sid_len)
    return std::nullopt;
  info.session_id.assign(body.begin() + 2 + kRandomLen + 1,
                         body.begin() + 2 + kRandomLen + 1 + sid_len);
  return info;
}

std::optional<ServerHelloInfo> parse_server_hello(ByteSpan body) {
  // server_version(2) random(32) session_id_len(1) session_id suite(2) comp(1)
  if (body.size() < 2 + kRandomLen + 1) return std::nullopt;
  ServerHelloInfo info;
  info.ver_major = body[0];
  info.ver_minor = body[1];
  std::memcpy(info.random.data(), body.data() + 2, kRandomLen);
  uint8_t sid_len = body[2 + kRandomLen];
  size_t suite_at = 2 + kRandomLen + 1 + sid_len;
  if (sid_len > 32 || body.size() < suite_at + 3) return std::nullopt;
  info.session_id.assign(body.begin() + 2 + kRandomLen + 1,
                         body.begin() + suite_at);
  info.cipher_suite = read_u16be(body.data() + suite_at);
  return info;
}

std::optional<AeadRecordParts> split_aead_record(const TlsRecord& record) {
  if (record.payload.size() < kExplicitNonceLen + kGcmTagLen)
    return std::nullopt;
  AeadRecordParts parts;
  std::memcpy(parts.explicit_nonce.data(), record.payload.data(),
              kExplicitNonceLen);
  parts.ciphertext.assign(
      record.payload.begin() + kExplicitNonceLen,
      record.payload.end() - kGcmTagLen);
  std::memcpy(parts.tag.data(),
              record.payload.data() + record.payload.size() - kGcmTagLen,
              kGcmTagLen);
  return parts;
}

}  // namespace tlstap
