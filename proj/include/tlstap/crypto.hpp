#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "tlstap/bytes.hpp"

namespace tlstap {

// The single suite this engine decrypts: TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384.
inline constexpr uint16_t kSupportedSuite = 0xC030;

inline constexpr size_t kMasterSecretLen = 48;
inline constexpr size_t kRandomLen = 32;
inline constexpr size_t kWriteKeyLen = 32;   // AES-256
inline constexpr size_t kFixedIvLen = 4;     // GCM salt
inline constexpr size_t kExplicitNonceLen = 8;
inline constexpr size_t kGcmTagLen = 16;
inline constexpr size_t kKeyBlockLen = 2 * kWriteKeyLen + 2 * kFixedIvLen;  // 72

enum class TlsDirection { ClientToServer, ServerToClient };

// Write keys and fixed IVs for both directions of one connection.
struct SessionKeys {
  std::array<uint8_t, kWriteKeyLen> client_write_key{};
  std::array<uint8_t, kWriteKeyLen> server_write_key{};
  std::array<uint8_t, kFixedIvLen> client_fixed_iv{};
  std::array<uint8_t, kFixedIvLen> server_fixed_iv{};

  // Partition a 72-byte key expansion block. MAC slots are zero-length for
  // AEAD suites, so write keys start at offset 0.
  static SessionKeys from_key_block(ByteSpan block);
};

struct AeadRecordParts {
  std::array<uint8_t, kExplicitNonceLen> explicit_nonce{};
  Bytes ciphertext;
  std::array<uint8_t, kGcmTagLen> tag{};
};

Bytes hmac_sha384(ByteSpan key, ByteSpan data);

// P_SHA384 expansion per RFC 5246 section 5, truncated to out_len.
Bytes tls_prf(ByteSpan secret, std::string_view label, ByteSpan seed,
              size_t out_len);

// PRF(pms, "master secret", client_random || server_random, 48).
Bytes derive_master_secret(ByteSpan pre_master_secret, ByteSpan client_random,
                           ByteSpan server_random);

// PRF(ms, "key expansion", server_random || client_random, 72), partitioned.
// Note the reversed random order relative to master-secret derivation.
SessionKeys derive_session_keys(ByteSpan master_secret, ByteSpan client_random,
                                ByteSpan server_random);

// AES-256-GCM record decryption. nonce = fixed_iv(direction) || explicit_nonce,
// AAD = seq(8,BE) || content_type || version(2) || plaintext_len(2).
// Returns nullopt on authentication-tag mismatch; plaintext is never released
// when the tag fails.
std::optional<Bytes> decrypt_record(const SessionKeys& keys,
                                    TlsDirection direction, uint64_t seq,
                                    const AeadRecordParts& parts,
                                    uint8_t content_type, uint8_t ver_major,
                                    uint8_t ver_minor);

}  // namespace tlstap
