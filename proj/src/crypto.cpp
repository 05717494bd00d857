#include "tlstap/crypto.hpp"

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/params.h>

#include <cassert>
#include <cstring>
#include <memory>

namespace tlstap {

namespace {

constexpr size_t kSha384Len = 48;

struct MacDeleter {
  void operator()(EVP_MAC* m) const { EVP_MAC_free(m); }
  void operator()(EVP_MAC_CTX* c) const { EVP_MAC_CTX_free(c); }
};

EVP_MAC* hmac_algo() {
  static EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
  return mac;
}

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

}  // namespace

Bytes hmac_sha384(ByteSpan key, ByteSpan data) {
  std::unique_ptr<EVP_MAC_CTX, MacDeleter> ctx(EVP_MAC_CTX_new(hmac_algo()));
  if (!ctx) throw TlstapError("EVP_MAC_CTX_new failed");
  char digest_name[] = "SHA384";
  OSSL_PARAM params[] = {
      OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST, digest_name, 0),
      OSSL_PARAM_construct_end()};
  // OpenSSL rejects a null key pointer even with zero length.
  static const uint8_t empty = 0;
  const uint8_t* key_ptr = key.empty() ? &empty : key.data();
  if (EVP_MAC_init(ctx.get(), key_ptr, key.size(), params) != 1 ||
      EVP_MAC_update(ctx.get(), data.data(), data.size()) != 1)
    throw TlstapError("HMAC-SHA384 failed");
  Bytes out(kSha384Len);
  size_t out_len = 0;
  if (EVP_MAC_final(ctx.get(), out.data(), &out_len, out.size()) != 1 ||
      out_len != kSha384Len)
    throw TlstapError("HMAC-SHA384 final failed");
  return out;
}

SessionKeys SessionKeys::from_key_block(ByteSpan block) {
  if (block.size() != kKeyBlockLen)
    throw TlstapError("key block must be 72 bytes");
  SessionKeys keys;
  const uint8_t* p = block.data();
  std::memcpy(keys.client_write_key.data(), p, kWriteKeyLen);
  std::memcpy(keys.server_write_key.data(), p + 32, kWriteKeyLen);
  std::memcpy(keys.client_fixed_iv.data(), p + 64, kFixedIvLen);
  std::memcpy(keys.server_fixed_iv.data(), p + 68, kFixedIvLen);
  return keys;
}

Bytes tls_prf(ByteSpan secret, std::string_view label, ByteSpan seed,
              size_t out_len) {
  if (out_len == 0) throw TlstapError("tls_prf: out_len must be positive");
  Bytes label_seed;
  label_seed.reserve(label.size() + seed.size());
  label_seed.insert(label_seed.end(), label.begin(), label.end());
  label_seed.insert(label_seed.end(), seed.begin(), seed.end());

  Bytes out;
  out.reserve(out_len + kSha384Len);
  Bytes a = hmac_sha384(secret, label_seed);  // A(1)
  while (out.size() < out_len) {
    Bytes block = a;
    block.insert(block.end(), label_seed.begin(), label_seed.end());
    Bytes chunk = hmac_sha384(secret, block);
    out.insert(out.end(), chunk.begin(), chunk.end());
    a = hmac_sha384(secret, a);
  }
  out.resize(out_len);
  return out;
}

Bytes derive_master_secret(ByteSpan pre_master_secret, ByteSpan client_random,
                           ByteSpan server_random) {
  if (client_random.size() != kRandomLen || server_random.size() != kRandomLen)
    throw TlstapError("randoms must be 32 bytes");
  Bytes seed;
  seed.reserve(2 * kRandomLen);
  seed.insert(seed.end(), client_random.begin(), client_random.end());
  seed.insert(seed.end(), server_random.begin(), server_random.end());
  return tls_prf(pre_master_secret, "master secret", seed, kMasterSecretLen);
}

SessionKeys derive_session_keys(ByteSpan master_secret, ByteSpan client_random,
                                ByteSpan server_random) {
  if (master_secret.size() != kMasterSecretLen)
    throw TlstapError("master secret must be 48 bytes");
  if (client_random.size() != kRandomLen || server_random.size() != kRandomLen)
    throw TlstapError("randoms must be 32 bytes");
  // Key expansion seeds server_random first, unlike master-secret derivation.
  Bytes seed;
  seed.reserve(2 * kRandomLen);
  seed.insert(seed.end(), server_random.begin(), server_random.end());
  seed.insert(seed.end(), client_random.begin(), client_random.end());
  Bytes block = tls_prf(master_secret, "key expansion", seed, kKeyBlockLen);
  return SessionKeys::from_key_block(block);
}

std::optional<Bytes> decrypt_record(const SessionKeys& keys,
                                    TlsDirection direction, uint64_t seq,
                                    const AeadRecordParts& parts,
                                    uint8_t content_type, uint8_t ver_major,
                                    uint8_t ver_minor) {
  const auto& key = direction == TlsDirection::ClientToServer
                        ? keys.client_write_key
                        : keys.server_write_key;
  const auto& fixed_iv = direction == TlsDirection::ClientToServer
                             ? keys.client_fixed_iv
                             : keys.server_fixed_iv;

  uint8_t nonce[kFixedIvLen + kExplicitNonceLen];
  std::memcpy(nonce, fixed_iv.data(), kFixedIvLen);
  std::memcpy(nonce + kFixedIvLen, parts.explicit_nonce.data(),
              kExplicitNonceLen);

  Bytes aad;
  aad.reserve(13);
  write_u64be(aad, seq);
  aad.push_back(content_type);
  aad.push_back(ver_major);
  aad.push_back(ver_minor);
  write_u16be(aad, static_cast<uint16_t>(parts.ciphertext.size()));

  std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw TlstapError("EVP_CIPHER_CTX_new failed");
  if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr,
                         nullptr) != 1)
    throw TlstapError("GCM init failed");
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, sizeof(nonce),
                          nullptr) != 1)
    throw TlstapError("GCM set ivlen failed");
  if (EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce) != 1)
    throw TlstapError("GCM set key/nonce failed");

  int len = 0;
  if (EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                        static_cast<int>(aad.size())) != 1)
    throw TlstapError("GCM AAD failed");

  Bytes plaintext(parts.ciphertext.size());
  if (!parts.ciphertext.empty()) {
    if (EVP_DecryptUpdate(ctx.get(), plaintext.data(), &len,
                          parts.ciphertext.data(),
                          static_cast<int>(parts.ciphertext.size())) != 1)
      return std::nullopt;
    assert(static_cast<size_t>(len) == plaintext.size());
  }

  // Tag check is constant-time inside OpenSSL; DecryptFinal fails on mismatch.
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTagLen,
                          const_cast<uint8_t*>(parts.tag.data())) != 1)
    throw TlstapError("GCM set tag failed");
  uint8_t dummy;
  int final_len = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), &dummy, &final_len) != 1)
    return std::nullopt;
  return plaintext;
}

}  // namespace tlstap
