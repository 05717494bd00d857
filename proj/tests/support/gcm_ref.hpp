#pragma once

// Test-side AES-256-GCM record encryptor. The library deliberately has no
// encryption path, so tests build ciphertext records here.

#include <openssl/evp.h>

#include <cstring>
#include <stdexcept>

#include "tlstap/crypto.hpp"

namespace tlstap_test {

inline tlstap::AeadRecordParts encrypt_record(
    const tlstap::SessionKeys& keys, tlstap::TlsDirection direction,
    uint64_t seq, tlstap::ByteSpan plaintext, uint8_t content_type,
    uint8_t ver_major = 3, uint8_t ver_minor = 3) {
  const auto& key = direction == tlstap::TlsDirection::ClientToServer
                        ? keys.client_write_key
                        : keys.server_write_key;
  const auto& fixed_iv = direction == tlstap::TlsDirection::ClientToServer
                             ? keys.client_fixed_iv
                             : keys.server_fixed_iv;

  tlstap::AeadRecordParts parts;
  for (int i = 0; i < 8; i++)
    parts.explicit_nonce[i] = static_cast<uint8_t>(seq >> (56 - 8 * i));

  uint8_t nonce[12];
  std::memcpy(nonce, fixed_iv.data(), 4);
  std::memcpy(nonce + 4, parts.explicit_nonce.data(), 8);

  tlstap::Bytes aad;
  tlstap::write_u64be(aad, seq);
  aad.push_back(content_type);
  aad.push_back(ver_major);
  aad.push_back(ver_minor);
  tlstap::write_u16be(aad, static_cast<uint16_t>(plaintext.size()));

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx) throw std::runtime_error("ctx");
  int len = 0;
  parts.ciphertext.resize(plaintext.size());
  if (EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_IVLEN, 12, nullptr) != 1 ||
      EVP_EncryptInit_ex(ctx, nullptr, nullptr, key.data(), nonce) != 1 ||
      EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(),
                        static_cast<int>(aad.size())) != 1)
    throw std::runtime_error("gcm encrypt init");
  if (!plaintext.empty() &&
      EVP_EncryptUpdate(ctx, parts.ciphertext.data(), &len, plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1)
    throw std::runtime_error("gcm encrypt");
  uint8_t dummy;
  if (EVP_EncryptFinal_ex(ctx, &dummy, &len) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, 16, parts.tag.data()) != 1)
    throw std::runtime_error("gcm final");
  EVP_CIPHER_CTX_free(ctx);
  return parts;
}

}  // namespace tlstap_test
