#include <doctest.h>

#include <random>

#include "support/gcm_ref.hpp"
#include "support/sha384_ref.hpp"
#include "tlstap/crypto.hpp"

using namespace tlstap;
using tlstap_test::ref_tls_prf;

namespace {

Bytes hex(std::string_view s) {
  auto b = from_hex(s);
  REQUIRE(b.has_value());
  return *b;
}

SessionKeys test_keys() {
  Bytes block;
  block.insert(block.end(), 32, 0x11);  // client key
  block.insert(block.end(), 32, 0x33);  // server key
  block.insert(block.end(), 4, 0x22);   // client iv
  block.insert(block.end(), 4, 0x44);   // server iv
  return SessionKeys::from_key_block(block);
}

}  // namespace

TEST_CASE("tls_prf matches frozen reference vectors") {
  Bytes zero48(48, 0x00);
  Bytes zero64(64, 0x00);

  CHECK(to_hex(tls_prf(zero48, "master secret", zero64, 48)) ==
        "564743f649871bb6db081be216c970f4fe8670a595f3ded1ca706da437fc22c1"
        "cf819a87b14cb2a2b888de103081b39c");
  CHECK(to_hex(tls_prf(zero48, "key expansion", zero64, 72)) ==
        "273a7057b0c3a2389ee6bb87d249b06d8d36bf8e0b4bb3a5d4770ae9ef1df8b8"
        "bd1526b367461acf467c9d30db5439c1db8a054d23c71ce8547b4fe8fa121868"
        "82686259d80f66b4");

  // Empty seed is still a total function.
  Bytes secret = {0x01, 0x02};
  CHECK(to_hex(tls_prf(secret, "test label", {}, 16)) ==
        "6cb2e53a251763e9a8a4b8c7dbbdd406");
}

TEST_CASE("tls_prf equals the independent P_SHA384 oracle on random inputs") {
  std::mt19937 rng(0x5eed);
  auto rand_bytes = [&](size_t n) {
    Bytes b(n);
    for (auto& v : b) v = static_cast<uint8_t>(rng());
    return b;
  };
  for (int i = 0; i < 120; i++) {
    Bytes secret = rand_bytes(1 + rng() % 64);
    Bytes seed = rand_bytes(rng() % 128);
    size_t out_len = 1 + rng() % 256;
    Bytes got = tls_prf(secret, "master secret", seed, out_len);
    auto want = ref_tls_prf(tlstap_test::RefBytes(secret.begin(), secret.end()),
                            "master secret",
                            tlstap_test::RefBytes(seed.begin(), seed.end()),
                            out_len);
    REQUIRE(Bytes(want.begin(), want.end()) == got);
  }
}

TEST_CASE("tls_prf output is prefix-consistent across lengths") {
  Bytes secret = {0xde, 0xad, 0xbe, 0xef};
  Bytes seed = {0x01};
  Bytes short_out = tls_prf(secret, "master secret", seed, 1);
  Bytes long_out = tls_prf(secret, "master secret", seed, 100);
  CHECK(Bytes(long_out.begin(), long_out.begin() + 1) == short_out);
}

TEST_CASE("derive_master_secret") {
  Bytes zero48(48, 0x00);
  Bytes zero32(32, 0x00);
  Bytes ms = derive_master_secret(zero48, zero32, zero32);
  CHECK(ms.size() == 48);
  CHECK(to_hex(ms) ==
        "564743f649871bb6db081be216c970f4fe8670a595f3ded1ca706da437fc22c1"
        "cf819a87b14cb2a2b888de103081b39c");

  // client_random comes first in the seed; swapping the randoms changes
  // the output (frozen from the same oracle).
  Bytes cr(32, 0x01), sr(32, 0x02);
  CHECK(to_hex(derive_master_secret(zero48, cr, sr)) ==
        "f1539914bb4018d4996c136c5b5e3d464910115c373e08e729db22931adaf828"
        "6d972e4b05a7ee8d28500be3f51ddf6b");
  CHECK(to_hex(derive_master_secret(zero48, sr, cr)) ==
        "eba430c91934ce7b374e3c5001d4cef69742f1b126fa54be17572c50d3a1b6c4"
        "ce2e7fa244c42f067755343f8a060bed");
}

TEST_CASE("derive_session_keys partitions the 72-byte block") {
  Bytes zero48(48, 0x00);
  Bytes zero32(32, 0x00);
  SessionKeys keys = derive_session_keys(zero48, zero32, zero32);
  Bytes block = hex(
      "273a7057b0c3a2389ee6bb87d249b06d8d36bf8e0b4bb3a5d4770ae9ef1df8b8"
      "bd1526b367461acf467c9d30db5439c1db8a054d23c71ce8547b4fe8fa121868"
      "82686259d80f66b4");
  CHECK(Bytes(keys.client_write_key.begin(), keys.client_write_key.end()) ==
        Bytes(block.begin(), block.begin() + 32));
  CHECK(Bytes(keys.server_write_key.begin(), keys.server_write_key.end()) ==
        Bytes(block.begin() + 32, block.begin() + 64));
  CHECK(Bytes(keys.client_fixed_iv.begin(), keys.client_fixed_iv.end()) ==
        Bytes(block.begin() + 64, block.begin() + 68));
  CHECK(Bytes(keys.server_fixed_iv.begin(), keys.server_fixed_iv.end()) ==
        Bytes(block.begin() + 68, block.end()));
}

TEST_CASE("client and server write keys differ for random inputs") {
  std::mt19937 rng(1234);
  for (int i = 0; i < 100; i++) {
    Bytes ms(48), cr(32), sr(32);
    for (auto& v : ms) v = static_cast<uint8_t>(rng());
    for (auto& v : cr) v = static_cast<uint8_t>(rng());
    for (auto& v : sr) v = static_cast<uint8_t>(rng());
    SessionKeys keys = derive_session_keys(ms, cr, sr);
    REQUIRE(keys.client_write_key != keys.server_write_key);
  }
}

TEST_CASE("decrypt_record recovers frozen vectors from an external encryptor") {
  SessionKeys keys = test_keys();

  AeadRecordParts parts;
  Bytes nonce = hex("0000000000000001");
  std::copy(nonce.begin(), nonce.end(), parts.explicit_nonce.begin());
  parts.ciphertext = hex("a1f0a4c22eb5d304c0ddca32bde088a2");
  Bytes tag = hex("a3ad996c90184531091edeb5835930e5");
  std::copy(tag.begin(), tag.end(), parts.tag.begin());

  auto pt = decrypt_record(keys, TlsDirection::ClientToServer, 1, parts, 23, 3, 3);
  REQUIRE(pt.has_value());
  CHECK(*pt == to_bytes("attack at dawn!!"));

  // Wrong sequence number breaks the AAD and must fail authentication.
  CHECK_FALSE(
      decrypt_record(keys, TlsDirection::ClientToServer, 2, parts, 23, 3, 3));
  // Wrong direction selects the wrong key.
  CHECK_FALSE(
      decrypt_record(keys, TlsDirection::ServerToClient, 1, parts, 23, 3, 3));
}

TEST_CASE("decrypt_record handles empty plaintext records") {
  SessionKeys keys = test_keys();
  AeadRecordParts parts;
  Bytes tag = hex("1e6e66f078b42acbc61093ab58208208");
  std::copy(tag.begin(), tag.end(), parts.tag.begin());

  auto pt = decrypt_record(keys, TlsDirection::ClientToServer, 0, parts, 22, 3, 3);
  REQUIRE(pt.has_value());
  CHECK(pt->empty());
}

TEST_CASE("decrypt_record server direction") {
  SessionKeys keys = test_keys();
  AeadRecordParts parts;
  Bytes nonce = hex("0000000000000007");
  std::copy(nonce.begin(), nonce.end(), parts.explicit_nonce.begin());
  parts.ciphertext = hex("a638b89f769e94af6387b3585101");
  Bytes tag = hex("6512d01cf1a3c2499569a3c6bb408874");
  std::copy(tag.begin(), tag.end(), parts.tag.begin());

  auto pt = decrypt_record(keys, TlsDirection::ServerToClient, 7, parts, 23, 3, 3);
  REQUIRE(pt.has_value());
  CHECK(*pt == to_bytes("response-bytes"));
}

TEST_CASE("any single flipped ciphertext or tag byte fails authentication") {
  SessionKeys keys = test_keys();
  Bytes plaintext = to_bytes("tamper-detection probe");
  auto parts = tlstap_test::encrypt_record(keys, TlsDirection::ClientToServer,
                                           5, plaintext, 23);

  auto baseline =
      decrypt_record(keys, TlsDirection::ClientToServer, 5, parts, 23, 3, 3);
  REQUIRE(baseline.has_value());
  REQUIRE(*baseline == plaintext);

  for (size_t i = 0; i < parts.ciphertext.size(); i++) {
    AeadRecordParts mutated = parts;
    mutated.ciphertext[i] ^= 0x01;
    CHECK_FALSE(decrypt_record(keys, TlsDirection::ClientToServer, 5, mutated,
                               23, 3, 3));
  }
  for (size_t i = 0; i < parts.tag.size(); i++) {
    AeadRecordParts mutated = parts;
    mutated.tag[i] ^= 0x01;
    CHECK_FALSE(decrypt_record(keys, TlsDirection::ClientToServer, 5, mutated,
                               23, 3, 3));
  }
}

TEST_CASE("round-trip with the test encryptor across sequence numbers") {
  SessionKeys keys = test_keys();
  std::mt19937 rng(99);
  for (int i = 0; i < 20; i++) {
    Bytes pt(rng() % 300);
    for (auto& v : pt) v = static_cast<uint8_t>(rng());
    uint64_t seq = rng();
    auto dir = (i % 2) ? TlsDirection::ClientToServer
                       : TlsDirection::ServerToClient;
    auto parts = tlstap_test::encrypt_record(keys, dir, seq, pt, 23);
    auto out = decrypt_record(keys, dir, seq, parts, 23, 3, 3);
    REQUIRE(out.has_value());
    REQUIRE(*out == pt);
  }
}
