#pragma once

// Reference P_SHA384 chain used as the independent oracle for the PRF tests.
// Everything here is implemented from the FIPS 180-4 / RFC 2104 / RFC 5246
// definitions without touching the library's crypto path (which goes through
// OpenSSL). Test-only code; favors clarity over speed.

#include <array>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace tlstap_test {

using RefBytes = std::vector<uint8_t>;

class RefSha384 {
 public:
  static constexpr size_t kDigestLen = 48;
  static constexpr size_t kBlockLen = 128;

  RefSha384() { reset(); }

  void reset() {
    state_ = {0xcbbb9d5dc1059ed8ULL, 0x629a292a367cd507ULL,
              0x9159015a3070dd17ULL, 0x152fecd8f70e5939ULL,
              0x67332667ffc00b31ULL, 0x8eb44a8768581511ULL,
              0xdb0c2e0d64f98fa7ULL, 0x47b5481dbefa4fa4ULL};
    buffer_len_ = 0;
    total_len_ = 0;
  }

  void update(const uint8_t* data, size_t len) {
    total_len_ += len;
    while (len > 0) {
      size_t take = std::min(len, kBlockLen - buffer_len_);
      std::memcpy(buffer_.data() + buffer_len_, data, take);
      buffer_len_ += take;
      data += take;
      len -= take;
      if (buffer_len_ == kBlockLen) {
        compress(buffer_.data());
        buffer_len_ = 0;
      }
    }
  }

  RefBytes finish() {
    uint64_t bit_len = total_len_ * 8;
    uint8_t pad = 0x80;
    update(&pad, 1);
    uint8_t zero = 0;
    while (buffer_len_ != 112) update(&zero, 1);
    uint8_t len_block[16] = {0};  // 128-bit length; high 64 bits stay zero
    for (int i = 0; i < 8; i++)
      len_block[15 - i] = static_cast<uint8_t>(bit_len >> (8 * i));
    update(len_block, 16);
    RefBytes out(kDigestLen);
    for (int i = 0; i < 6; i++)
      for (int j = 0; j < 8; j++)
        out[i * 8 + j] = static_cast<uint8_t>(state_[i] >> (56 - 8 * j));
    return out;
  }

 private:
  static uint64_t rotr(uint64_t x, int n) { return (x >> n) | (x << (64 - n)); }

  void compress(const uint8_t* block) {
    static constexpr std::array<uint64_t, 80> k = {
        0x428a2f98d728ae22ULL, 0x7137449123ef65cdULL, 0xb5c0fbcfec4d3b2fULL,
        0xe9b5dba58189dbbcULL, 0x3956c25bf348b538ULL, 0x59f111f1b605d019ULL,
        0x923f82a4af194f9bULL, 0xab1c5ed5da6d8118ULL, 0xd807aa98a3030242ULL,
        0x12835b0145706fbeULL, 0x243185be4ee4b28cULL, 0x550c7dc3d5ffb4e2ULL,
        0x72be5d74f27b896fULL, 0x80deb1fe3b1696b1ULL, 0x9bdc06a725c71235ULL,
        0xc19bf174cf692694ULL, 0xe49b69c19ef14ad2ULL, 0xefbe4786384f25e3ULL,
        0x0fc19dc68b8cd5b5ULL, 0x240ca1cc77ac9c65ULL, 0x2de92c6f592b0275ULL,
        0x4a7484aa6ea6e483ULL, 0x5cb0a9dcbd41fbd4ULL, 0x76f988da831153b5ULL,
        0x983e5152ee66dfabULL, 0xa831c66d2db43210ULL, 0xb00327c898fb213fULL,
        0xbf597fc7beef0ee4ULL, 0xc6e00bf33da88fc2ULL, 0xd5a79147930aa725ULL,
        0x06ca6351e003826fULL, 0x142929670a0e6e70ULL, 0x27b70a8546d22ffcULL,
        0x2e1b21385c26c926ULL, 0x4d2c6dfc5ac42aedULL, 0x53380d139d95b3dfULL,
        0x650a73548baf63deULL, 0x766a0abb3c77b2a8ULL, 0x81c2c92e47edaee6ULL,
        0x92722c851482353bULL, 0xa2bfe8a14cf10364ULL, 0xa81a664bbc423001ULL,
        0xc24b8b70d0f89791ULL, 0xc76c51a30654be30ULL, 0xd192e819d6ef5218ULL,
        0xd69906245565a910ULL, 0xf40e35855771202aULL, 0x106aa07032bbd1b8ULL,
        0x19a4c116b8d2d0c8ULL, 0x1e376c085141ab53ULL, 0x2748774cdf8eeb99ULL,
        0x34b0bcb5e19b48a8ULL, 0x391c0cb3c5c95a63ULL, 0x4ed8aa4ae3418acbULL,
        0x5b9cca4f7763e373ULL, 0x682e6ff3d6b2b8a3ULL, 0x748f82ee5defb2fcULL,
        0x78a5636f43172f60ULL, 0x84c87814a1f0ab72ULL, 0x8cc702081a6439ecULL,
        0x90befffa23631e28ULL, 0xa4506cebde82bde9ULL, 0xbef9a3f7b2c67915ULL,
        0xc67178f2e372532bULL, 0xca273eceea26619cULL, 0xd186b8c721c0c207ULL,
        0xeada7dd6cde0eb1eULL, 0xf57d4f7fee6ed178ULL, 0x06f067aa72176fbaULL,
        0x0a637dc5a2c898a6ULL, 0x113f9804bef90daeULL, 0x1b710b35131c471bULL,
        0x28db77f523047d84ULL, 0x32caab7b40c72493ULL, 0x3c9ebe0a15c9bebcULL,
        0x431d67c49c100d4cULL, 0x4cc5d4becb3e42b6ULL, 0x597f299cfc657e2aULL,
        0x5fcb6fab3ad6faecULL, 0x6c44198c4a475817ULL};

    uint64_t w[80];
    for (int i = 0; i < 16; i++) {
      w[i] = 0;
      for (int j = 0; j < 8; j++)
        w[i] = (w[i] << 8) | block[i * 8 + j];
    }
    for (int i = 16; i < 80; i++) {
      uint64_t s0 = rotr(w[i - 15], 1) ^ rotr(w[i - 15], 8) ^ (w[i - 15] >> 7);
      uint64_t s1 = rotr(w[i - 2], 19) ^ rotr(w[i - 2], 61) ^ (w[i - 2] >> 6);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }

    uint64_t a = state_[0], b = state_[1], c = state_[2], d = state_[3];
    uint64_t e = state_[4], f = state_[5], g = state_[6], h = state_[7];
    for (int i = 0; i < 80; i++) {
      uint64_t s1 = rotr(e, 14) ^ rotr(e, 18) ^ rotr(e, 41);
      uint64_t ch = (e & f) ^ (~e & g);
      uint64_t t1 = h + s1 + ch + k[i] + w[i];
      uint64_t s0 = rotr(a, 28) ^ rotr(a, 34) ^ rotr(a, 39);
      uint64_t maj = (a & b) ^ (a & c) ^ (b & c);
      uint64_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    state_[0] += a;
    state_[1] += b;
    state_[2] += c;
    state_[3] += d;
    state_[4] += e;
    state_[5] += f;
    state_[6] += g;
    state_[7] += h;
  }

  std::array<uint64_t, 8> state_;
  std::array<uint8_t, kBlockLen> buffer_;
  size_t buffer_len_ = 0;
  uint64_t total_len_ = 0;
};

inline RefBytes ref_sha384(const RefBytes& data) {
  RefSha384 h;
  h.update(data.data(), data.size());
  return h.finish();
}

inline RefBytes ref_hmac_sha384(const RefBytes& key, const RefBytes& data) {
  RefBytes k = key;
  if (k.size() > RefSha384::kBlockLen) k = ref_sha384(k);
  k.resize(RefSha384::kBlockLen, 0);

  RefBytes inner(RefSha384::kBlockLen), outer(RefSha384::kBlockLen);
  for (size_t i = 0; i < RefSha384::kBlockLen; i++) {
    inner[i] = k[i] ^ 0x36;
    outer[i] = k[i] ^ 0x5c;
  }
  RefSha384 h;
  h.update(inner.data(), inner.size());
  h.update(data.data(), data.size());
  RefBytes inner_digest = h.finish();
  h.reset();
  h.update(outer.data(), outer.size());
  h.update(inner_digest.data(), inner_digest.size());
  return h.finish();
}

// P_SHA384(secret, label || seed) truncated to out_len, per RFC 5246.
inline RefBytes ref_tls_prf(const RefBytes& secret, std::string_view label,
                            const RefBytes& seed, size_t out_len) {
  RefBytes label_seed(label.begin(), label.end());
  label_seed.insert(label_seed.end(), seed.begin(), seed.end());

  RefBytes out;
  RefBytes a = ref_hmac_sha384(secret, label_seed);
  while (out.size() < out_len) {
    RefBytes block = a;
    block.insert(block.end(), label_seed.begin(), label_seed.end());
    RefBytes chunk = ref_hmac_sha384(secret, block);
    out.insert(out.end(), chunk.begin(), chunk.end());
    a = ref_hmac_sha384(secret, a);
  }
  out.resize(out_len);
  return out;
}

}  // namespace tlstap_test
