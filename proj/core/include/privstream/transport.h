#ifndef PRIVSTREAM_TRANSPORT_H_
#define PRIVSTREAM_TRANSPORT_H_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "privstream/rng.h"

namespace privstream {

// ---------------------------------------------------------------------------
// XOR-split encryption and the bit-exact share wire format.
//
// A plaintext message is split into n shares: n-1 fresh uniform key strings
// plus the plaintext XORed with all keys. Every proper subset of shares is
// uniform noise; the XOR of all n bodies is the serialized plaintext.
// ---------------------------------------------------------------------------

// The decrypted unit: one randomized answer vector with routing metadata.
struct PlainMessage {
  uint64_t query_id = 0;
  uint16_t stratum_id = 0;
  int64_t timestamp_ms = 0;
  // One 0/1 byte per bucket; packed MSB-first on the wire.
  std::vector<uint8_t> payload_bits;

  bool operator==(const PlainMessage&) const = default;
};

using MessageId = std::array<uint8_t, 16>;

// One XOR share. Bodies carry no type flag: ciphertext and key material are
// indistinguishable by format.
struct ShareMessage {
  MessageId message_id{};
  uint8_t share_index = 0;  // 1-based, in [1, n_proxies]
  uint8_t n_proxies = 0;
  std::vector<uint8_t> body;

  bool operator==(const ShareMessage&) const = default;
};

struct MalformedShare : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingShares : std::runtime_error {
  MissingShares(const std::string& what, std::vector<uint8_t> absent_arg)
      : std::runtime_error(what), absent(std::move(absent_arg)) {}
  std::vector<uint8_t> absent;  // missing share indices
};
struct CorruptMessage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CRC-32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const uint8_t* data, size_t len);

// Canonical PlainMessage bytes (big-endian):
//   query_id (8B) | stratum_id (2B) | timestamp_ms (8B) | n_buckets (2B) |
//   payload bits packed MSB-first, zero-padded to whole bytes |
//   crc32 over everything before it (4B)
// The trailing checksum travels inside the encryption, letting the receiver
// detect (not attribute) corruption despite XOR linearity.
std::vector<uint8_t> serialize_plain(const PlainMessage& msg);
// Throws CorruptMessage on bad length, checksum, or width mismatch.
PlainMessage deserialize_plain(const std::vector<uint8_t>& bytes);

// Splits into n shares under a fresh random 128-bit message_id. Keys come
// from the caller's (cryptographically seeded) generator.
// Throws std::invalid_argument when n_proxies < 2 or > 255.
std::vector<ShareMessage> split_encrypt(const PlainMessage& msg, int n_proxies,
                                        Rng& rng);

// Exact inverse of split_encrypt given the complete share set (any order).
// Throws MissingShares (listing absent indices), MalformedShare (mixed ids,
// duplicate indices, length mismatch), or CorruptMessage (checksum).
PlainMessage join_decrypt(const std::vector<ShareMessage>& shares);

// Share frame (big-endian):
//   magic 0x50 0x41 | version 0x01 | message_id (16B) | share_index (1B) |
//   n_proxies (1B) | body_len (4B) | body
std::vector<uint8_t> encode_share_frame(const ShareMessage& share);
// Throws MalformedShare on any framing violation.
ShareMessage decode_share_frame(const std::vector<uint8_t>& frame);

constexpr size_t kShareFrameHeaderSize = 2 + 1 + 16 + 1 + 1 + 4;
constexpr uint8_t kFrameMagic0 = 0x50;
constexpr uint8_t kFrameMagic1 = 0x41;
constexpr uint8_t kFrameVersion = 0x01;

}  // namespace privstream

#endif  // PRIVSTREAM_TRANSPORT_H_
