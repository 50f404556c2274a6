#include "privstream/transport.h"

#include <algorithm>
#include <string>

namespace privstream {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<uint8_t>(v >> shift));
  }
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0]) << 8 | p[1];
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
         static_cast<uint32_t>(p[2]) << 8 | p[3];
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | p[i];
  return v;
}

constexpr size_t kPlainHeaderSize = 8 + 2 + 8 + 2;
constexpr size_t kChecksumSize = 4;

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> serialize_plain(const PlainMessage& msg) {
  if (msg.payload_bits.empty() || msg.payload_bits.size() > 0xFFFF) {
    throw std::invalid_argument("serialize_plain: bucket count must be 1..65535");
  }
  size_t n_buckets = msg.payload_bits.size();
  size_t packed_len = (n_buckets + 7) / 8;
  std::vector<uint8_t> out;
  out.reserve(kPlainHeaderSize + packed_len + kChecksumSize);
  put_u64(out, msg.query_id);
  put_u16(out, msg.stratum_id);
  put_u64(out, static_cast<uint64_t>(msg.timestamp_ms));
  put_u16(out, static_cast<uint16_t>(n_buckets));
  size_t bits_base = out.size();
  out.resize(bits_base + packed_len, 0);
  for (size_t i = 0; i < n_buckets; ++i) {
    if (msg.payload_bits[i]) out[bits_base + i / 8] |= 0x80u >> (i % 8);
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

PlainMessage deserialize_plain(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kPlainHeaderSize + 1 + kChecksumSize) {
    throw CorruptMessage("plain message shorter than header");
  }
  size_t body_len = bytes.size() - kChecksumSize;
  uint32_t expected = get_u32(bytes.data() + body_len);
  uint32_t actual = crc32(bytes.data(), body_len);
  if (expected != actual) {
    throw CorruptMessage("plain message checksum mismatch");
  }
  PlainMessage msg;
  msg.query_id = get_u64(bytes.data());
  msg.stratum_id = get_u16(bytes.data() + 8);
  msg.timestamp_ms = static_cast<int64_t>(get_u64(bytes.data() + 10));
  uint16_t n_buckets = get_u16(bytes.data() + 18);
  size_t packed_len = (static_cast<size_t>(n_buckets) + 7) / 8;
  if (n_buckets == 0 || body_len != kPlainHeaderSize + packed_len) {
    throw CorruptMessage("plain message bucket-width mismatch");
  }
  msg.payload_bits.resize(n_buckets);
  for (size_t i = 0; i < n_buckets; ++i) {
    msg.payload_bits[i] =
        (bytes[kPlainHeaderSize + i / 8] >> (7 - i % 8)) & 1u;
  }
  return msg;
}

std::vector<ShareMessage> split_encrypt(const PlainMessage& msg, int n_proxies,
                                        Rng& rng) {
  if (n_proxies < 2 || n_proxies > 255) {
    throw std::invalid_argument("split_encrypt: n_proxies must be in [2, 255]");
  }
  std::vector<uint8_t> cipher = serialize_plain(msg);
  MessageId id;
  rng.fill_bytes(id.data(), id.size());
  std::vector<ShareMessage> shares(n_proxies);
  // Shares 2..n carry fresh keys; share 1 carries the plaintext XORed with
  // every key. All bodies are marginally uniform, so the position of the
  // ciphertext share is not observable.
  for (int i = 1; i < n_proxies; ++i) {
    auto& share = shares[i];
    share.body.resize(cipher.size());
    rng.fill_bytes(share.body.data(), share.body.size());
    for (size_t k = 0; k < cipher.size(); ++k) cipher[k] ^= share.body[k];
  }
  shares[0].body = std::move(cipher);
  for (int i = 0; i < n_proxies; ++i) {
    shares[i].message_id = id;
    shares[i].share_index = static_cast<uint8_t>(i + 1);
    shares[i].n_proxies = static_cast<uint8_t>(n_proxies);
  }
  return shares;
}

PlainMessage join_decrypt(const std::vector<ShareMessage>& shares) {
  if (shares.empty()) {
    throw MissingShares("join_decrypt: no shares", {});
  }
  uint8_t n = shares[0].n_proxies;
  if (n < 2) throw MalformedShare("join_decrypt: n_proxies below 2");
  std::vector<bool> seen(n + 1, false);
  const MessageId& id = shares[0].message_id;
  size_t body_len = shares[0].body.size();
  for (const auto& share : shares) {
    if (share.message_id != id) {
      throw MalformedShare("join_decrypt: mixed message ids");
    }
    if (share.n_proxies != n) {
      throw MalformedShare("join_decrypt: inconsistent n_proxies");
    }
    if (share.share_index < 1 || share.share_index > n) {
      throw MalformedShare("join_decrypt: share index out of range");
    }
    if (seen[share.share_index]) {
      throw MalformedShare("join_decrypt: duplicate share index");
    }
    if (share.body.size() != body_len) {
      throw MalformedShare("join_decrypt: share body length mismatch");
    }
    seen[share.share_index] = true;
  }
  std::vector<uint8_t> absent;
  for (uint8_t i = 1; i <= n; ++i) {
    if (!seen[i]) absent.push_back(i);
  }
  if (!absent.empty()) {
    std::string what = "join_decrypt: missing share indices";
    for (uint8_t i : absent) what += ' ' + std::to_string(i);
    throw MissingShares(what, std::move(absent));
  }
  std::vector<uint8_t> bytes(body_len, 0);
  for (const auto& share : shares) {
    for (size_t k = 0; k < body_len; ++k) bytes[k] ^= share.body[k];
  }
  return deserialize_plain(bytes);
}

std::vector<uint8_t> encode_share_frame(const ShareMessage& share) {
  if (share.body.empty()) {
    throw MalformedShare("encode_share_frame: empty body");
  }
  std::vector<uint8_t> out;
  out.reserve(kShareFrameHeaderSize + share.body.size());
  out.push_back(kFrameMagic0);
  out.push_back(kFrameMagic1);
  out.push_back(kFrameVersion);
  out.insert(out.end(), share.message_id.begin(), share.message_id.end());
  out.push_back(share.share_index);
  out.push_back(share.n_proxies);
  put_u32(out, static_cast<uint32_t>(share.body.size()));
  out.insert(out.end(), share.body.begin(), share.body.end());
  return out;
}

ShareMessage decode_share_frame(const std::vector<uint8_t>& frame) {
  if (frame.size() < kShareFrameHeaderSize) {
    throw MalformedShare("share frame shorter than header");
  }
  if (frame[0] != kFrameMagic0 || frame[1] != kFrameMagic1) {
    throw MalformedShare("share frame bad magic");
  }
  if (frame[2] != kFrameVersion) {
    throw MalformedShare("share frame unknown version");
  }
  ShareMessage share;
  std::copy(frame.begin() + 3, frame.begin() + 19, share.message_id.begin());
  share.share_index = frame[19];
  share.n_proxies = frame[20];
  uint32_t body_len = get_u32(frame.data() + 21);
  if (body_len == 0) throw MalformedShare("share frame empty body");
  if (frame.size() != kShareFrameHeaderSize + body_len) {
    throw MalformedShare("share frame length mismatch");
  }
  if (share.share_index < 1 || share.n_proxies < 2 ||
      share.share_index > share.n_proxies) {
    throw MalformedShare("share frame bad share index");
  }
  share.body.assign(frame.begin() + kShareFrameHeaderSize, frame.end());
  return share;
}

}  // namespace privstream
