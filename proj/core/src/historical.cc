#include "privstream/historical.h"

#include <algorithm>
#include <stdexcept>

namespace privstream {

namespace {

constexpr int64_t kMsPerHour = 3600 * 1000;

int64_t hour_of(int64_t timestamp_ms) {
  // Timestamps are non-negative offsets from the deployment epoch.
  if (timestamp_ms < 0) {
    throw std::invalid_argument("historical: negative timestamp");
  }
  return timestamp_ms / kMsPerHour;
}

void put_u32_be(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
               static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

void put_u64_be(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (56 - 8 * i));
  out.write(b, 8);
}

uint32_t get_u32_be(const unsigned char* b) {
  return (uint32_t{b[0]} << 24) | (uint32_t{b[1]} << 16) |
         (uint32_t{b[2]} << 8) | uint32_t{b[3]};
}

uint64_t get_u64_be(const unsigned char* b) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

HistoricalStore::HistoricalStore(std::filesystem::path root)
    : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

HistoricalStore::~HistoricalStore() { flush(); }

HistoricalStore::OpenHour& HistoricalStore::open_hour(uint64_t query_id,
                                                      int64_t hour) {
  auto key = std::make_pair(query_id, hour);
  auto it = open_.find(key);
  if (it != open_.end()) return *it->second;

  // Appends track the stream clock, so a small set of open hours suffices;
  // older handles are flushed and closed.
  if (open_.size() >= 8) {
    flush();
    open_.clear();
  }

  std::filesystem::path dir = root_ / ("q" + std::to_string(query_id));
  std::filesystem::create_directories(dir);
  auto oh = std::make_unique<OpenHour>();
  std::string stem = std::to_string(hour);
  oh->log.open(dir / (stem + ".log"),
               std::ios::binary | std::ios::app | std::ios::out);
  oh->idx.open(dir / (stem + ".idx"),
               std::ios::binary | std::ios::app | std::ios::out);
  if (!oh->log || !oh->idx) {
    throw std::runtime_error("historical: cannot open store files under " +
                             dir.string());
  }
  return *open_.emplace(key, std::move(oh)).first->second;
}

void HistoricalStore::append(const PlainMessage& msg) {
  OpenHour& oh = open_hour(msg.query_id, hour_of(msg.timestamp_ms));
  std::vector<uint8_t> body = serialize_plain(msg);

  // The index records (timestamp, offset of the length prefix).
  uint64_t offset = static_cast<uint64_t>(oh.log.tellp());
  put_u32_be(oh.log, static_cast<uint32_t>(body.size()));
  oh.log.write(reinterpret_cast<const char*>(body.data()),
               static_cast<std::streamsize>(body.size()));
  put_u64_be(oh.idx, static_cast<uint64_t>(msg.timestamp_ms));
  put_u64_be(oh.idx, offset);
  if (!oh.log || !oh.idx) {
    throw std::runtime_error("historical: write failed");
  }
}

void HistoricalStore::flush() {
  for (auto& [key, oh] : open_) {
    oh->log.flush();
    oh->idx.flush();
  }
}

std::vector<PlainMessage> HistoricalStore::read_range(uint64_t query_id,
                                                      int64_t from_ms,
                                                      int64_t to_ms) const {
  std::vector<PlainMessage> out;
  if (from_ms >= to_ms) return out;
  std::filesystem::path dir = root_ / ("q" + std::to_string(query_id));
  if (!std::filesystem::exists(dir)) return out;

  int64_t first_hour = hour_of(std::max<int64_t>(from_ms, 0));
  int64_t last_hour = hour_of(std::max<int64_t>(to_ms - 1, 0));
  for (int64_t hour = first_hour; hour <= last_hour; ++hour) {
    std::string stem = std::to_string(hour);
    std::ifstream idx(dir / (stem + ".idx"), std::ios::binary);
    if (!idx) continue;  // no data stored for this hour

    // Collect matching offsets from the fixed-width index.
    std::vector<uint64_t> offsets;
    unsigned char entry[16];
    while (idx.read(reinterpret_cast<char*>(entry), sizeof(entry))) {
      int64_t ts = static_cast<int64_t>(get_u64_be(entry));
      if (ts >= from_ms && ts < to_ms) offsets.push_back(get_u64_be(entry + 8));
    }
    if (offsets.empty()) continue;

    std::ifstream log(dir / (stem + ".log"), std::ios::binary);
    if (!log) {
      throw std::runtime_error("historical: index without log for hour " + stem);
    }
    for (uint64_t offset : offsets) {
      log.seekg(static_cast<std::streamoff>(offset));
      unsigned char len_buf[4];
      if (!log.read(reinterpret_cast<char*>(len_buf), 4)) {
        throw std::runtime_error("historical: truncated log for hour " + stem);
      }
      uint32_t len = get_u32_be(len_buf);
      std::vector<uint8_t> body(len);
      if (!log.read(reinterpret_cast<char*>(body.data()), len)) {
        throw std::runtime_error("historical: truncated record for hour " + stem);
      }
      out.push_back(deserialize_plain(body));  // may throw CorruptMessage
    }
  }
  return out;
}

}  // namespace privstream
