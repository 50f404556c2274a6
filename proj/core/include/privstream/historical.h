#ifndef PRIVSTREAM_HISTORICAL_H_
#define PRIVSTREAM_HISTORICAL_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <vector>

#include "privstream/transport.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Historical store: joined (still randomized) messages persisted for batch
// analytics. Layout under the root directory:
//
//   q<query_id>/<hour>.log   length-prefixed serialized messages
//   q<query_id>/<hour>.idx   fixed-width (timestamp_ms, offset) pairs
//
// where <hour> = timestamp_ms / 3600000, both integers big-endian in the
// index. Individual record privacy is already protected by the client-side
// randomization, so the store holds plaintext-serialized randomized answers.
// ---------------------------------------------------------------------------

class HistoricalStore {
 public:
  explicit HistoricalStore(std::filesystem::path root);
  ~HistoricalStore();

  HistoricalStore(const HistoricalStore&) = delete;
  HistoricalStore& operator=(const HistoricalStore&) = delete;

  void append(const PlainMessage& msg);
  // All stored messages for the query with timestamp in [from_ms, to_ms),
  // located through the hour indexes.
  std::vector<PlainMessage> read_range(uint64_t query_id, int64_t from_ms,
                                       int64_t to_ms) const;
  // Flushes any buffered writes; called automatically on destruction.
  void flush();

  const std::filesystem::path& root() const { return root_; }

 private:
  struct OpenHour {
    std::ofstream log;
    std::ofstream idx;
  };

  OpenHour& open_hour(uint64_t query_id, int64_t hour);

  std::filesystem::path root_;
  // Appends arrive in rough time order, so keeping the current hour's files
  // open avoids per-message open/close churn.
  std::map<std::pair<uint64_t, int64_t>, std::unique_ptr<OpenHour>> open_;
};

}  // namespace privstream

#endif  // PRIVSTREAM_HISTORICAL_H_
