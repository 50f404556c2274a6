#ifndef PRIVSTREAM_CLIENT_H_
#define PRIVSTREAM_CLIENT_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "privstream/privacy.h"
#include "privstream/query.h"
#include "privstream/relay.h"
#include "privstream/transport.h"

namespace privstream {

// ---------------------------------------------------------------------------
// The client agent: keeps a local record store, answers each subscribed
// query once per epoch behind a sampling coin, randomizes the truthful
// bucket vector, XOR-splits it, and sends share i to proxy i.
//
// One agent is one logical task; agents share nothing and each owns its
// randomness source.
// ---------------------------------------------------------------------------

// Append-only local data; optionally a ring buffer.
class LocalStore {
 public:
  LocalStore() = default;
  explicit LocalStore(size_t capacity) : capacity_(capacity) {}

  // Timestamps must be nondecreasing per client.
  void append(Record r);
  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
  std::optional<size_t> capacity_;
};

struct ClientConfig {
  // Local-only identity: never serialized, never transmitted.
  uint64_t client_id = 0;
  uint16_t stratum_id = 0;
  ExecutionParams params;
  size_t n_proxies = 2;
  std::optional<uint64_t> rng_seed;
  int max_dispatch_retries = 3;
};

// Delivery of one share to one proxy; the harness points these at
// RelayBuffers, the service binary at sockets.
using ShareSink = std::function<RelayAck(const ShareMessage&)>;

// True with probability s. Participation itself is the sampled event: a
// false coin means the epoch produces zero bytes on the wire.
bool sampling_coin(double s, Rng& rng);

struct EpochOutcome {
  bool dispatched = false;
  MessageId message_id{};  // valid only when dispatched
};

class ClientAgent {
 public:
  // proxies.size() must equal config.n_proxies and be >= 2.
  ClientAgent(ClientConfig config, std::vector<ShareSink> proxies);

  void observe(Record r) { store_.append(std::move(r)); }
  LocalStore& store() { return store_; }

  // Registers a query. A duplicate query_id keeps the original definition
  // and adopts the new parameters (the adaptive-feedback path).
  void subscribe(const Query& query, const ExecutionParams& params);
  // Updated parameters from adaptive feedback; takes effect next epoch.
  void update_params(uint64_t query_id, const ExecutionParams& params);

  // Runs one answer epoch [epoch_end - f, epoch_end) for a subscribed query.
  // Skipped when the sampling coin fails. Otherwise: the most recent record
  // in the epoch matching the predicate is bucketized (all-zero vector if
  // none match, so predicate selectivity never biases the participation
  // denominator), randomized, split, and dispatched.
  EpochOutcome answer_epoch(uint64_t query_id, int64_t epoch_end_ms);

  const std::map<uint64_t, std::pair<Query, ExecutionParams>>& subscriptions()
      const {
    return subscriptions_;
  }
  uint64_t bytes_sent() const { return bytes_sent_; }
  uint64_t epochs_skipped() const { return epochs_skipped_; }
  uint64_t epochs_dropped() const { return epochs_dropped_; }

 private:
  ClientConfig config_;
  std::vector<ShareSink> proxies_;
  LocalStore store_;
  Rng rng_;
  std::map<uint64_t, std::pair<Query, ExecutionParams>> subscriptions_;
  uint64_t bytes_sent_ = 0;
  uint64_t epochs_skipped_ = 0;
  uint64_t epochs_dropped_ = 0;
};

}  // namespace privstream

#endif  // PRIVSTREAM_CLIENT_H_
