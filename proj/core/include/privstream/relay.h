#ifndef PRIVSTREAM_RELAY_H_
#define PRIVSTREAM_RELAY_H_

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "privstream/transport.h"

namespace privstream {

// ---------------------------------------------------------------------------
// The relay (proxy) is content-oblivious: it buffers opaque share frames in
// arrival order and forwards them to the aggregator. It never records sender
// identity; a forwarded share carries no client address.
// ---------------------------------------------------------------------------

enum class RelayAck {
  kAccepted = 0,
  kFull = 1,       // backpressure: retryable
  kMalformed = 2,  // dropped
};

// One relay topic: a bounded FIFO of shares, thread-safe. Topic names follow
// the share routing: "answer" for share index 1, "key-2".."key-n" above.
class RelayBuffer {
 public:
  RelayBuffer(std::string topic, size_t capacity);

  std::optional<ShareMessage> poll();
  size_t size() const;
  const std::string& topic() const { return topic_; }
  uint64_t forwarded() const { return forwarded_; }
  uint64_t rejected_full() const { return rejected_full_; }
  uint64_t rejected_malformed() const { return rejected_malformed_; }

 private:
  friend RelayAck relay_forward(RelayBuffer& topic, const ShareMessage& share);

  std::string topic_;
  size_t capacity_;
  mutable std::mutex mu_;
  std::deque<ShareMessage> queue_;
  std::atomic<uint64_t> forwarded_{0};
  std::atomic<uint64_t> rejected_full_{0};
  std::atomic<uint64_t> rejected_malformed_{0};
};

// Enqueues a share for delivery in arrival order. Length sanity only; the
// body is opaque to the relay.
RelayAck relay_forward(RelayBuffer& topic, const ShareMessage& share);

std::string relay_topic_name(uint8_t share_index);

// Socket-facing relay service. Two listeners: clients push length-prefixed
// share frames at the ingest port and receive a one-byte ack per frame; the
// aggregator connects to the drain port and receives frames as they are
// dequeued. Binding port 0 picks an ephemeral port (see *_port()).
class RelayServer {
 public:
  struct Config {
    std::string listen_host = "127.0.0.1";
    uint16_t ingest_port = 0;
    uint16_t drain_port = 0;
    std::string topic = "answer";
    size_t capacity = 65536;
  };

  explicit RelayServer(Config config);
  ~RelayServer();

  RelayServer(const RelayServer&) = delete;
  RelayServer& operator=(const RelayServer&) = delete;

  void start();
  void stop();
  uint16_t ingest_port() const { return ingest_port_; }
  uint16_t drain_port() const { return drain_port_; }
  const RelayBuffer& buffer() const { return buffer_; }

 private:
  void ingest_loop();
  void drain_loop();
  void serve_ingest_connection(int fd);
  void track_connection(int fd);
  void untrack_connection(int fd);

  Config config_;
  RelayBuffer buffer_;
  std::atomic<bool> running_{false};
  int ingest_fd_ = -1;
  int drain_fd_ = -1;
  uint16_t ingest_port_ = 0;
  uint16_t drain_port_ = 0;
  std::thread ingest_thread_;
  std::thread drain_thread_;
  std::vector<std::thread> connection_threads_;
  std::set<int> connection_fds_;
  std::mutex connections_mu_;
};

}  // namespace privstream

#endif  // PRIVSTREAM_RELAY_H_
