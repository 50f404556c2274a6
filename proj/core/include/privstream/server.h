#ifndef PRIVSTREAM_SERVER_H_
#define PRIVSTREAM_SERVER_H_

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "privstream/aggregator.h"
#include "privstream/query.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Networked aggregator service. It drains share frames from the relays and
// serves a line-oriented control protocol for analysts and agents:
//
//   PUBLISH            then query-block lines, then END
//                      -> OK s=<s> p=<p> q=<q>
//   STATUS <qid>       -> key=value counter lines
//   INVERT <qid> on|off-> OK
//   TICK <now_ms>      -> advances the watermark; emits estimate CSV rows
//   REPORT <qid>       -> latest window estimate as CSV rows
//   HISTORICAL <qid> <from_ms> <to_ms> <sampling> [seed] -> CSV rows
//   SUBSCRIBE          -> long-lived; server pushes "QUERY <s> <p> <q>",
//                         query-block lines, "END" per publish/update
//
// Every response starts with "OK ..." or "ERR <message>" and terminates with
// a line "END" (SUBSCRIBE pushes use the same terminator per message).
// ---------------------------------------------------------------------------

class AggregatorServer {
 public:
  struct Config {
    Aggregator::Config aggregator;
    std::string listen_host = "127.0.0.1";
    uint16_t control_port = 0;  // 0: pick an ephemeral port
    // host:port of each relay's drain endpoint, in share-index order.
    std::vector<std::string> relay_drains;
    // Per-stratum population registered for every published query.
    std::map<uint16_t, uint64_t> population;
    // Wall-clock watermark period; 0 disables the ticker so time only
    // advances through TICK (deterministic mode for tests and simulations).
    int64_t tick_interval_ms = 0;
  };

  explicit AggregatorServer(Config config);
  ~AggregatorServer();

  AggregatorServer(const AggregatorServer&) = delete;
  AggregatorServer& operator=(const AggregatorServer&) = delete;

  void start();  // throws std::runtime_error when the port cannot be bound
  void stop();

  uint16_t control_port() const { return control_port_; }

  // Direct access for in-process composition; callers must not race the
  // server threads (lock with mutex()).
  Aggregator& aggregator() { return agg_; }
  std::mutex& mutex() { return mu_; }

 private:
  void control_loop();
  void drain_loop(std::string address);
  void tick_loop();
  void handle_connection(int fd);
  // One parsed command; response lines are written inside. Returns false to
  // close the connection (QUIT or a SUBSCRIBE takeover).
  bool handle_command(int fd, const std::string& line);
  void push_to_subscribers(const Query& query, const ExecutionParams& params);
  void send_query_update(int fd, const Query& query,
                         const ExecutionParams& params);

  Config config_;
  std::mutex mu_;  // guards agg_ and all protocol state transitions
  Aggregator agg_;

  std::atomic<bool> running_{false};
  std::atomic<int64_t> now_ms_{0};
  int listen_fd_ = -1;
  uint16_t control_port_ = 0;
  std::thread control_thread_;
  std::vector<std::thread> drain_threads_;
  std::thread tick_thread_;

  std::mutex conn_mu_;
  std::set<int> connections_;
  std::vector<std::thread> connection_threads_;

  std::mutex sub_mu_;
  std::set<int> subscribers_;
};

// ---------------------------------------------------------------------------
// Analyst side: one request/response round trip over the control protocol.
// Returns the response lines up to (excluding) END; throws std::runtime_error
// on connection failure or an ERR response.
// ---------------------------------------------------------------------------
std::vector<std::string> control_request(const std::string& host, uint16_t port,
                                         const std::vector<std::string>& lines);

// PUBLISH round trip; returns the parameters the aggregator chose.
ExecutionParams publish_remote(const std::string& host, uint16_t port,
                               const QueryBlock& block);

// Agent side: blocks reading QUERY pushes until the socket closes or
// `keep_running` returns false. The callback runs for every publish/update.
using QueryUpdateFn = std::function<void(const Query&, const ExecutionParams&)>;
void subscribe_stream(const std::string& host, uint16_t port,
                      const QueryUpdateFn& on_update,
                      const std::function<bool()>& keep_running);

}  // namespace privstream

#endif  // PRIVSTREAM_SERVER_H_
