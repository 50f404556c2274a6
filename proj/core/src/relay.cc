#include "privstream/relay.h"

#include <sys/socket.h>

#include <chrono>

#include "privstream/net.h"

namespace privstream {

RelayBuffer::RelayBuffer(std::string topic, size_t capacity)
    : topic_(std::move(topic)), capacity_(capacity) {}

RelayAck relay_forward(RelayBuffer& topic, const ShareMessage& share) {
  // Length sanity only; everything else about the body is opaque.
  if (share.body.empty() || share.share_index < 1 || share.n_proxies < 2 ||
      share.share_index > share.n_proxies) {
    topic.rejected_malformed_++;
    return RelayAck::kMalformed;
  }
  std::lock_guard<std::mutex> lock(topic.mu_);
  if (topic.queue_.size() >= topic.capacity_) {
    topic.rejected_full_++;
    return RelayAck::kFull;
  }
  topic.queue_.push_back(share);
  topic.forwarded_++;
  return RelayAck::kAccepted;
}

std::optional<ShareMessage> RelayBuffer::poll() {
  std::lock_guard<std::mutex> lock(mu_);
  if (queue_.empty()) return std::nullopt;
  ShareMessage share = std::move(queue_.front());
  queue_.pop_front();
  return share;
}

size_t RelayBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return queue_.size();
}

std::string relay_topic_name(uint8_t share_index) {
  return share_index == 1 ? "answer" : "key-" + std::to_string(share_index);
}

// --------------------------------------------------------------------------
// Socket service
// --------------------------------------------------------------------------

RelayServer::RelayServer(Config config)
    : config_(std::move(config)), buffer_(config_.topic, config_.capacity) {}

RelayServer::~RelayServer() { stop(); }

void RelayServer::start() {
  ingest_fd_ = listen_on(config_.listen_host, config_.ingest_port, &ingest_port_);
  drain_fd_ = listen_on(config_.listen_host, config_.drain_port, &drain_port_);
  if (ingest_fd_ < 0 || drain_fd_ < 0) {
    throw std::runtime_error("relay: failed to bind " + config_.listen_host);
  }
  running_ = true;
  ingest_thread_ = std::thread([this] { ingest_loop(); });
  drain_thread_ = std::thread([this] { drain_loop(); });
}

void RelayServer::stop() {
  if (!running_.exchange(false)) return;
  // shutdown() unblocks threads parked in accept(); close() alone does not.
  // Shutting down accepted connections unblocks their reader/writer threads.
  if (ingest_fd_ >= 0) ::shutdown(ingest_fd_, SHUT_RDWR);
  if (drain_fd_ >= 0) ::shutdown(drain_fd_, SHUT_RDWR);
  close_socket(ingest_fd_);
  close_socket(drain_fd_);
  ingest_fd_ = drain_fd_ = -1;
  {
    std::lock_guard<std::mutex> lock(connections_mu_);
    for (int fd : connection_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (ingest_thread_.joinable()) ingest_thread_.join();
  if (drain_thread_.joinable()) drain_thread_.join();
  // Joined outside the lock: exiting connection threads untrack themselves.
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(connections_mu_);
    workers.swap(connection_threads_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

void RelayServer::track_connection(int fd) {
  std::lock_guard<std::mutex> lock(connections_mu_);
  connection_fds_.insert(fd);
}

void RelayServer::untrack_connection(int fd) {
  std::lock_guard<std::mutex> lock(connections_mu_);
  connection_fds_.erase(fd);
}

void RelayServer::ingest_loop() {
  while (running_) {
    int fd = ::accept(ingest_fd_, nullptr, nullptr);
    if (fd < 0) break;
    std::lock_guard<std::mutex> lock(connections_mu_);
    connection_fds_.insert(fd);
    connection_threads_.emplace_back([this, fd] { serve_ingest_connection(fd); });
  }
}

void RelayServer::serve_ingest_connection(int fd) {
  while (running_) {
    auto frame = read_frame(fd);
    if (!frame) break;
    uint8_t ack;
    try {
      ShareMessage share = decode_share_frame(*frame);
      ack = static_cast<uint8_t>(relay_forward(buffer_, share));
    } catch (const MalformedShare&) {
      ack = static_cast<uint8_t>(RelayAck::kMalformed);
    }
    if (!write_all(fd, &ack, 1)) break;
  }
  untrack_connection(fd);
  close_socket(fd);
}

void RelayServer::drain_loop() {
  while (running_) {
    int fd = ::accept(drain_fd_, nullptr, nullptr);
    if (fd < 0) break;
    track_connection(fd);
    // One aggregator at a time; frames stream out in arrival order.
    while (running_) {
      auto share = buffer_.poll();
      if (!share) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      if (!write_frame(fd, encode_share_frame(*share))) break;
    }
    untrack_connection(fd);
    close_socket(fd);
  }
}

}  // namespace privstream
