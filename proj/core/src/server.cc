#include "privstream/server.h"

#include <sys/socket.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "privstream/net.h"
#include "privstream/transport.h"

namespace privstream {

namespace {

int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string fmt_param(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream in(line);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

void send_lines(int fd, const std::vector<std::string>& lines) {
  for (const std::string& line : lines) write_line(fd, line);
  write_line(fd, "END");
}

void send_err(int fd, const std::string& message) {
  send_lines(fd, {"ERR " + message});
}

void append_estimate_rows(std::vector<std::string>& out,
                          const WindowEstimate& est) {
  for (const std::string& row : split_lines(window_estimate_csv_rows(est))) {
    out.push_back(row);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Server lifecycle
// ---------------------------------------------------------------------------

AggregatorServer::AggregatorServer(Config config)
    : config_(std::move(config)), agg_(config_.aggregator) {
  agg_.hub().subscribe([this](const Query& q, const ExecutionParams& p) {
    push_to_subscribers(q, p);
  });
}

AggregatorServer::~AggregatorServer() { stop(); }

void AggregatorServer::start() {
  if (running_.exchange(true)) return;
  listen_fd_ = listen_on(config_.listen_host, config_.control_port, &control_port_);
  if (listen_fd_ < 0) {
    running_ = false;
    throw std::runtime_error("aggregator: cannot bind control port on " +
                             config_.listen_host);
  }
  control_thread_ = std::thread([this] { control_loop(); });
  for (const std::string& address : config_.relay_drains) {
    drain_threads_.emplace_back([this, address] { drain_loop(address); });
  }
  if (config_.tick_interval_ms > 0) {
    tick_thread_ = std::thread([this] { tick_loop(); });
  }
}

void AggregatorServer::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    close_socket(listen_fd_);
    listen_fd_ = -1;
  }
  {
    std::lock_guard<std::mutex> lock(conn_mu_);
    for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
  }
  if (control_thread_.joinable()) control_thread_.join();
  for (std::thread& t : drain_threads_) {
    if (t.joinable()) t.join();
  }
  drain_threads_.clear();
  if (tick_thread_.joinable()) tick_thread_.join();
  for (std::thread& t : connection_threads_) {
    if (t.joinable()) t.join();
  }
  connection_threads_.clear();
}

void AggregatorServer::control_loop() {
  while (running_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_) return;
      continue;
    }
    std::lock_guard<std::mutex> lock(conn_mu_);
    connections_.insert(fd);
    connection_threads_.emplace_back([this, fd] { handle_connection(fd); });
  }
}

void AggregatorServer::drain_loop(std::string address) {
  auto [host, port] = parse_host_port(address);
  while (running_) {
    int fd = connect_to(host, port);
    if (fd < 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      continue;
    }
    {
      std::lock_guard<std::mutex> lock(conn_mu_);
      connections_.insert(fd);
    }
    while (running_) {
      std::optional<std::vector<uint8_t>> frame = read_frame(fd);
      if (!frame.has_value()) break;
      try {
        ShareMessage share = decode_share_frame(*frame);
        std::lock_guard<std::mutex> lock(mu_);
        agg_.ingest_share(share, now_ms_.load());
      } catch (const std::exception&) {
        // A frame the relay let through but we cannot decode: drop it; the
        // join stage accounts for the incomplete set.
      }
    }
    {
      std::lock_guard<std::mutex> lock(conn_mu_);
      connections_.erase(fd);
    }
    close_socket(fd);
  }
}

void AggregatorServer::tick_loop() {
  bool header_printed = false;
  while (running_) {
    int64_t now = wall_clock_ms();
    now_ms_.store(now);
    std::vector<WindowEstimate> emitted;
    {
      std::lock_guard<std::mutex> lock(mu_);
      emitted = agg_.advance_time(now);
    }
    for (const WindowEstimate& est : emitted) {
      if (!header_printed) {
        std::cout << kWindowEstimateCsvHeader << "\n";
        header_printed = true;
      }
      std::cout << window_estimate_csv_rows(est) << std::flush;
    }
    std::this_thread::sleep_for(
        std::chrono::milliseconds(config_.tick_interval_ms));
  }
}

// ---------------------------------------------------------------------------
// Control protocol
// ---------------------------------------------------------------------------

void AggregatorServer::handle_connection(int fd) {
  while (running_) {
    std::optional<std::string> line = read_line(fd);
    if (!line.has_value()) break;
    if (line->empty()) continue;
    if (!handle_command(fd, *line)) break;
  }
  {
    std::lock_guard<std::mutex> lock(conn_mu_);
    connections_.erase(fd);
  }
  {
    std::lock_guard<std::mutex> lock(sub_mu_);
    subscribers_.erase(fd);
  }
  close_socket(fd);
}

bool AggregatorServer::handle_command(int fd, const std::string& line) {
  std::vector<std::string> words = split_words(line);
  if (words.empty()) return true;
  const std::string& verb = words[0];

  if (verb == "QUIT") return false;

  if (verb == "PUBLISH") {
    std::string block;
    while (true) {
      std::optional<std::string> body_line = read_line(fd);
      if (!body_line.has_value()) return false;
      if (*body_line == "END") break;
      block += *body_line;
      block += '\n';
    }
    try {
      QueryBlock qb = parse_query_block(block);
      std::lock_guard<std::mutex> lock(mu_);
      ExecutionParams params = agg_.publish_query(qb.query, qb.budget);
      if (!config_.population.empty()) {
        agg_.register_population(qb.query.query_id, config_.population);
      }
      send_lines(fd, {"OK s=" + fmt_param(params.s) + " p=" + fmt_param(params.p) +
                      " q=" + fmt_param(params.q)});
    } catch (const BudgetUnachievable& e) {
      send_err(fd, std::string(e.what()) +
                       " (max achievable epsilon " + fmt_param(e.max_achievable) + ")");
    } catch (const std::exception& e) {
      send_err(fd, e.what());
    }
    return true;
  }

  if (verb == "STATUS") {
    if (words.size() != 2) {
      send_err(fd, "usage: STATUS <query_id>");
      return true;
    }
    uint64_t qid = std::strtoull(words[1].c_str(), nullptr, 10);
    std::lock_guard<std::mutex> lock(mu_);
    const Query* query = agg_.find_query(qid);
    if (query == nullptr) {
      send_err(fd, "unknown query_id " + words[1]);
      return true;
    }
    ExecutionParams params = agg_.current_params(qid);
    const JoinCounters& jc = agg_.join_counters();
    std::vector<std::string> lines = {
        "OK",
        "query_id=" + std::to_string(qid),
        "s=" + fmt_param(params.s),
        "p=" + fmt_param(params.p),
        "q=" + fmt_param(params.q),
        "inverted=" + std::string(query->inverted ? "1" : "0"),
        "windows_emitted=" + std::to_string(agg_.windows_emitted(qid)),
        "joined=" + std::to_string(jc.joined),
        "expired=" + std::to_string(jc.expired),
        "corrupt=" + std::to_string(jc.corrupt),
        "duplicate=" + std::to_string(jc.duplicate),
        "late=" + std::to_string(agg_.late()),
        "quarantined=" + std::to_string(agg_.quarantined()),
        "unknown_query=" + std::to_string(agg_.unknown_query()),
        "budget_conflict=" + std::string(agg_.last_feedback_conflict(qid) ? "1" : "0"),
    };
    send_lines(fd, lines);
    return true;
  }

  if (verb == "INVERT") {
    if (words.size() != 3 || (words[2] != "on" && words[2] != "off")) {
      send_err(fd, "usage: INVERT <query_id> on|off");
      return true;
    }
    uint64_t qid = std::strtoull(words[1].c_str(), nullptr, 10);
    std::lock_guard<std::mutex> lock(mu_);
    try {
      agg_.set_inverted(qid, words[2] == "on");
      send_lines(fd, {"OK"});
    } catch (const std::exception& e) {
      send_err(fd, e.what());
    }
    return true;
  }

  if (verb == "TICK") {
    if (words.size() != 2) {
      send_err(fd, "usage: TICK <now_ms>");
      return true;
    }
    int64_t now = std::strtoll(words[1].c_str(), nullptr, 10);
    now_ms_.store(now);
    std::vector<std::string> lines = {"OK", kWindowEstimateCsvHeader};
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (const WindowEstimate& est : agg_.advance_time(now)) {
        append_estimate_rows(lines, est);
      }
    }
    send_lines(fd, lines);
    return true;
  }

  if (verb == "REPORT") {
    if (words.size() != 2) {
      send_err(fd, "usage: REPORT <query_id>");
      return true;
    }
    uint64_t qid = std::strtoull(words[1].c_str(), nullptr, 10);
    std::lock_guard<std::mutex> lock(mu_);
    if (agg_.find_query(qid) == nullptr) {
      send_err(fd, "unknown query_id " + words[1]);
      return true;
    }
    std::vector<std::string> lines = {"OK", kWindowEstimateCsvHeader};
    if (auto est = agg_.latest_estimate(qid)) {
      append_estimate_rows(lines, *est);
    }
    send_lines(fd, lines);
    return true;
  }

  if (verb == "HISTORICAL") {
    if (words.size() < 5 || words.size() > 6) {
      send_err(fd, "usage: HISTORICAL <query_id> <from_ms> <to_ms> <sampling> [seed]");
      return true;
    }
    uint64_t qid = std::strtoull(words[1].c_str(), nullptr, 10);
    int64_t from = std::strtoll(words[2].c_str(), nullptr, 10);
    int64_t to = std::strtoll(words[3].c_str(), nullptr, 10);
    double sampling = std::strtod(words[4].c_str(), nullptr);
    uint64_t seed = words.size() == 6
                        ? std::strtoull(words[5].c_str(), nullptr, 10)
                        : 0x9e3779b97f4a7c15ull;
    std::lock_guard<std::mutex> lock(mu_);
    try {
      WindowEstimate est = agg_.historical_query(qid, from, to, sampling, seed);
      std::vector<std::string> lines = {"OK", kWindowEstimateCsvHeader};
      append_estimate_rows(lines, est);
      send_lines(fd, lines);
    } catch (const std::exception& e) {
      send_err(fd, e.what());
    }
    return true;
  }

  if (verb == "SUBSCRIBE") {
    // Snapshot and registration under one lock so a concurrent publish is
    // either in the snapshot or pushed, never lost (lock order: mu_, sub_mu_).
    std::lock_guard<std::mutex> lock(mu_);
    std::lock_guard<std::mutex> sub_lock(sub_mu_);
    subscribers_.insert(fd);
    for (uint64_t qid : agg_.query_ids()) {
      send_query_update(fd, *agg_.find_query(qid), agg_.current_params(qid));
    }
    return true;
  }

  send_err(fd, "unknown command " + verb);
  return true;
}

void AggregatorServer::send_query_update(int fd, const Query& query,
                                         const ExecutionParams& params) {
  Budget placeholder;  // budgets stay on the aggregator; agents need params
  QueryBlock qb{query, placeholder};
  write_line(fd, "QUERY " + fmt_param(params.s) + " " + fmt_param(params.p) +
                     " " + fmt_param(params.q));
  for (const std::string& line : split_lines(format_query_block(qb))) {
    write_line(fd, line);
  }
  write_line(fd, "END");
}

void AggregatorServer::push_to_subscribers(const Query& query,
                                           const ExecutionParams& params) {
  std::lock_guard<std::mutex> lock(sub_mu_);
  std::vector<int> dead;
  for (int fd : subscribers_) {
    // write_line failure marks the subscriber dead; its connection thread
    // notices the shutdown and cleans up.
    if (!write_line(fd, "QUERY " + fmt_param(params.s) + " " +
                            fmt_param(params.p) + " " + fmt_param(params.q))) {
      dead.push_back(fd);
      continue;
    }
    Budget placeholder;
    QueryBlock qb{query, placeholder};
    bool ok = true;
    for (const std::string& line : split_lines(format_query_block(qb))) {
      if (!write_line(fd, line)) {
        ok = false;
        break;
      }
    }
    if (ok) ok = write_line(fd, "END");
    if (!ok) dead.push_back(fd);
  }
  for (int fd : dead) {
    subscribers_.erase(fd);
    ::shutdown(fd, SHUT_RDWR);
  }
}

// ---------------------------------------------------------------------------
// Analyst/agent helpers
// ---------------------------------------------------------------------------

std::vector<std::string> control_request(const std::string& host, uint16_t port,
                                         const std::vector<std::string>& lines) {
  int fd = connect_to(host, port);
  if (fd < 0) {
    throw std::runtime_error("control_request: cannot connect to " + host + ":" +
                             std::to_string(port));
  }
  for (const std::string& line : lines) {
    if (!write_line(fd, line)) {
      close_socket(fd);
      throw std::runtime_error("control_request: write failed");
    }
  }
  std::vector<std::string> response;
  while (true) {
    std::optional<std::string> line = read_line(fd);
    if (!line.has_value()) {
      close_socket(fd);
      throw std::runtime_error("control_request: connection closed before END");
    }
    if (*line == "END") break;
    response.push_back(*line);
  }
  close_socket(fd);
  if (!response.empty() && response[0].rfind("ERR", 0) == 0) {
    throw std::runtime_error(response[0]);
  }
  return response;
}

ExecutionParams publish_remote(const std::string& host, uint16_t port,
                               const QueryBlock& block) {
  std::vector<std::string> request = {"PUBLISH"};
  for (const std::string& line : split_lines(format_query_block(block))) {
    request.push_back(line);
  }
  request.push_back("END");
  std::vector<std::string> response = control_request(host, port, request);
  if (response.empty()) {
    throw std::runtime_error("publish_remote: empty response");
  }
  ExecutionParams params;
  if (std::sscanf(response[0].c_str(), "OK s=%lf p=%lf q=%lf", &params.s,
                  &params.p, &params.q) != 3) {
    throw std::runtime_error("publish_remote: malformed response '" +
                             response[0] + "'");
  }
  return params;
}

void subscribe_stream(const std::string& host, uint16_t port,
                      const QueryUpdateFn& on_update,
                      const std::function<bool()>& keep_running) {
  int fd = connect_to(host, port);
  if (fd < 0) {
    throw std::runtime_error("subscribe_stream: cannot connect to " + host +
                             ":" + std::to_string(port));
  }
  if (!write_line(fd, "SUBSCRIBE")) {
    close_socket(fd);
    throw std::runtime_error("subscribe_stream: write failed");
  }
  while (keep_running()) {
    std::optional<std::string> header = read_line(fd);
    if (!header.has_value()) break;
    if (header->rfind("QUERY ", 0) != 0) continue;
    ExecutionParams params;
    if (std::sscanf(header->c_str(), "QUERY %lf %lf %lf", &params.s, &params.p,
                    &params.q) != 3) {
      continue;
    }
    std::string block;
    bool eof = false;
    while (true) {
      std::optional<std::string> line = read_line(fd);
      if (!line.has_value()) {
        eof = true;
        break;
      }
      if (*line == "END") break;
      block += *line;
      block += '\n';
    }
    if (eof) break;
    try {
      QueryBlock qb = parse_query_block(block);
      on_update(qb.query, params);
    } catch (const std::exception& e) {
      std::cerr << "subscribe_stream: dropped malformed query push: " << e.what()
                << "\n";
    }
  }
  close_socket(fd);
}

}  // namespace privstream
