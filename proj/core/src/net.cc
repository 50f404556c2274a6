#include "privstream/net.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace privstream {

int listen_on(const std::string& host, uint16_t port, uint16_t* bound_port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    return -1;
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(fd, 64) < 0) {
    ::close(fd);
    return -1;
  }
  if (bound_port != nullptr) {
    sockaddr_in actual{};
    socklen_t len = sizeof(actual);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len) == 0) {
      *bound_port = ntohs(actual.sin_port);
    }
  }
  return fd;
}

int connect_to(const std::string& host, uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1 ||
      ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd);
    return -1;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

void close_socket(int fd) {
  if (fd >= 0) ::close(fd);
}

bool read_exact(int fd, uint8_t* buf, size_t len) {
  size_t done = 0;
  while (done < len) {
    ssize_t n = ::read(fd, buf + done, len - done);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    done += static_cast<size_t>(n);
  }
  return true;
}

bool write_all(int fd, const uint8_t* buf, size_t len) {
  size_t done = 0;
  while (done < len) {
    // MSG_NOSIGNAL: a peer that vanished mid-write yields EPIPE instead of a
    // process-killing SIGPIPE.
    ssize_t n = ::send(fd, buf + done, len - done, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    done += static_cast<size_t>(n);
  }
  return true;
}

bool write_frame(int fd, const std::vector<uint8_t>& payload) {
  uint8_t header[4] = {
      static_cast<uint8_t>(payload.size() >> 24),
      static_cast<uint8_t>(payload.size() >> 16),
      static_cast<uint8_t>(payload.size() >> 8),
      static_cast<uint8_t>(payload.size()),
  };
  return write_all(fd, header, 4) && write_all(fd, payload.data(), payload.size());
}

std::optional<std::vector<uint8_t>> read_frame(int fd, size_t max_len) {
  uint8_t header[4];
  if (!read_exact(fd, header, 4)) return std::nullopt;
  size_t len = static_cast<size_t>(header[0]) << 24 |
               static_cast<size_t>(header[1]) << 16 |
               static_cast<size_t>(header[2]) << 8 | header[3];
  if (len == 0 || len > max_len) return std::nullopt;
  std::vector<uint8_t> payload(len);
  if (!read_exact(fd, payload.data(), len)) return std::nullopt;
  return payload;
}

bool write_line(int fd, const std::string& line) {
  std::string out = line;
  out.push_back('\n');
  return write_all(fd, reinterpret_cast<const uint8_t*>(out.data()), out.size());
}

std::optional<std::string> read_line(int fd) {
  std::string line;
  char c;
  while (true) {
    ssize_t n = ::read(fd, &c, 1);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return line.empty() ? std::nullopt : std::make_optional(line);
    }
    if (c == '\n') return line;
    if (c != '\r') line.push_back(c);
  }
}

std::pair<std::string, uint16_t> parse_host_port(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw std::invalid_argument("expected host:port, got '" + address + "'");
  }
  int port = std::stoi(address.substr(colon + 1));
  if (port < 1 || port > 65535) {
    throw std::invalid_argument("port out of range in '" + address + "'");
  }
  return {address.substr(0, colon), static_cast<uint16_t>(port)};
}

}  // namespace privstream
