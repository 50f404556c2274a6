#ifndef PRIVSTREAM_NET_H_
#define PRIVSTREAM_NET_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace privstream {

// Minimal blocking TCP helpers shared by the relay, aggregator, and CLI.
// Frames on the wire are length-prefixed: u32 big-endian byte count, then
// the payload. Lines (control protocol) are newline-terminated text.

// Returns a listening socket fd, or -1 on failure. Fills *bound_port with
// the actual port (useful when asking for port 0).
int listen_on(const std::string& host, uint16_t port, uint16_t* bound_port);
// Returns a connected socket fd, or -1 on failure.
int connect_to(const std::string& host, uint16_t port);
void close_socket(int fd);

// Blocking exact-count IO; false on EOF/error.
bool read_exact(int fd, uint8_t* buf, size_t len);
bool write_all(int fd, const uint8_t* buf, size_t len);

bool write_frame(int fd, const std::vector<uint8_t>& payload);
// nullopt on EOF/error or frames above max_len.
std::optional<std::vector<uint8_t>> read_frame(int fd, size_t max_len = 1 << 20);

bool write_line(int fd, const std::string& line);
// Reads up to a newline (stripped); nullopt on EOF/error.
std::optional<std::string> read_line(int fd);

// "host:port" → pair; throws std::invalid_argument on bad syntax.
std::pair<std::string, uint16_t> parse_host_port(const std::string& address);

}  // namespace privstream

#endif  // PRIVSTREAM_NET_H_
