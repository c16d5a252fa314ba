#pragma once

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "fedesn/error.hpp"

namespace fedesn::net {

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  /// Wakes any thread blocked in recv on this socket.
  void shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "host:port".
inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  require(colon != std::string::npos && colon > 0, ErrorCode::InvalidConfig,
          "address must look like host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(text.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidConfig, "bad port in '" + text + "'");
  }
  require(port >= 0 && port <= 65535, ErrorCode::InvalidConfig, "port out of range in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

inline sockaddr_in resolve_ipv4(const Endpoint& ep, ErrorCode on_error) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    fail(on_error, "cannot resolve host '" + ep.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

inline Socket listen_tcp(const Endpoint& ep) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  require(s.valid(), ErrorCode::BindError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const sockaddr_in addr = resolve_ipv4(ep, ErrorCode::BindError);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    fail(ErrorCode::BindError, "bind " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(errno));
  if (::listen(s.fd(), 64) != 0) fail(ErrorCode::BindError, std::string("listen: ") + std::strerror(errno));
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const Endpoint& ep) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  require(s.valid(), ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  const sockaddr_in addr = resolve_ipv4(ep, ErrorCode::IoError);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    fail(ErrorCode::IoError, "connect " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

/// Waits up to `timeout_ms` for a pending connection.
inline std::optional<Socket> accept_for(const Socket& listener, int timeout_ms) {
  pollfd pfd{listener.fd(), POLLIN, 0};
  if (::poll(&pfd, 1, timeout_ms) <= 0 || (pfd.revents & POLLIN) == 0) return std::nullopt;
  const int fd = ::accept(listener.fd(), nullptr, nullptr);
  if (fd < 0) return std::nullopt;
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return Socket(fd);
}

/// Writes everything or returns false (peer gone). Never raises SIGPIPE.
inline bool send_all(const Socket& s, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// Splits a byte stream into '\n'-terminated lines.
class LineReader {
 public:
  explicit LineReader(const Socket& s, std::size_t max_line = 64u << 20) : socket_(s), max_line_(max_line) {}

  /// Next line without its terminator; nullopt on EOF or error.
  std::optional<std::string> next() {
    while (true) {
      const auto pos = buffer_.find('\n', scanned_);
      if (pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = buffer_.size();
      if (buffer_.size() > max_line_) return std::nullopt;
      char chunk[65536];
      const ssize_t n = ::recv(socket_.fd(), chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  const Socket& socket_;
  std::size_t max_line_;
  std::string buffer_;
  std::size_t scanned_ = 0;
};

}  // namespace fedesn::net
