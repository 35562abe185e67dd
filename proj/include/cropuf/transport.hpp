#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <string>
#include <vector>

#include "cropuf/agents.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/wire.hpp"

namespace cropuf {

enum class RecvStatus { Frame, Timeout, Closed };

/// Blocking TCP byte stream carrying length-prefixed frames.
class TcpConnection {
public:
    explicit TcpConnection(int fd) : fd_(fd) {}
    TcpConnection(const TcpConnection&) = delete;
    TcpConnection& operator=(const TcpConnection&) = delete;
    TcpConnection(TcpConnection&& other) noexcept : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
        other.fd_ = -1;
    }
    ~TcpConnection() { close(); }

    static TcpConnection connect_to(const std::string& host, int port) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            throw IoError("unusable host address: " + host);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            int err = errno;
            ::close(fd);
            throw IoError("connect " + host + ":" + std::to_string(port) + ": " + std::strerror(err));
        }
        return TcpConnection(fd);
    }

    void send_frame(const std::vector<std::uint8_t>& frame) {
        std::size_t sent = 0;
        while (sent < frame.size()) {
            ssize_t k = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (k <= 0) throw IoError("send: " + std::string(std::strerror(errno)));
            sent += static_cast<std::size_t>(k);
        }
    }

    /// Pulls bytes until one complete frame is available. `timeout_ms` < 0
    /// blocks indefinitely.
    RecvStatus recv_frame(std::vector<std::uint8_t>& out, std::size_t max_frame = kDefaultMaxFrame,
                          int timeout_ms = -1) {
        for (;;) {
            if (auto frame = extract_frame(buffer_, max_frame)) {
                out = std::move(*frame);
                return RecvStatus::Frame;
            }
            timeval tv{};
            if (timeout_ms >= 0) {
                tv.tv_sec = timeout_ms / 1000;
                tv.tv_usec = (timeout_ms % 1000) * 1000;
            }
            ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
            std::uint8_t chunk[16384];
            ssize_t k = ::recv(fd_, chunk, sizeof(chunk), 0);
            if (k == 0) {
                if (!buffer_.empty()) throw FrameError("connection closed mid-frame");
                return RecvStatus::Closed;
            }
            if (k < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK) return RecvStatus::Timeout;
                if (errno == EINTR) continue;
                throw IoError("recv: " + std::string(std::strerror(errno)));
            }
            buffer_.insert(buffer_.end(), chunk, chunk + k);
        }
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    std::vector<std::uint8_t> buffer_;
};

class TcpListener {
public:
    explicit TcpListener(int port, const std::string& host = "127.0.0.1") {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            throw IoError("unusable bind address: " + host);
        }
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 16) != 0) {
            int err = errno;
            ::close(fd_);
            throw IoError("bind/listen :" + std::to_string(port) + ": " + std::strerror(err));
        }
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
    }

    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    int port() const { return port_; }

    TcpConnection accept_one() {
        int cfd = ::accept(fd_, nullptr, nullptr);
        if (cfd < 0) throw IoError("accept: " + std::string(std::strerror(errno)));
        return TcpConnection(cfd);
    }

private:
    int fd_ = -1;
    int port_ = 0;
};

/// Serves one TTP connection until the peer closes or `stop` is raised.
/// Short receive timeouts let frames queued by other threads (provisioning)
/// drain promptly.
inline void serve_ttp_connection(TtpNode& ttp, TcpConnection conn, std::atomic<bool>* stop = nullptr) {
    SessionId sid = ttp.open_session();
    try {
        for (;;) {
            if (stop && stop->load()) break;
            for (const auto& f : ttp.take_outgoing(sid)) conn.send_frame(f);
            std::vector<std::uint8_t> frame;
            RecvStatus st = conn.recv_frame(frame, ttp.config().max_frame, 50);
            if (st == RecvStatus::Closed) break;
            if (st == RecvStatus::Frame) ttp.on_frame(sid, frame);
        }
        for (const auto& f : ttp.take_outgoing(sid)) conn.send_frame(f);
    } catch (const Error&) {
        // connection-level failure aborts the session below
    }
    ttp.close_session(sid);
}

/// Device client: sends HELLO, then answers the TTP until the stream closes
/// or `stop` is raised.
inline void run_device_client(DeviceAgent& agent, const std::string& host, int port,
                              std::atomic<bool>* stop = nullptr) {
    TcpConnection conn = TcpConnection::connect_to(host, port);
    conn.send_frame(agent.hello_frame());
    for (;;) {
        if (stop && stop->load()) break;
        std::vector<std::uint8_t> frame;
        RecvStatus st = conn.recv_frame(frame, agent.config().max_frame, 100);
        if (st == RecvStatus::Closed) break;
        if (st == RecvStatus::Frame) {
            agent.on_frame(frame);
            for (const auto& f : agent.take_outgoing()) conn.send_frame(f);
        }
    }
}

}  // namespace cropuf
