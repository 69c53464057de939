/*
 * Copyright 2026 The ddpsa Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/finite_field.hpp"
#include "ddpsa/messages.hpp"
#include "ddpsa/secret_sharing.hpp"
#include "ddpsa/wire.hpp"

namespace ddpsa {

// ---------------------------------------------------------------------------
// Frame format
//
//   length   u32 big-endian, payload bytes (header excluded)
//   msg_type u8  1=ModelBroadcast 2=ShareUpload 3=PlainGradientUpload
//                4=PartialSum 5=RoundAck
//   payload  type-specific, all integers big-endian, doubles as binary64
//            big-endian, field elements as 16-byte big-endian
// ---------------------------------------------------------------------------

enum class MessageType : std::uint8_t {
  kModelBroadcast = 1,
  kShareUpload = 2,
  kPlainGradientUpload = 3,
  kPartialSum = 4,
  kRoundAck = 5,
};

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::uint64_t kMaxPayload = 0xFFFFFFFFull;
// Readers refuse anything larger than this before allocating.
inline constexpr std::uint32_t kMaxAcceptedPayload = 64u << 20;

inline MessageType message_type(const RoundMessage& msg) {
  return static_cast<MessageType>(msg.index() + 1);
}

inline void check_payload_size(std::uint64_t payload_bytes) {
  if (payload_bytes > kMaxPayload) {
    throw EncodingError("payload of " + std::to_string(payload_bytes) +
                        " bytes exceeds the 32-bit length field");
  }
}

namespace detail {

inline std::uint32_t checked_u32(std::size_t n, const char* what) {
  if (n > 0xFFFFFFFFull) {
    throw EncodingError(std::string(what) + " does not fit 32 bits");
  }
  return static_cast<std::uint32_t>(n);
}

inline std::uint64_t payload_size(const RoundMessage& msg) {
  return std::visit(
      [](const auto& m) -> std::uint64_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelBroadcast>) {
          return 8 + 8ull * m.theta.size();
        } else if constexpr (std::is_same_v<T, ShareUpload>) {
          return 18 + 16ull * m.share.dimension();
        } else if constexpr (std::is_same_v<T, PlainGradientUpload>) {
          return 12 + 8ull * m.gradient.size();
        } else if constexpr (std::is_same_v<T, PartialSum>) {
          return 14 + 16ull * m.elements.size();
        } else {
          return 8;
        }
      },
      msg);
}

}  // namespace detail

inline Bytes encode_frame(const RoundMessage& msg) {
  const std::uint64_t len = detail::payload_size(msg);
  check_payload_size(len);
  ByteWriter w(kFrameHeaderSize + len);
  w.u32(static_cast<std::uint32_t>(len));
  w.u8(static_cast<std::uint8_t>(message_type(msg)));
  std::visit(
      [&w](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelBroadcast>) {
          w.u64(m.round_id);
          for (double v : m.theta) w.f64(v);
        } else if constexpr (std::is_same_v<T, ShareUpload>) {
          detail::checked_u32(m.share.dimension(), "share dimension");
          write_share_vector(w, m.share);
        } else if constexpr (std::is_same_v<T, PlainGradientUpload>) {
          w.u64(m.round_id);
          w.u32(m.client_id);
          for (double v : m.gradient) w.f64(v);
        } else if constexpr (std::is_same_v<T, PartialSum>) {
          w.u64(m.round_id);
          w.u16(m.server_index);
          w.u32(detail::checked_u32(m.elements.size(), "partial sum dimension"));
          for (const auto& e : m.elements) w.u128be(e.value());
        } else {
          w.u64(m.round_id);
        }
      },
      msg);
  return std::move(w).take();
}

inline RoundMessage decode_payload(std::uint8_t type,
                                   std::span<const std::uint8_t> payload,
                                   const PrimeModulus& modulus) {
  ByteReader r(payload);
  auto finish = [&r](RoundMessage m) {
    if (!r.done()) throw ConnectionFaultError("trailing bytes in frame payload");
    return m;
  };
  switch (static_cast<MessageType>(type)) {
    case MessageType::kModelBroadcast: {
      ModelBroadcast m;
      m.round_id = r.u64();
      if (r.remaining() % 8 != 0) {
        throw ConnectionFaultError("ModelBroadcast payload not 8-byte aligned");
      }
      while (!r.done()) m.theta.push_back(r.f64());
      return finish(std::move(m));
    }
    case MessageType::kShareUpload:
      return finish(ShareUpload{read_share_vector(r, modulus)});
    case MessageType::kPlainGradientUpload: {
      PlainGradientUpload m;
      m.round_id = r.u64();
      m.client_id = r.u32();
      if (r.remaining() % 8 != 0) {
        throw ConnectionFaultError("PlainGradientUpload payload misaligned");
      }
      while (!r.done()) m.gradient.push_back(r.f64());
      return finish(std::move(m));
    }
    case MessageType::kPartialSum: {
      PartialSum m;
      m.round_id = r.u64();
      m.server_index = r.u16();
      const std::uint32_t d = r.u32();
      if (r.remaining() != std::size_t{d} * 16) {
        throw ConnectionFaultError("PartialSum length disagrees with d");
      }
      m.elements.reserve(d);
      for (std::uint32_t k = 0; k < d; ++k) {
        m.elements.push_back(read_field_element(r, modulus));
      }
      return finish(std::move(m));
    }
    case MessageType::kRoundAck:
      return finish(RoundAck{r.u64()});
  }
  throw ConnectionFaultError("unknown message type " + std::to_string(type));
}

// Decodes exactly one complete frame.
inline RoundMessage decode_frame(std::span<const std::uint8_t> frame,
                                 const PrimeModulus& modulus) {
  if (frame.size() < kFrameHeaderSize) {
    throw ConnectionFaultError("frame shorter than header");
  }
  ByteReader header(frame.first(kFrameHeaderSize));
  const std::uint32_t len = header.u32();
  const std::uint8_t type = header.u8();
  if (frame.size() - kFrameHeaderSize != len) {
    throw ConnectionFaultError("frame length field " + std::to_string(len) +
                               " disagrees with " +
                               std::to_string(frame.size() - kFrameHeaderSize) +
                               " payload bytes");
  }
  return decode_payload(type, frame.subspan(kFrameHeaderSize), modulus);
}

// ---------------------------------------------------------------------------
// Endpoints
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { kClient, kIntermediate, kParameterServer };

struct Endpoint {
  Role role = Role::kClient;
  std::uint32_t index = 0;

  static Endpoint client(std::uint32_t id) { return {Role::kClient, id}; }
  static Endpoint intermediate(std::uint32_t j) { return {Role::kIntermediate, j}; }
  static Endpoint parameter_server() { return {Role::kParameterServer, 0}; }

  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

inline std::string to_string(const Endpoint& ep) {
  switch (ep.role) {
    case Role::kClient: return "client(" + std::to_string(ep.index) + ")";
    case Role::kIntermediate: return "intermediate(" + std::to_string(ep.index) + ")";
    case Role::kParameterServer: return "parameter_server";
  }
  return "?";
}

struct Link {
  Endpoint from;
  Endpoint to;
  friend auto operator<=>(const Link&, const Link&) = default;
};

// Which roles may carry which message over which hop. The parameter server
// can never be addressed with a ShareUpload; that is what keeps individual
// shares away from it.
inline bool link_permits(const Endpoint& from, const Endpoint& to,
                         MessageType type) {
  switch (type) {
    case MessageType::kModelBroadcast:
      return from.role == Role::kParameterServer && to.role == Role::kClient;
    case MessageType::kShareUpload:
      return from.role == Role::kClient && to.role == Role::kIntermediate;
    case MessageType::kPlainGradientUpload:
      return from.role == Role::kClient && to.role == Role::kParameterServer;
    case MessageType::kPartialSum:
      return from.role == Role::kIntermediate &&
             to.role == Role::kParameterServer;
    case MessageType::kRoundAck:
      return from.role == Role::kParameterServer;
  }
  return false;
}

using Timeout = std::optional<std::chrono::milliseconds>;

// Abstract message delivery between role endpoints. Per-link delivery is
// FIFO; receive() blocks until a message arrives or the timeout elapses.
class Transport {
 public:
  // Returning true drops the message silently (fault injection).
  using DropFilter =
      std::function<bool(const Link&, const RoundMessage&)>;
  // Sees every frame handed to the wire.
  using FrameObserver = std::function<void(const Link&, const Bytes&)>;

  virtual ~Transport() = default;

  virtual void send(const Endpoint& from, const Endpoint& to,
                    const RoundMessage& msg) = 0;
  virtual RoundMessage receive(const Endpoint& at, Timeout timeout) = 0;
  virtual std::optional<RoundMessage> try_receive(const Endpoint& at) = 0;
  virtual void close() = 0;

  // Starts recording copies of traffic on `link`. Simulation only.
  virtual void tap(const Link&) {
    throw UnsupportedOperationError("eavesdrop taps need the in-process transport");
  }
  virtual std::vector<RoundMessage> eavesdrop_tap(const Link&) {
    throw UnsupportedOperationError("eavesdrop taps need the in-process transport");
  }

  void set_drop_filter(DropFilter f) {
    std::lock_guard lock(hooks_mu_);
    drop_ = std::move(f);
  }
  void set_frame_observer(FrameObserver f) {
    std::lock_guard lock(hooks_mu_);
    observer_ = std::move(f);
  }

 protected:
  // Validates the hop, applies the drop filter and returns the frame, or
  // nullopt when the message is dropped.
  std::optional<Bytes> prepare(const Link& link, const RoundMessage& msg) {
    if (!link_permits(link.from, link.to, message_type(msg))) {
      throw ProtocolError(std::string(message_name(msg)) + " not allowed from " +
                          to_string(link.from) + " to " + to_string(link.to));
    }
    DropFilter drop;
    FrameObserver observer;
    {
      std::lock_guard lock(hooks_mu_);
      drop = drop_;
      observer = observer_;
    }
    if (drop && drop(link, msg)) return std::nullopt;
    Bytes frame = encode_frame(msg);
    if (observer) observer(link, frame);
    return frame;
  }

 private:
  std::mutex hooks_mu_;
  DropFilter drop_;
  FrameObserver observer_;
};

// ---------------------------------------------------------------------------
// In-process transport: per-endpoint FIFO inboxes holding encoded frames.
// ---------------------------------------------------------------------------

class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(PrimeModulus modulus) : modulus_(modulus) {}

  void send(const Endpoint& from, const Endpoint& to,
            const RoundMessage& msg) override {
    const Link link{from, to};
    auto frame = prepare(link, msg);
    if (!frame) return;
    std::lock_guard lock(mu_);
    if (closed_) throw ConnectionFaultError("transport closed");
    if (auto it = taps_.find(link); it != taps_.end()) it->second.push_back(msg);
    inboxes_[to].push_back(std::move(*frame));
    cv_.notify_all();
  }

  RoundMessage receive(const Endpoint& at, Timeout timeout) override {
    std::unique_lock lock(mu_);
    auto ready = [&] { return closed_ || !inboxes_[at].empty(); };
    if (timeout) {
      if (!cv_.wait_for(lock, *timeout, ready)) {
        throw TimeoutError(to_string(at) + ": no message within " +
                           std::to_string(timeout->count()) + " ms");
      }
    } else {
      cv_.wait(lock, ready);
    }
    if (inboxes_[at].empty()) throw ConnectionFaultError("transport closed");
    return pop(at);
  }

  std::optional<RoundMessage> try_receive(const Endpoint& at) override {
    std::lock_guard lock(mu_);
    auto it = inboxes_.find(at);
    if (it == inboxes_.end() || it->second.empty()) return std::nullopt;
    return pop(at);
  }

  bool has_pending(const Endpoint& at) {
    std::lock_guard lock(mu_);
    auto it = inboxes_.find(at);
    return it != inboxes_.end() && !it->second.empty();
  }

  void close() override {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  void tap(const Link& link) override {
    std::lock_guard lock(mu_);
    taps_[link];
  }

  std::vector<RoundMessage> eavesdrop_tap(const Link& link) override {
    std::lock_guard lock(mu_);
    auto it = taps_.find(link);
    if (it == taps_.end()) {
      throw InvalidParameterError("no tap installed on " + to_string(link.from) +
                                  " -> " + to_string(link.to));
    }
    return it->second;
  }

 private:
  RoundMessage pop(const Endpoint& at) {
    auto& q = inboxes_[at];
    Bytes frame = std::move(q.front());
    q.pop_front();
    return decode_frame(frame, modulus_);
  }

  PrimeModulus modulus_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool closed_ = false;
  std::map<Endpoint, std::deque<Bytes>> inboxes_;
  std::map<Link, std::vector<RoundMessage>> taps_;
};

// ---------------------------------------------------------------------------
// TCP transport. Every local endpoint listens on its own socket; one
// outgoing connection per (from, to) pair carries that link's frames, so
// per-link order is the TCP stream order.
// ---------------------------------------------------------------------------

struct SocketAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static SocketAddress parse(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) {
      throw InvalidParameterError("address '" + s + "' is not host:port");
    }
    SocketAddress a;
    a.host = s.substr(0, colon);
    const int port = std::stoi(s.substr(colon + 1));
    if (port < 0 || port > 65535) throw InvalidParameterError("bad port in " + s);
    a.port = static_cast<std::uint16_t>(port);
    return a;
  }

  std::string str() const { return host + ":" + std::to_string(port); }

  sockaddr_in to_sockaddr() const {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
      throw InvalidParameterError("cannot parse IPv4 host '" + host + "'");
    }
    return sa;
  }
};

namespace detail {

inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

inline void write_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n =
        ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectionFaultError(errno_text("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

// False on clean EOF before the first byte.
inline bool read_exact(int fd, std::uint8_t* out, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::recv(fd, out + off, n - off, 0);
    if (r == 0) {
      if (off == 0) return false;
      throw ConnectionFaultError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ConnectionFaultError(errno_text("recv"));
    }
    off += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace detail

class TcpTransport final : public Transport {
 public:
  static constexpr std::chrono::milliseconds kDefaultTimeout{30'000};

  explicit TcpTransport(PrimeModulus modulus,
                        std::chrono::milliseconds default_timeout = kDefaultTimeout)
      : modulus_(modulus), default_timeout_(default_timeout) {}

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  ~TcpTransport() override { close(); }

  // Binds a listening socket for `ep` and returns the bound address (port 0
  // picks an ephemeral port).
  std::string listen(const Endpoint& ep, const std::string& address = "127.0.0.1:0") {
    SocketAddress addr = SocketAddress::parse(address);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ConnectionFaultError(detail::errno_text("socket"));
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa = addr.to_sockaddr();
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 ||
        ::listen(fd, 64) != 0) {
      const auto msg = detail::errno_text("bind/listen");
      ::close(fd);
      throw ConnectionFaultError(msg);
    }
    socklen_t len = sizeof sa;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
    addr.port = ntohs(sa.sin_port);
    {
      std::lock_guard lock(mu_);
      listeners_.push_back(fd);
      peers_[ep] = addr;
      inboxes_[ep];
      threads_.emplace_back([this, fd, ep] { accept_loop(fd, ep); });
    }
    return addr.str();
  }

  // Registers where a remote endpoint listens.
  void add_peer(const Endpoint& ep, const std::string& address) {
    std::lock_guard lock(mu_);
    peers_[ep] = SocketAddress::parse(address);
  }

  void send(const Endpoint& from, const Endpoint& to,
            const RoundMessage& msg) override {
    auto frame = prepare({from, to}, msg);
    if (!frame) return;
    auto conn = connection({from, to});
    std::lock_guard lock(conn->write_mu);
    detail::write_all(conn->fd, *frame);
  }

  RoundMessage receive(const Endpoint& at, Timeout timeout) override {
    const auto wait = timeout.value_or(default_timeout_);
    std::unique_lock lock(mu_);
    auto& inbox = inboxes_[at];
    if (!cv_.wait_for(lock, wait, [&] { return closed_ || !inbox.empty(); })) {
      throw TimeoutError(to_string(at) + ": no message within " +
                         std::to_string(wait.count()) + " ms");
    }
    if (inbox.empty()) throw ConnectionFaultError("transport closed");
    return pop(inbox);
  }

  std::optional<RoundMessage> try_receive(const Endpoint& at) override {
    std::lock_guard lock(mu_);
    auto& inbox = inboxes_[at];
    if (inbox.empty()) return std::nullopt;
    return pop(inbox);
  }

  void close() override {
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      closed_ = true;
      for (int fd : listeners_) ::shutdown(fd, SHUT_RDWR);
      for (int fd : accepted_) ::shutdown(fd, SHUT_RDWR);
      for (auto& [link, c] : outgoing_) ::shutdown(c->fd, SHUT_RDWR);
      threads.swap(threads_);
      cv_.notify_all();
    }
    for (auto& t : threads) t.join();
    std::lock_guard lock(mu_);
    for (int fd : listeners_) ::close(fd);
    for (int fd : accepted_) ::close(fd);
    for (auto& [link, c] : outgoing_) ::close(c->fd);
    listeners_.clear();
    accepted_.clear();
    outgoing_.clear();
  }

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
  };

  // Either a decoded message or a connection fault reported to the reader.
  using InboxItem = std::variant<RoundMessage, std::string>;

  RoundMessage pop(std::deque<InboxItem>& inbox) {
    InboxItem item = std::move(inbox.front());
    inbox.pop_front();
    if (auto* fault = std::get_if<std::string>(&item)) {
      throw ConnectionFaultError(*fault);
    }
    return std::get<RoundMessage>(std::move(item));
  }

  std::shared_ptr<Connection> connection(const Link& link) {
    std::lock_guard lock(mu_);
    if (closed_) throw ConnectionFaultError("transport closed");
    if (auto it = outgoing_.find(link); it != outgoing_.end()) return it->second;
    auto peer = peers_.find(link.to);
    if (peer == peers_.end()) {
      throw ConnectionFaultError("no address known for " + to_string(link.to));
    }
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ConnectionFaultError(detail::errno_text("socket"));
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    sockaddr_in sa = peer->second.to_sockaddr();
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
      const auto msg = detail::errno_text("connect");
      ::close(fd);
      throw ConnectionFaultError(msg + " (" + peer->second.str() + ")");
    }
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    outgoing_[link] = conn;
    return conn;
  }

  void accept_loop(int listen_fd, Endpoint ep) {
    for (;;) {
      const int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;  // listener shut down
      }
      std::lock_guard lock(mu_);
      if (closed_) {
        ::close(fd);
        return;
      }
      accepted_.push_back(fd);
      threads_.emplace_back([this, fd, ep] { read_loop(fd, ep); });
    }
  }

  void read_loop(int fd, Endpoint ep) {
    try {
      for (;;) {
        std::uint8_t header[kFrameHeaderSize];
        if (!detail::read_exact(fd, header, kFrameHeaderSize)) return;
        ByteReader hr(header);
        const std::uint32_t len = hr.u32();
        const std::uint8_t type = hr.u8();
        if (len > kMaxAcceptedPayload) {
          throw ConnectionFaultError("frame length " + std::to_string(len) +
                                     " exceeds reader limit");
        }
        Bytes payload(len);
        if (len > 0 && !detail::read_exact(fd, payload.data(), len)) {
          throw ConnectionFaultError("connection closed mid-frame");
        }
        RoundMessage msg = decode_payload(type, payload, modulus_);
        std::lock_guard lock(mu_);
        inboxes_[ep].emplace_back(std::move(msg));
        cv_.notify_all();
      }
    } catch (const Error& e) {
      std::lock_guard lock(mu_);
      if (closed_) return;
      inboxes_[ep].emplace_back(std::string("connection fault at ") +
                                to_string(ep) + ": " + e.what());
      ::shutdown(fd, SHUT_RDWR);
      cv_.notify_all();
    }
  }

  PrimeModulus modulus_;
  std::chrono::milliseconds default_timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool closed_ = false;
  std::map<Endpoint, SocketAddress> peers_;
  std::map<Endpoint, std::deque<InboxItem>> inboxes_;
  std::map<Link, std::shared_ptr<Connection>> outgoing_;
  std::vector<int> listeners_;
  std::vector<int> accepted_;
  std::vector<std::thread> threads_;
};

}  // namespace ddpsa
