#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <mutex>

#include "mvpose/error.hpp"
#include "mvpose/protocol.hpp"

namespace mvpose {

namespace {

// Shared latency/loss schedule. Decides, per sent message, whether it is
// lost and when it becomes receivable.
class Schedule {
 public:
  Schedule(const LatencyModel& m, std::uint64_t seed) : model_(m), rng_(seed) {}

  /// Returns the delivery time or -1 when the message is lost.
  Micros admit(Micros now) {
    // Both draws happen for every message so the stream stays aligned.
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    Micros jitter = 0;
    if (model_.jitter_us > 0) {
      jitter = std::uniform_int_distribution<Micros>(-model_.jitter_us, model_.jitter_us)(rng_);
    }
    if (u < model_.loss) return -1;
    const Micros at = std::max(now + std::max<Micros>(0, model_.fixed_us + jitter), last_);
    last_ = at;
    return at;
  }

 private:
  LatencyModel model_;
  std::mt19937_64 rng_;
  Micros last_ = 0;
};

struct InFlight {
  std::string payload;  // empty for the socket channel; bytes travel through the kernel
  Micros sent = 0;
  Micros deliver = 0;
};

class LoopbackChannel final : public Channel {
 public:
  LoopbackChannel(const LatencyModel& m, std::uint64_t seed) : schedule_(m, seed) {}

  void send(std::string payload, Micros now) override {
    std::lock_guard lock(mu_);
    if (closed_) throw Error(Errc::Disconnected, "send on closed channel");
    if (payload.empty() || payload.back() != '\n') payload.push_back('\n');
    ++stats_.sent;
    stats_.bytes += payload.size();
    const Micros at = schedule_.admit(now);
    if (at < 0) {
      ++stats_.lost;
      return;
    }
    queue_.push_back({std::move(payload), now, at});
  }

  std::vector<Delivery> receive(Micros now) override {
    std::lock_guard lock(mu_);
    std::vector<Delivery> out;
    while (!queue_.empty() && queue_.front().deliver <= now) {
      auto& f = queue_.front();
      out.push_back({std::move(f.payload), f.sent, f.deliver});
      queue_.pop_front();
      ++stats_.delivered;
    }
    return out;
  }

  void close() override {
    std::lock_guard lock(mu_);
    closed_ = true;
    stats_.dropped_after_close += queue_.size();
    queue_.clear();
  }

  bool closed() const override {
    std::lock_guard lock(mu_);
    return closed_;
  }

  ChannelStats stats() const override {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  mutable std::mutex mu_;
  Schedule schedule_;
  std::deque<InFlight> queue_;
  ChannelStats stats_;
  bool closed_ = false;
};

// Carries newline-framed payloads over a loopback TCP connection. The
// latency schedule is applied on the receiving side, so both channel kinds
// deliver identical streams for the same seed.
class SocketChannel final : public Channel {
 public:
  SocketChannel(const LatencyModel& m, std::uint64_t seed) : schedule_(m, seed) { connect_pair(); }

  ~SocketChannel() override { shutdown_fds(); }

  void send(std::string payload, Micros now) override {
    std::lock_guard lock(mu_);
    if (closed_) throw Error(Errc::Disconnected, "send on closed channel");
    if (payload.empty() || payload.back() != '\n') payload.push_back('\n');
    ++stats_.sent;
    stats_.bytes += payload.size();
    const Micros at = schedule_.admit(now);
    if (at < 0) {
      ++stats_.lost;
      return;
    }
    std::size_t off = 0;
    while (off < payload.size()) {
      const ssize_t n = ::send(write_fd_, payload.data() + off, payload.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::Disconnected, std::string("socket send failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
    pending_.push_back({{}, now, at});
  }

  std::vector<Delivery> receive(Micros now) override {
    std::lock_guard lock(mu_);
    std::vector<Delivery> out;
    while (!closed_ && !pending_.empty() && pending_.front().deliver <= now) {
      std::string line = read_line();
      const auto& f = pending_.front();
      out.push_back({std::move(line), f.sent, f.deliver});
      pending_.pop_front();
      ++stats_.delivered;
    }
    return out;
  }

  void close() override {
    std::lock_guard lock(mu_);
    if (closed_) return;
    closed_ = true;
    stats_.dropped_after_close += pending_.size();
    pending_.clear();
    shutdown_fds();
  }

  bool closed() const override {
    std::lock_guard lock(mu_);
    return closed_;
  }

  ChannelStats stats() const override {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  void connect_pair() {
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw Error(Errc::Disconnected, "cannot create listening socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    socklen_t len = sizeof(addr);
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listener, 1) != 0 ||
        ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      ::close(listener);
      throw Error(Errc::Disconnected, std::string("cannot listen on loopback: ") + std::strerror(errno));
    }
    write_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (write_fd_ < 0 || ::connect(write_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(listener);
      throw Error(Errc::Disconnected, std::string("cannot connect to loopback: ") + std::strerror(errno));
    }
    read_fd_ = ::accept(listener, nullptr, nullptr);
    ::close(listener);
    if (read_fd_ < 0) throw Error(Errc::Disconnected, "accept failed");
    const int one = 1;
    ::setsockopt(write_fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  void shutdown_fds() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    write_fd_ = read_fd_ = -1;
  }

  std::string read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl + 1);
        buffer_.erase(0, nl + 1);
        return line;
      }
      pollfd p{read_fd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, 5000);
      if (ready <= 0) throw Error(Errc::Disconnected, "timed out waiting for socket data");
      char chunk[65536];
      const ssize_t n = ::recv(read_fd_, chunk, sizeof(chunk), 0);
      if (n == 0) throw Error(Errc::Disconnected, "peer closed the stream");
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::Disconnected, std::string("socket recv failed: ") + std::strerror(errno));
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  mutable std::mutex mu_;
  Schedule schedule_;
  std::deque<InFlight> pending_;
  std::string buffer_;
  ChannelStats stats_;
  int write_fd_ = -1;
  int read_fd_ = -1;
  bool closed_ = false;
};

}  // namespace

std::unique_ptr<Channel> make_channel(ChannelKind kind, const LatencyModel& latency, std::uint64_t seed) {
  if (latency.loss < 0.0 || latency.loss > 1.0) throw Error(Errc::InvalidArgument, "loss probability outside [0, 1]");
  if (kind == ChannelKind::Socket) return std::make_unique<SocketChannel>(latency, seed);
  return std::make_unique<LoopbackChannel>(latency, seed);
}

}  // namespace mvpose
