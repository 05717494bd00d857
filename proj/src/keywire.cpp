#include "tlstap/keywire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <random>

#include "tlstap/crypto.hpp"

namespace tlstap {

Bytes encode_key_message(const KeyMessage& msg) {
  if (msg.secret.empty() || msg.secret.size() > 0xffff)
    throw TlstapError("key message secret length out of range");
  Bytes out;
  out.reserve(44 + msg.secret.size());
  out.push_back(kKeyMessageVersion);
  out.push_back(static_cast<uint8_t>(msg.kind));
  out.insert(out.end(), msg.client_random.begin(), msg.client_random.end());
  write_u16be(out, static_cast<uint16_t>(msg.secret.size()));
  out.insert(out.end(), msg.secret.begin(), msg.secret.end());
  write_u64be(out, static_cast<uint64_t>(msg.sent_time));
  return out;
}

void KeyMessageDecoder::feed(ByteSpan bytes) {
  if (failed_) return;
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<KeyMessage> KeyMessageDecoder::next() {
  if (failed_ || buffer_.size() < 36) return std::nullopt;
  if (buffer_[0] != kKeyMessageVersion || buffer_[1] < 1 || buffer_[1] > 3) {
    failed_ = true;
    return std::nullopt;
  }
  uint16_t secret_len = read_u16be(buffer_.data() + 34);
  if (secret_len == 0) {
    failed_ = true;
    return std::nullopt;
  }
  size_t total = 36u + secret_len + 8u;
  if (buffer_.size() < total) return std::nullopt;
  KeyMessage msg;
  msg.kind = static_cast<KeyKind>(buffer_[1]);
  std::memcpy(msg.client_random.data(), buffer_.data() + 2, kRandomLen);
  msg.secret.assign(buffer_.begin() + 36, buffer_.begin() + 36 + secret_len);
  msg.sent_time =
      static_cast<Micros>(read_u64be(buffer_.data() + 36 + secret_len));
  buffer_.erase(buffer_.begin(), buffer_.begin() + total);
  return msg;
}

Bytes auth_proof(const std::string& secret, std::string_view role,
                 ByteSpan challenge) {
  Bytes data(role.begin(), role.end());
  data.insert(data.end(), challenge.begin(), challenge.end());
  Bytes mac = hmac_sha384(to_bytes(secret), data);
  mac.resize(kAuthProofLen);
  return mac;
}

namespace {

bool read_exact_fd(int fd, uint8_t* out, size_t n) {
  size_t done = 0;
  while (done < n) {
    ssize_t got = ::recv(fd, out + done, n - done, 0);
    if (got <= 0) return false;
    done += static_cast<size_t>(got);
  }
  return true;
}

bool write_all_fd(int fd, ByteSpan data) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t sent = ::send(fd, data.data() + done, data.size() - done,
                          MSG_NOSIGNAL);
    if (sent <= 0) return false;
    done += static_cast<size_t>(sent);
  }
  return true;
}

Bytes random_challenge() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  Bytes out(kAuthChallengeLen);
  for (auto& b : out) b = static_cast<uint8_t>(rng());
  return out;
}

bool constant_time_equal(ByteSpan a, ByteSpan b) {
  if (a.size() != b.size()) return false;
  uint8_t acc = 0;
  for (size_t i = 0; i < a.size(); i++) acc |= a[i] ^ b[i];
  return acc == 0;
}

// Server side of the mutual handshake; false drops the connection.
bool server_auth(int fd, const std::string& secret) {
  Bytes challenge = random_challenge();
  if (!write_all_fd(fd, challenge)) return false;
  uint8_t reply[kAuthChallengeLen + kAuthProofLen];
  if (!read_exact_fd(fd, reply, sizeof(reply))) return false;
  Bytes expected = auth_proof(secret, "client", challenge);
  if (!constant_time_equal(expected,
                           ByteSpan(reply + kAuthChallengeLen, kAuthProofLen)))
    return false;
  Bytes proof =
      auth_proof(secret, "server", ByteSpan(reply, kAuthChallengeLen));
  return write_all_fd(fd, proof);
}

}  // namespace

KeyReceiver::KeyReceiver(ReceiverConfig config, KeyStore& store)
    : config_(std::move(config)), store_(store) {}

KeyReceiver::~KeyReceiver() { stop(); }

void KeyReceiver::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TlstapError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(config_.port);
  if (::inet_pton(AF_INET, config_.listen_host.c_str(), &addr.sin_addr) != 1)
    throw TlstapError("bad listen address: " + config_.listen_host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw TlstapError("bind failed on " + config_.listen_host + ":" +
                      std::to_string(config_.port));
  if (::listen(listen_fd_, 16) < 0) throw TlstapError("listen failed");

  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port_ = ntohs(addr.sin_port);

  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void KeyReceiver::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  {
    std::lock_guard lock(mutex_);
    for (int fd : connection_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mutex_);
    workers.swap(connection_threads_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
}

void KeyReceiver::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    int ready = ::poll(&pfd, 1, 200);
    if (!running_) break;
    if (ready <= 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard lock(mutex_);
    stats_.connections_accepted++;
    connection_fds_.push_back(fd);
    connection_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void KeyReceiver::serve_connection(int fd) {
  bool authed = true;
  if (config_.auth_secret) authed = server_auth(fd, *config_.auth_secret);

  std::ofstream tee;
  if (authed && config_.tee_path) {
    tee.open(*config_.tee_path, std::ios::app);
    if (!tee) authed = false;
  }

  KeyMessageDecoder decoder;
  uint8_t buf[4096];
  bool dropped = !authed;
  while (authed && running_) {
    ssize_t got = ::recv(fd, buf, sizeof(buf), 0);
    if (got <= 0) break;
    decoder.feed(ByteSpan(buf, static_cast<size_t>(got)));
    while (auto msg = decoder.next()) {
      KeyLogEntry entry;
      entry.kind = msg->kind;
      entry.client_random = msg->client_random;
      entry.secret = msg->secret;
      entry.arrival_time = wall_clock_micros();
      store_.ingest(entry);
      if (tee.is_open()) {
        tee << format_timestamped_line(entry) << "\n";
        tee.flush();
      }
      std::lock_guard lock(mutex_);
      stats_.messages_ingested++;
      if (config_.max_entries > 0) {
        lru_.push_back(entry.client_random);
        while (lru_.size() > config_.max_entries) {
          if (store_.erase(lru_.front())) stats_.evictions++;
          lru_.pop_front();
        }
      }
    }
    if (decoder.failed()) {
      dropped = true;
      break;
    }
  }
  if (dropped) {
    std::lock_guard lock(mutex_);
    stats_.connections_dropped++;
  }
  ::close(fd);
  std::lock_guard lock(mutex_);
  std::erase(connection_fds_, fd);
}

KeyReceiver::Stats KeyReceiver::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

bool KeyReceiver::wait_for_messages(uint64_t count, Micros timeout_micros) {
  Micros deadline = wall_clock_micros() + timeout_micros;
  while (wall_clock_micros() < deadline) {
    if (stats().messages_ingested >= count) return true;
    ::usleep(1000);
  }
  return stats().messages_ingested >= count;
}

KeyChannelClient::KeyChannelClient(std::string host, uint16_t port,
                                   std::optional<std::string> auth_secret)
    : host_(std::move(host)), port_(port), auth_secret_(std::move(auth_secret)) {}

KeyChannelClient::~KeyChannelClient() { close(); }

bool KeyChannelClient::connect() {
  close();
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host_.c_str(), std::to_string(port_).c_str(), &hints,
                    &res) != 0)
    return false;
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    return false;
  }
  int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    ::close(fd);
    return false;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

  if (auth_secret_) {
    uint8_t server_challenge[kAuthChallengeLen];
    if (!read_exact_fd(fd, server_challenge, sizeof(server_challenge))) {
      ::close(fd);
      return false;
    }
    Bytes client_challenge = random_challenge();
    Bytes reply = client_challenge;
    Bytes proof = auth_proof(*auth_secret_, "client",
                             ByteSpan(server_challenge, kAuthChallengeLen));
    reply.insert(reply.end(), proof.begin(), proof.end());
    if (!write_all_fd(fd, reply)) {
      ::close(fd);
      return false;
    }
    uint8_t server_proof[kAuthProofLen];
    if (!read_exact_fd(fd, server_proof, sizeof(server_proof))) {
      ::close(fd);
      // The peer hung up right after seeing our proof: credential mismatch.
      throw TlstapError("key channel authentication failed");
    }
    Bytes expected = auth_proof(*auth_secret_, "server", client_challenge);
    if (!constant_time_equal(expected,
                             ByteSpan(server_proof, kAuthProofLen))) {
      ::close(fd);
      throw TlstapError("key channel authentication failed");
    }
  }
  fd_ = fd;
  return true;
}

bool KeyChannelClient::send(const KeyMessage& msg) {
  if (fd_ < 0) return false;
  if (!write_all_fd(fd_, encode_key_message(msg))) {
    close();
    return false;
  }
  return true;
}

void KeyChannelClient::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace tlstap
