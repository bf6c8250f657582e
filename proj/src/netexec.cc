/* Copyright 2026 The cdnn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdnn/netexec.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "cdnn/error.h"
#include "cdnn/ops.h"
#include "cdnn/splitter.h"
#include "cdnn/text_util.h"

namespace cdnn {
namespace {

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string Errno(const std::string& what) {
  return what + ": " + std::strerror(errno);
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { Close(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      Close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const { return fd_; }
  void Close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Unblocks threads reading or writing the socket.
  void Shutdown(int how = SHUT_RDWR) const {
    if (fd_ >= 0) ::shutdown(fd_, how);
  }

 private:
  int fd_ = -1;
};

sockaddr_in ResolveAddress(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) {
    throw InvalidArgument("address '" + address + "' is not host:port");
  }
  const std::string host = address.substr(0, colon);
  const auto port = ParseInt(address.substr(colon + 1));
  if (port < 0 || port > 65535) throw InvalidArgument("bad port in " + address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.empty() ? "0.0.0.0" : host.c_str(), nullptr,
                               &hints, &res);
  if (rc != 0 || !res) {
    throw IoError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  sockaddr_in sa = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  return sa;
}

Fd Listen(const std::string& address) {
  const sockaddr_in sa = ResolveAddress(address);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (fd.get() < 0) throw IoError(Errno("socket"));
  const int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    throw IoError(Errno("bind " + address));
  }
  if (::listen(fd.get(), 64) != 0) throw IoError(Errno("listen " + address));
  return fd;
}

void TuneSocket(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Retries refused connections until the deadline; peers may still be
// starting.
Fd Connect(const std::string& address, double timeout_s) {
  const sockaddr_in sa = ResolveAddress(address);
  const auto start = Clock::now();
  while (true) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (fd.get() < 0) throw IoError(Errno("socket"));
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) == 0) {
      TuneSocket(fd.get());
      return fd;
    }
    if (SecondsSince(start) > timeout_s) {
      throw IoError(Errno("connect " + address));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

bool WaitReadable(int fd, double timeout_s) {
  pollfd p{fd, POLLIN, 0};
  const int rc = ::poll(&p, 1, static_cast<int>(timeout_s * 1000));
  return rc > 0;
}

void SendAll(int fd, const std::vector<std::uint8_t>& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(Errno("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

// False on end of stream before the first byte.
bool RecvExact(int fd, std::uint8_t* out, std::size_t size) {
  std::size_t off = 0;
  while (off < size) {
    const ssize_t n = ::recv(fd, out + off, size - off, 0);
    if (n == 0) {
      if (off == 0) return false;
      throw IoError("connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(Errno("recv"));
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

void WriteMessage(int fd, const WireMessage& m) { SendAll(fd, EncodeFrame(m)); }

// Empty at a clean end of stream.
std::optional<WireMessage> ReadMessage(int fd) {
  std::array<std::uint8_t, kFrameHeaderSize> header;
  if (!RecvExact(fd, header.data(), header.size())) return std::nullopt;
  const FrameHeader h = DecodeHeader(header);
  std::vector<std::uint8_t> payload(h.length);
  if (h.length && !RecvExact(fd, payload.data(), payload.size())) {
    throw IoError("connection closed mid-frame");
  }
  return DecodePayload(h.kind, payload);
}

// Sends our Hello and checks the answer.
void ClientHandshake(int fd, std::uint32_t self, int peer, std::uint64_t hash,
                     double timeout_s) {
  WriteMessage(fd, HelloMsg{self, hash});
  if (!WaitReadable(fd, timeout_s)) {
    throw IoError("node " + std::to_string(peer) + " did not answer hello");
  }
  const auto reply = ReadMessage(fd);
  if (!reply) {
    throw IoError("node " + std::to_string(peer) +
                  " rejected the connection (plan hash mismatch?)");
  }
  const auto* h = std::get_if<HelloMsg>(&*reply);
  if (!h) throw WireError("expected hello");
  if (h->plan_hash != hash) {
    throw WireError("node " + std::to_string(peer) + " runs plan " +
                    HashToHex(h->plan_hash) + ", expected " + HashToHex(hash));
  }
  if (h->node != static_cast<std::uint32_t>(peer)) {
    throw WireError("expected node " + std::to_string(peer) + ", reached node " +
                    std::to_string(h->node));
  }
}

const std::string& AddressOf(const PlanFile& plan, int node) {
  if (node < 0 || static_cast<std::size_t>(node) >= plan.addresses.size() ||
      plan.addresses[node].empty()) {
    throw InvalidArgument("plan has no address for node " + std::to_string(node));
  }
  return plan.addresses[node];
}

constexpr double kHandshakeTimeoutS = 10.0;
constexpr double kDisconnectGraceS = 5.0;

class NodeServer {
 public:
  NodeServer(const PlanFile& plan, int node, const ServeOptions& options)
      : plan_(plan), node_(node), options_(options), hash_(PlanHash(plan)) {
    const auto programs = BuildNodePrograms(plan.graph, plan.assignment);
    if (node < 0 || static_cast<std::size_t>(node) >= programs.size()) {
      throw InvalidArgument("node " + std::to_string(node) + " is not in the plan");
    }
    prog_ = programs[node];
    Prepare();
  }

  void Run() {
    Fd listener = Listen(options_.bind.empty() ? AddressOf(plan_, node_)
                                               : options_.bind);
    Log("listening, plan " + HashToHex(hash_));
    std::thread acceptor([this, &listener] { Guard([&] { AcceptLoop(listener); }); });
    Guard([this] {
      ConnectDownstream();
      Work();
    });
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    acceptor.join();
    for (auto& [peer, fd] : downstream_) fd.Shutdown();
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (const auto& fd : inbound_) fd->Shutdown();
    }
    cv_.notify_all();
    for (auto& t : receivers_) t.join();
    if (error_) std::rethrow_exception(error_);
    Log("shut down after " + std::to_string(count_) + " inferences");
  }

 private:
  struct Edge {
    std::deque<TensorMsg> queue;
    bool eof = false;
    std::optional<Clock::time_point> eof_at;
  };

  void Prepare() {
    const auto& st = plan_.assignment.stages;
    for (std::size_t l : prog_.layers) {
      layer_weights_[l] = MakeLayerWeights(plan_.graph.layers[l], plan_.seed, l);
    }
    if (prog_.shard_stage >= 0) {
      const Stage& s = st[prog_.shard_stage];
      const LayerSpec& layer = plan_.graph.layers[s.first_layer];
      const SplitPlan sp = SplitLayer(layer, *s.split);
      shard_ = sp.shards[prog_.shard_index];
      shard_weights_ = ShardWeights(
          *shard_, {MakeLayerWeights(layer, plan_.seed, s.first_layer)});
    }
    if (prog_.merge_stage >= 0) {
      const Stage& s = st[prog_.merge_stage];
      merge_ = SplitLayer(plan_.graph.layers[s.first_layer], *s.split).merge;
    }
    for (const SendSpec& send : prog_.sends) {
      if (send.payload == SendSpec::Payload::kShardInput &&
          !next_splits_.count(send.stage)) {
        const Stage& s = st[send.stage];
        next_splits_[send.stage] =
            SplitLayer(plan_.graph.layers[s.first_layer], *s.split);
      }
    }
    for (int p : prog_.primary_from) expected_.insert(p);
    for (int g : prog_.gather_from) {
      if (g != node_) expected_.insert(g);
    }
    for (int p : expected_) edges_[p];
  }

  void Log(const std::string& msg) {
    if (!options_.log) return;
    std::lock_guard<std::mutex> lk(log_mu_);
    *options_.log << "[node " << node_ << "] " << msg << std::endl;
  }

  // Runs f, recording the first failure and stopping the node.
  template <typename F>
  void Guard(F&& f) {
    try {
      f();
    } catch (...) {
      Fail(std::current_exception());
    }
  }

  void Fail(std::exception_ptr e) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (!error_) {
        error_ = e;
        try {
          std::rethrow_exception(e);
        } catch (const std::exception& ex) {
          Log(std::string("error: ") + ex.what());
        }
      }
      stop_ = true;
      if (controller_) controller_->Shutdown();
    }
    cv_.notify_all();
  }

  bool Stopping() {
    std::lock_guard<std::mutex> lk(mu_);
    return stop_;
  }

  void AcceptLoop(const Fd& listener) {
    while (!Stopping()) {
      if (!WaitReadable(listener.get(), 0.1)) continue;
      Fd fd(::accept4(listener.get(), nullptr, nullptr, SOCK_CLOEXEC));
      if (fd.get() < 0) continue;
      TuneSocket(fd.get());
      if (!WaitReadable(fd.get(), kHandshakeTimeoutS)) {
        Log("peer sent no hello");
        continue;
      }
      const auto msg = ReadMessage(fd.get());
      const auto* hello = msg ? std::get_if<HelloMsg>(&*msg) : nullptr;
      if (!hello) throw WireError("expected hello from new connection");
      const bool driver = hello->node == kDriverNodeId;
      const std::string who =
          driver ? std::string("driver") : "node " + std::to_string(hello->node);
      if (hello->plan_hash != hash_) {
        throw WireError("rejected " + who + ": plan hash " +
                        HashToHex(hello->plan_hash) + " does not match " +
                        HashToHex(hash_));
      }
      const int peer = driver ? kSourceNode : static_cast<int>(hello->node);
      if (!driver && !expected_.count(peer)) {
        throw WireError("rejected " + who + ": not an upstream peer");
      }
      WriteMessage(fd.get(), HelloMsg{static_cast<std::uint32_t>(node_), hash_});
      Log("accepted " + who);
      auto shared = std::make_shared<Fd>(std::move(fd));
      std::lock_guard<std::mutex> lk(mu_);
      inbound_.push_back(shared);
      if (driver) {
        controller_ = shared;
        cv_.notify_all();
      }
      receivers_.emplace_back([this, shared, peer, driver] {
        Guard([&] { Receive(*shared, peer, driver); });
      });
    }
  }

  void Receive(const Fd& fd, int peer, bool driver) {
    while (true) {
      std::optional<WireMessage> msg;
      try {
        msg = ReadMessage(fd.get());
      } catch (const IoError&) {
        if (Stopping()) return;
        throw;
      }
      std::unique_lock<std::mutex> lk(mu_);
      if (!msg) {
        if (driver) {
          if (!shutdown_ && !stop_) {
            throw IoError("driver disconnected without shutdown");
          }
          driver_closed_ = true;
        } else {
          edges_[peer].eof = true;
          edges_[peer].eof_at = Clock::now();
        }
        cv_.notify_all();
        return;
      }
      if (std::holds_alternative<ShutdownMsg>(*msg)) {
        if (!driver) throw WireError("shutdown from a peer node");
        shutdown_ = true;
        cv_.notify_all();
        continue;
      }
      auto* t = std::get_if<TensorMsg>(&*msg);
      if (!t) throw WireError("unexpected frame kind on data edge");
      if (driver && !expected_.count(kSourceNode)) {
        throw WireError("input sent to a node that takes none");
      }
      Edge& e = edges_[peer];
      cv_.wait(lk, [&] { return stop_ || e.queue.size() < options_.queue_capacity; });
      if (stop_) return;
      e.queue.push_back(std::move(*t));
      cv_.notify_all();
    }
  }

  void ConnectDownstream() {
    std::set<int> targets;
    for (const SendSpec& s : prog_.sends) {
      for (int t : s.to) {
        if (t != kSinkNode && t != node_) targets.insert(t);
      }
    }
    for (int t : targets) {
      Fd fd = Connect(AddressOf(plan_, t), options_.connect_timeout_s);
      ClientHandshake(fd.get(), static_cast<std::uint32_t>(node_), t, hash_,
                      kHandshakeTimeoutS);
      Log("connected to node " + std::to_string(t));
      downstream_[t] = std::move(fd);
    }
  }

  // Next frame of inference `id` from `peer`; empty once the run is shut
  // down.
  std::optional<TensorMsg> Pop(int peer, std::uint64_t id) {
    std::unique_lock<std::mutex> lk(mu_);
    Edge& e = edges_[peer];
    while (true) {
      if (stop_) return std::nullopt;
      if (!e.queue.empty()) break;
      if (shutdown_) return std::nullopt;
      if (e.eof && SecondsSince(*e.eof_at) > kDisconnectGraceS) {
        throw IoError("node " + std::to_string(peer) + " disconnected");
      }
      cv_.wait_for(lk, std::chrono::milliseconds(100));
    }
    TensorMsg m = std::move(e.queue.front());
    e.queue.pop_front();
    cv_.notify_all();
    if (m.inference_id != id) {
      throw WireError("out-of-order frame from " +
                      (peer == kSourceNode ? std::string("driver")
                                           : "node " + std::to_string(peer)) +
                      ": got inference " + std::to_string(m.inference_id) +
                      ", expected " + std::to_string(id));
    }
    return m;
  }

  // Inferences waiting in the input queues besides `id`.
  std::int64_t QueueDepth(std::uint64_t id) {
    std::lock_guard<std::mutex> lk(mu_);
    std::set<std::uint64_t> ids;
    for (const auto& [peer, e] : edges_) {
      for (const auto& m : e.queue) {
        if (m.inference_id != id) ids.insert(m.inference_id);
      }
    }
    return static_cast<std::int64_t>(ids.size());
  }

  void Emit(int to, const TensorMsg& m) {
    if (options_.tap) options_.tap(node_, to, m);
    if (to == kSinkNode) {
      std::shared_ptr<Fd> c;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || controller_; });
        c = controller_;
      }
      if (!c) throw IoError("no driver connected");
      WriteMessage(c->get(), m);
    } else {
      WriteMessage(downstream_.at(to).get(), m);
    }
  }

  NodeStats Snapshot() const {
    NodeStats s;
    s.node = node_;
    s.inferences = count_;
    s.observed_latency_s = count_ ? busy_s_ / static_cast<double>(count_) : 0.0;
    s.queue_occupancy_hist = hist_.empty() ? std::vector<std::int64_t>{0} : hist_;
    const double wall = first_start_ ? SecondsSince(*first_start_) : 0.0;
    s.busy_fraction = wall > 0 ? std::clamp(busy_s_ / wall, 0.0, 1.0) : 0.0;
    return s;
  }

  void SendStats() {
    std::shared_ptr<Fd> c;
    {
      std::lock_guard<std::mutex> lk(mu_);
      c = controller_;
    }
    if (c) WriteMessage(c->get(), StatsMsg{PipelineStats{{Snapshot()}}});
  }

  void Sample(std::uint64_t id) {
    const auto depth = static_cast<std::size_t>(QueueDepth(id));
    if (hist_.size() <= depth) hist_.resize(depth + 1, 0);
    ++hist_[depth];
    if (!first_start_) first_start_ = Clock::now();
  }

  // Runs inference `id`; false once the run is shut down.
  bool Step(std::uint64_t id) {
    Tensor x;
    std::optional<Tensor> partial;
    double busy = 0;
    if (!prog_.primary_from.empty()) {
      auto m = Pop(prog_.primary_from[id % prog_.primary_from.size()], id);
      if (!m) return false;
      Sample(id);
      x = std::move(m->tensor);
      if (shard_) {
        const auto t = Clock::now();
        partial = RunShard(*shard_, shard_weights_, x);
        busy += SecondsSince(t);
      }
    }
    if (prog_.merge_stage >= 0) {
      std::vector<Tensor> partials;
      for (int g : prog_.gather_from) {
        if (g == node_) {
          partials.push_back(*partial);
          continue;
        }
        auto m = Pop(g, id);
        if (!m) return false;
        if (prog_.primary_from.empty() && partials.empty()) Sample(id);
        partials.push_back(std::move(m->tensor));
      }
      const auto t = Clock::now();
      x = MergeOutputs(partials, *merge_);
      busy += SecondsSince(t);
    }
    const auto t = Clock::now();
    for (std::size_t l : prog_.layers) {
      x = LayerForward(plan_.graph.layers[l], x, layer_weights_.at(l));
    }
    for (const SendSpec& s : prog_.sends) {
      TensorMsg m;
      m.inference_id = id;
      m.tag = s.tag;
      switch (s.payload) {
        case SendSpec::Payload::kFull:
          m.tensor = x;
          break;
        case SendSpec::Payload::kPartial:
          m.tensor = *partial;
          break;
        case SendSpec::Payload::kShardInput:
          m.tensor = ShardInput(x, next_splits_.at(s.stage).shards[s.shard]);
          break;
      }
      Emit(s.to[id % s.to.size()], m);
    }
    busy_s_ += busy + SecondsSince(t);
    ++count_;
    if (options_.stats_every > 0 && count_ % options_.stats_every == 0) {
      SendStats();
    }
    return true;
  }

  void Work() {
    for (auto id = static_cast<std::uint64_t>(prog_.replica_index); Step(id);
         id += static_cast<std::uint64_t>(prog_.replica_count)) {
    }
    if (Stopping()) return;
    // Shutdown: final stats, then end our half of the driver connection and
    // wait for the driver to hang up, so peers that have not seen Shutdown
    // yet do not mistake our exit for a crash.
    SendStats();
    std::shared_ptr<Fd> c;
    {
      std::lock_guard<std::mutex> lk(mu_);
      c = controller_;
    }
    if (c) c->Shutdown(SHUT_WR);
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait_for(lk, std::chrono::seconds(30), [&] { return stop_ || driver_closed_; });
  }

  const PlanFile& plan_;
  const int node_;
  const ServeOptions& options_;
  const std::uint64_t hash_;
  NodeProgram prog_;
  std::map<std::size_t, LayerWeights> layer_weights_;
  std::optional<Shard> shard_;
  std::vector<LayerWeights> shard_weights_;
  std::optional<MergeOp> merge_;
  std::map<int, SplitPlan> next_splits_;
  std::set<int> expected_;  // inbound peers; kSourceNode is the driver

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<int, Edge> edges_;
  std::vector<std::shared_ptr<Fd>> inbound_;
  std::shared_ptr<Fd> controller_;
  std::vector<std::thread> receivers_;
  bool stop_ = false;
  bool shutdown_ = false;
  bool driver_closed_ = false;
  std::exception_ptr error_;
  std::map<int, Fd> downstream_;

  // Worker-owned statistics.
  std::int64_t count_ = 0;
  double busy_s_ = 0.0;
  std::vector<std::int64_t> hist_;
  std::optional<Clock::time_point> first_start_;

  std::mutex log_mu_;
};

}  // namespace

void ServeNode(const PlanFile& plan, int node, const ServeOptions& options) {
  NodeServer server(plan, node, options);
  server.Run();
}

DriveResult Drive(const PlanFile& plan, const std::vector<Tensor>& inputs,
                  const DriveOptions& options) {
  const auto start = Clock::now();
  const std::uint64_t hash = PlanHash(plan);
  const auto programs = BuildNodePrograms(plan.graph, plan.assignment);
  const int n = static_cast<int>(programs.size());
  const Stage& first = plan.assignment.stages.front();
  std::optional<SplitPlan> first_split;
  if (first.split) {
    first_split = SplitLayer(plan.graph.layers[first.first_layer], *first.split);
  }

  std::vector<Fd> conns;
  for (int i = 0; i < n; ++i) {
    Fd fd = Connect(AddressOf(plan, i), options.connect_timeout_s);
    ClientHandshake(fd.get(), kDriverNodeId, i, hash, kHandshakeTimeoutS);
    const timeval tv{static_cast<time_t>(options.timeout_s), 0};
    ::setsockopt(fd.get(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    conns.push_back(std::move(fd));
  }

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::uint64_t, Tensor> outputs;
  std::map<int, NodeStats> stats;
  std::exception_ptr error;
  bool shutdown_sent = false;
  auto last_progress = Clock::now();
  auto fail = [&](std::exception_ptr e) {
    std::lock_guard<std::mutex> lk(mu);
    if (!error) error = e;
    cv.notify_all();
  };

  std::vector<std::thread> readers;
  for (int i = 0; i < n; ++i) {
    readers.emplace_back([&, i] {
      try {
        std::optional<std::uint64_t> last_id;
        while (auto msg = ReadMessage(conns[i].get())) {
          std::lock_guard<std::mutex> lk(mu);
          if (auto* t = std::get_if<TensorMsg>(&*msg)) {
            if (last_id && t->inference_id <= *last_id) {
              throw WireError("out-of-order output from node " + std::to_string(i));
            }
            if (t->inference_id >= inputs.size() || outputs.count(t->inference_id)) {
              throw WireError("unexpected output " + std::to_string(t->inference_id) +
                              " from node " + std::to_string(i));
            }
            last_id = t->inference_id;
            outputs[t->inference_id] = std::move(t->tensor);
            last_progress = Clock::now();
          } else if (auto* s = std::get_if<StatsMsg>(&*msg)) {
            for (const auto& ns : s->stats.nodes) stats[ns.node] = ns;
          } else {
            throw WireError("unexpected frame from node " + std::to_string(i));
          }
          cv.notify_all();
        }
        std::lock_guard<std::mutex> lk(mu);
        if (!shutdown_sent) throw IoError("node " + std::to_string(i) + " disconnected");
      } catch (...) {
        fail(std::current_exception());
      }
    });
  }

  auto finish = [&] {
    for (auto& c : conns) c.Shutdown();
    for (auto& t : readers) t.join();
  };
  try {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      {
        std::lock_guard<std::mutex> lk(mu);
        if (error) std::rethrow_exception(error);
      }
      auto send = [&](int to, TensorMsg m) {
        if (options.tap) options.tap(kSourceNode, to, m);
        WriteMessage(conns[to].get(), m);
      };
      if (first_split) {
        for (std::size_t j = 0; j < first.nodes.size(); ++j) {
          send(first.nodes[j], {k, "in#" + std::to_string(j),
                                ShardInput(inputs[k], first_split->shards[j])});
        }
      } else {
        send(first.nodes[k % first.nodes.size()], {k, "in", inputs[k]});
      }
    }
    {
      std::unique_lock<std::mutex> lk(mu);
      while (!error && outputs.size() < inputs.size()) {
        if (SecondsSince(last_progress) > options.timeout_s) {
          throw IoError("timed out waiting for inference " +
                        std::to_string(outputs.size()));
        }
        cv.wait_for(lk, std::chrono::milliseconds(100));
      }
      if (error) std::rethrow_exception(error);
      shutdown_sent = true;
    }
    for (auto& c : conns) WriteMessage(c.get(), ShutdownMsg{});
    // Each node sends its final stats and then ends its side.
    for (auto& t : readers) t.join();
    readers.clear();
    if (error) std::rethrow_exception(error);
  } catch (...) {
    finish();
    throw;
  }

  DriveResult r;
  for (auto& [id, t] : outputs) r.outputs.push_back(std::move(t));
  for (auto& [node, s] : stats) r.stats.nodes.push_back(s);
  r.seconds = SecondsSince(start);
  return r;
}

int LocalBasePort() { return 20000 + static_cast<int>(::getpid() % 2500) * 16; }

LocalCluster::LocalCluster(const std::string& executable, PlanFile plan,
                           const std::string& work_dir)
    : plan_(std::move(plan)) {
  const int n = plan_.assignment.NodeCount();
  plan_.addresses = LocalAddresses(n, LocalBasePort());
  plan_path_ = work_dir + "/local.plan";
  WriteFile(plan_path_, FormatPlan(plan_));
  for (int i = 0; i < n; ++i) {
    const std::string log = work_dir + "/node" + std::to_string(i) + ".log";
    std::vector<std::string> args = {executable, "serve",  "--plan", plan_path_,
                                     "--node",   std::to_string(i), "--bind",
                                     plan_.addresses[i]};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw IoError(Errno("fork"));
    if (pid == 0) {
      const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      if (fd >= 0) {
        ::dup2(fd, 1);
        ::dup2(fd, 2);
      }
      ::execv(executable.c_str(), argv.data());
      ::_exit(127);
    }
    pids_.push_back(pid);
  }
}

std::vector<int> LocalCluster::Wait(double timeout_s) {
  std::vector<int> codes(pids_.size(), -1);
  std::vector<bool> done(pids_.size(), false);
  const auto start = Clock::now();
  std::size_t remaining = pids_.size();
  while (remaining > 0 && SecondsSince(start) < timeout_s) {
    for (std::size_t i = 0; i < pids_.size(); ++i) {
      if (done[i]) continue;
      int status = 0;
      if (::waitpid(pids_[i], &status, WNOHANG) == pids_[i]) {
        done[i] = true;
        --remaining;
        codes[i] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      }
    }
    if (remaining) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  for (std::size_t i = 0; i < pids_.size(); ++i) {
    if (!done[i]) {
      ::kill(pids_[i], SIGKILL);
      ::waitpid(pids_[i], nullptr, 0);
    }
  }
  pids_.clear();
  return codes;
}

LocalCluster::~LocalCluster() {
  for (pid_t pid : pids_) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
  }
}

}  // namespace cdnn
