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

#include "cdnn/pipesim.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <set>

#include "cdnn/error.h"

namespace cdnn {

const DeviceProfile& SimConfig::DeviceFor(int node) const {
  auto it = devices.find(node);
  return it == devices.end() ? default_device : it->second;
}

const LinkProfile& SimConfig::LinkFor(int from, int to) const {
  auto it = edge_links.find({from, to});
  return it == edge_links.end() ? link : it->second;
}

SimConfig ConfigFromPlan(const PlanFile& plan, const Injection& injection) {
  SimConfig c;
  c.graph = plan.graph;
  c.assignment = plan.assignment;
  c.default_device = plan.default_device;
  c.devices = plan.devices;
  c.link = plan.link;
  c.injection = injection;
  c.seed = plan.seed;
  c.plan_hash = HashToHex(PlanHash(plan));
  return c;
}

namespace {

struct Transfer {
  int to = 0;
  bool partial = false;
  std::int64_t elems = 0;
  double seconds = 0.0;
};

class Simulator {
 public:
  explicit Simulator(const SimConfig& config) : config_(config) {
    if (config.queue_capacity && *config.queue_capacity < 1) {
      throw InvalidArgument("queue capacity must be at least 1");
    }
    programs_ = BuildNodePrograms(config.graph, config.assignment);
    const auto work = AssignmentWork(config.graph, config.assignment);
    nodes_.resize(programs_.size());
    for (std::size_t i = 0; i < programs_.size(); ++i) {
      const DeviceProfile& dev = config.DeviceFor(static_cast<int>(i));
      const ProfileDB own(dev);
      const ProfileDB& db = config.truth ? *config.truth : own;
      const NodeEstimate e = EstimateNode(work[i], db, dev, config.link);
      Node& n = nodes_[i];
      n.shard_s = e.shard_s;
      n.post_s = e.post_s;
      n.next_id = programs_[i].replica_index;
      const auto& gather = programs_[i].gather_from;
      n.partials_needed = static_cast<int>(gather.size()) -
                          static_cast<int>(std::count(
                              gather.begin(), gather.end(), static_cast<int>(i)));
    }
    // What the source sends for each inference.
    const Stage& first = config.assignment.stages.front();
    const auto in_shapes = LayerInputShapes(config.graph);
    if (first.split) {
      const SplitPlan plan =
          SplitLayer(config.graph.layers[first.first_layer], *first.split);
      for (std::size_t j = 0; j < first.nodes.size(); ++j) {
        source_elems_.push_back(SelectorElementCount(
            plan.shards[j].input, in_shapes[first.first_layer]));
      }
    } else {
      source_elems_.push_back(NumElements(config.graph.input_shape));
    }
    const auto* closed = std::get_if<ClosedInjection>(&config.injection);
    if (closed) {
      if (closed->inputs < 0) throw InvalidArgument("negative input count");
      total_ = closed->inputs;
    } else {
      const auto& open = std::get<OpenInjection>(config.injection);
      if (!(open.rate_hz > 0) || !(open.duration_s > 0)) {
        throw InvalidArgument("open injection needs positive rate/duration");
      }
      std::mt19937_64 rng(config.seed);
      std::exponential_distribution<double> gap(open.rate_hz);
      for (double t = gap(rng); t < open.duration_s; t += gap(rng)) {
        arrivals_.push_back(t);
      }
      total_ = static_cast<std::int64_t>(arrivals_.size());
    }
    injected_at_.assign(total_, -1.0);
    completed_at_.assign(total_, -1.0);
  }

  SimReport Run() {
    for (std::size_t i = 0; i < arrivals_.size(); ++i) {
      Schedule(arrivals_[i], [this, i] {
        backlog_.push_back(static_cast<std::int64_t>(i));
        injected_at_[i] = now_;
        TrySource();
      });
    }
    TrySource();
    while (!events_.empty()) {
      Event e = events_.top();
      if (config_.horizon_s && e.time > *config_.horizon_s) break;
      events_.pop();
      now_ = e.time;
      e.action();
    }
    std::int64_t injected = 0, completed = 0;
    for (std::int64_t i = 0; i < total_; ++i) {
      if (injected_at_[i] >= 0) ++injected;
      if (completed_at_[i] >= 0) ++completed;
    }
    if (!config_.horizon_s && completed != total_) {
      throw Error("simulation deadlocked with " +
                  std::to_string(total_ - completed) + " inferences pending");
    }
    return Report(injected, completed);
  }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    std::function<void()> action;
    bool operator>(const Event& o) const {
      return time != o.time ? time > o.time : seq > o.seq;
    }
  };

  enum class Phase { kIdle, kShard, kWaitPartials, kPost, kSending, kBlocked };

  struct Node {
    double shard_s = 0.0;
    double post_s = 0.0;
    int partials_needed = 0;
    Phase phase = Phase::kIdle;
    std::int64_t next_id = 0;
    std::int64_t current = -1;
    double started = 0.0;    // service start of the current inference
    double busy_from = 0.0;  // start of the current busy interval
    std::vector<Transfer> outbox;
    std::size_t out_index = 0;
    std::set<std::int64_t> primary_ready;
    std::map<std::int64_t, int> partials;
    std::set<std::int64_t> reserved;  // ids queued or in transit here
    std::vector<std::function<void()>> waiters;
    std::vector<std::pair<double, double>> busy;
    std::vector<std::int64_t> hist;
    double service_total = 0.0;
    std::int64_t served = 0;
  };

  void Schedule(double t, std::function<void()> f) {
    events_.push({t, seq_++, std::move(f)});
  }

  std::int64_t Capacity() const {
    return config_.queue_capacity.value_or(
        std::numeric_limits<std::int64_t>::max());
  }

  bool HasSlot(int to, std::int64_t id) const {
    if (to == kSinkNode) return true;
    const Node& n = nodes_[to];
    return n.reserved.count(id) ||
           static_cast<std::int64_t>(n.reserved.size()) < Capacity();
  }

  void Deliver(int to, std::int64_t id, bool partial) {
    if (to == kSinkNode) {
      completed_at_[id] = now_;
      return;
    }
    Node& n = nodes_[to];
    if (partial) {
      ++n.partials[id];
    } else {
      n.primary_ready.insert(id);
    }
    Advance(to);
  }

  void Count(int from, int to, std::int64_t elems) {
    edges_[{from, to}] += elems;
  }

  // Source.
  std::vector<int> SourceTargets(std::int64_t id) const {
    const Stage& first = config_.assignment.stages.front();
    if (first.split) return first.nodes;
    return {first.nodes[id % first.nodes.size()]};
  }

  void TrySource() {
    if (source_busy_) return;
    std::int64_t id;
    if (arrivals_.empty()) {
      if (next_inject_ >= total_) return;
      id = next_inject_;
      for (int t : SourceTargets(id)) {
        const Node& n = nodes_[t];
        if (n.phase != Phase::kIdle || !n.reserved.empty()) return;
      }
      injected_at_[id] = now_;
    } else {
      if (backlog_.empty()) return;
      id = backlog_.front();
    }
    ++next_inject_;
    if (!arrivals_.empty()) backlog_.erase(backlog_.begin());
    source_busy_ = true;
    SourceSend(id, 0);
  }

  void SourceSend(std::int64_t id, std::size_t j) {
    const auto targets = SourceTargets(id);
    if (j == targets.size()) {
      source_busy_ = false;
      TrySource();
      return;
    }
    const int to = targets[j];
    if (!HasSlot(to, id)) {
      nodes_[to].waiters.push_back([this, id, j] { SourceSend(id, j); });
      return;
    }
    nodes_[to].reserved.insert(id);
    const std::int64_t elems =
        source_elems_[config_.assignment.stages.front().split ? j : 0];
    Count(kSourceNode, to, elems);
    const double d = TransferSeconds(elems, 1, config_.default_device,
                                     config_.LinkFor(kSourceNode, to));
    Schedule(now_ + d, [this, id, j, to] {
      Deliver(to, id, false);
      SourceSend(id, j + 1);
    });
  }

  // Nodes.
  void Advance(int i) {
    Node& n = nodes_[i];
    if (n.phase == Phase::kWaitPartials) {
      if (n.partials[n.current] >= n.partials_needed) StartPost(i);
      return;
    }
    if (n.phase != Phase::kIdle || n.next_id >= total_) return;
    const NodeProgram& p = programs_[i];
    const std::int64_t id = n.next_id;
    if (!p.primary_from.empty()) {
      if (!n.primary_ready.count(id)) return;
      n.primary_ready.erase(id);
    } else if (n.partials[id] < n.partials_needed) {
      return;
    }
    Begin(i, id);
    if (p.shard_stage >= 0) {
      n.phase = Phase::kShard;
      Schedule(now_ + n.shard_s, [this, i] { ShardDone(i); });
    } else {
      StartPost(i);
    }
    Wake(i);
  }

  void Begin(int i, std::int64_t id) {
    Node& n = nodes_[i];
    n.current = id;
    n.started = now_;
    n.busy_from = now_;
    n.reserved.erase(id);
    std::set<std::int64_t> waiting(n.primary_ready.begin(),
                                   n.primary_ready.end());
    for (const auto& [pid, count] : n.partials) {
      if (count > 0 && pid != id) waiting.insert(pid);
    }
    const std::size_t depth = waiting.size();
    if (n.hist.size() <= depth) n.hist.resize(depth + 1, 0);
    ++n.hist[depth];
  }

  // A queue slot freed up at node i.
  void Wake(int i) {
    auto waiters = std::move(nodes_[i].waiters);
    nodes_[i].waiters.clear();
    for (auto& w : waiters) w();
    TrySource();
  }

  void ShardDone(int i) {
    Node& n = nodes_[i];
    if (programs_[i].merge_stage >= 0) {
      n.busy.emplace_back(n.busy_from, now_);
      n.phase = Phase::kWaitPartials;
      Advance(i);
    } else {
      StartSends(i);
    }
  }

  void StartPost(int i) {
    Node& n = nodes_[i];
    if (n.phase == Phase::kWaitPartials) n.busy_from = now_;
    n.partials.erase(n.current);
    // Partials that arrived after Begin reserved the id again.
    n.reserved.erase(n.current);
    n.phase = Phase::kPost;
    Schedule(now_ + n.post_s, [this, i] { StartSends(i); });
  }

  void StartSends(int i) {
    Node& n = nodes_[i];
    n.outbox.clear();
    n.out_index = 0;
    const std::int64_t id = n.current;
    const DeviceProfile& dev = config_.DeviceFor(i);
    for (const SendSpec& s : programs_[i].sends) {
      Transfer t;
      t.to = s.to[id % s.to.size()];
      t.partial = s.payload == SendSpec::Payload::kPartial;
      t.elems = s.elems;
      t.seconds = TransferSeconds(s.elems, 1, dev, config_.LinkFor(i, t.to));
      n.outbox.push_back(t);
    }
    n.phase = Phase::kSending;
    NextSend(i);
  }

  void NextSend(int i) {
    Node& n = nodes_[i];
    if (n.out_index == n.outbox.size()) {
      Finish(i);
      return;
    }
    const Transfer t = n.outbox[n.out_index];
    if (!HasSlot(t.to, n.current)) {
      // Blocked time does not count as busy.
      n.busy.emplace_back(n.busy_from, now_);
      n.phase = Phase::kBlocked;
      nodes_[t.to].waiters.push_back([this, i] {
        nodes_[i].phase = Phase::kSending;
        nodes_[i].busy_from = now_;
        NextSend(i);
      });
      return;
    }
    if (t.to != kSinkNode) nodes_[t.to].reserved.insert(n.current);
    Count(i, t.to, t.elems);
    const std::int64_t id = n.current;
    Schedule(now_ + t.seconds, [this, i, t, id] {
      Deliver(t.to, id, t.partial);
      ++nodes_[i].out_index;
      NextSend(i);
    });
  }

  void Finish(int i) {
    Node& n = nodes_[i];
    n.busy.emplace_back(n.busy_from, now_);
    double service = 0;
    // Service excludes waiting for partials and blocked sends.
    for (auto it = n.busy.rbegin(); it != n.busy.rend(); ++it) {
      if (it->second < n.started) break;
      service += it->second - std::max(it->first, n.started);
    }
    n.service_total += service;
    ++n.served;
    n.phase = Phase::kIdle;
    n.current = -1;
    n.next_id += programs_[i].replica_count;
    Advance(i);
    TrySource();
  }

  SimReport Report(std::int64_t injected, std::int64_t completed) {
    SimReport r;
    r.seed = config_.seed;
    r.plan_hash = config_.plan_hash;
    r.injected = injected;
    r.completed = completed;
    std::vector<std::pair<double, std::int64_t>> done;
    for (std::int64_t i = 0; i < total_; ++i) {
      if (completed_at_[i] >= 0) done.emplace_back(completed_at_[i], i);
    }
    std::sort(done.begin(), done.end());
    const std::size_t n = done.size();
    const std::size_t warm = n / 10;
    const double t0 = warm == 0 ? 0.0 : done[warm - 1].first;
    const double t1 = n ? done.back().first : 0.0;
    if (n > warm && t1 > t0) r.ips = static_cast<double>(n - warm) / (t1 - t0);
    std::vector<double> lat;
    for (std::size_t k = warm; k < n; ++k) {
      const auto id = done[k].second;
      lat.push_back(done[k].first - injected_at_[id]);
    }
    if (!lat.empty()) {
      std::vector<double> sorted = lat;
      std::sort(sorted.begin(), sorted.end());
      auto pct = [&](double q) {
        const std::size_t idx = static_cast<std::size_t>(
            std::ceil(q * static_cast<double>(sorted.size()))) ;
        return sorted[std::min(sorted.size() - 1, idx == 0 ? 0 : idx - 1)];
      };
      r.latency_p50_s = pct(0.5);
      r.latency_p95_s = pct(0.95);
      double sum = 0;
      for (double v : lat) sum += v;
      r.latency_mean_s = sum / static_cast<double>(lat.size());
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      NodeStats s;
      s.node = static_cast<int>(i);
      s.inferences = node.served;
      s.observed_latency_s =
          node.served ? node.service_total / static_cast<double>(node.served)
                      : 0.0;
      s.queue_occupancy_hist = node.hist;
      if (s.queue_occupancy_hist.empty()) s.queue_occupancy_hist = {0};
      double busy = 0;
      for (const auto& [a, b] : node.busy) {
        busy += std::max(0.0, std::min(b, t1) - std::max(a, t0));
      }
      s.busy_fraction =
          t1 > t0 ? std::clamp(busy / (t1 - t0), 0.0, 1.0) : 0.0;
      r.stats.nodes.push_back(s);
    }
    for (const auto& [edge, elems] : edges_) {
      r.edges.push_back({edge.first, edge.second, elems});
    }
    return r;
  }

  const SimConfig& config_;
  std::vector<NodeProgram> programs_;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> source_elems_;
  std::vector<double> arrivals_;
  std::vector<std::int64_t> backlog_;
  std::int64_t total_ = 0;
  std::int64_t next_inject_ = 0;
  bool source_busy_ = false;
  std::vector<double> injected_at_;
  std::vector<double> completed_at_;
  std::map<std::pair<int, int>, std::int64_t> edges_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
};

}  // namespace

SimReport Simulate(const SimConfig& config) {
  Simulator sim(config);
  return sim.Run();
}

std::vector<EdgeCount> TraceComm(const SimConfig& config) {
  SimConfig one = config;
  one.injection = ClosedInjection{1};
  one.horizon_s.reset();
  one.queue_capacity.reset();
  return Simulate(one).edges;
}

std::vector<SpeedupRow> SpeedupExperiment(
    const ModelGraph& model, const std::vector<SplitMethod>& methods,
    const DeviceProfile& device, const LinkProfile& link,
    std::int64_t inputs) {
  std::size_t anchor = model.layers.size();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (HasWeights(model.layers[l])) {
      anchor = l;
      break;
    }
  }
  if (anchor == model.layers.size()) {
    throw InvalidArgument("model has no layer to split");
  }
  SimConfig base;
  base.graph = model;
  base.default_device = device;
  base.link = link;
  base.injection = ClosedInjection{inputs};
  const std::size_t last = model.layers.size() - 1;
  const std::size_t unit_end = UnitEnd(model, anchor);

  std::vector<SpeedupRow> rows;
  base.assignment.stages = {{0, last, std::nullopt, {0}, -1}};
  const double base_ips = Simulate(base).ips;
  rows.push_back({"none", 1, base_ips, 1.0});
  for (const SplitMethod& m : methods) {
    SimConfig c = base;
    Assignment a;
    const std::int64_t shards = SplitNodeCount(m, model.layers[anchor]);
    int next = 0;
    if (anchor > 0) a.stages.push_back({0, anchor - 1, std::nullopt, {next++}, -1});
    Stage s{anchor, unit_end, m, {}, -1};
    for (std::int64_t j = 0; j < shards; ++j) s.nodes.push_back(next++);
    a.stages.push_back(s);
    if (unit_end < last) {
      a.stages.push_back({unit_end + 1, last, std::nullopt, {next++}, -1});
    }
    // Merge on the first shard, so the split costs no extra node.
    a.stages[anchor > 0 ? 1 : 0].merge_node = a.stages[anchor > 0 ? 1 : 0].nodes[0];
    c.assignment = a;
    const double ips = Simulate(c).ips;
    rows.push_back({FormatSplitMethod(m), static_cast<std::int64_t>(next), ips,
                    base_ips > 0 ? ips / base_ips : 0.0});
  }
  return rows;
}

}  // namespace cdnn
