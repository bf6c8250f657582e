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

#include "cdnn/planner.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cdnn/error.h"

namespace cdnn {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// a is meaningfully smaller than b; guards against rounding noise flipping
// ties between equal-cost choices.
bool Less(double a, double b) {
  if (b == kInf) return a < b;
  return a < b - 1e-9 * std::max(1.0, b);
}

int MethodRank(const SplitMethod& m) {
  if (std::holds_alternative<DenseOutputSplit>(m) ||
      std::holds_alternative<ConvChannelSplit>(m)) {
    return 0;
  }
  if (std::holds_alternative<ConvSpatialSplit>(m)) return 1;
  return 2;
}

// Spatial grids: squarer first, then more rows.
std::pair<std::int64_t, std::int64_t> GridRank(const SplitMethod& m) {
  if (const auto* s = std::get_if<ConvSpatialSplit>(&m)) {
    return {std::abs(s->parts_y - s->parts_x), -s->parts_y};
  }
  return {0, 0};
}

std::string Family(const WorkItem& item) {
  static const char* kKinds[] = {"layer", "shard", "merge"};
  return LayerKindName(item.layer) + "/" +
         kKinds[static_cast<int>(item.kind)];
}

}  // namespace

ProfileKey KeyOf(const WorkItem& item) {
  ProfileKey k;
  k.layer = LayerSignature(item.layer) + " in=" + ShapeToString(item.input);
  if (item.kind == WorkItem::Kind::kLayer || !item.method) {
    k.method = "none";
    return k;
  }
  k.method = FormatSplitMethod(*item.method);
  if (item.kind == WorkItem::Kind::kMerge) k.method = "merge:" + k.method;
  k.factor = SplitNodeCount(*item.method, item.layer);
  return k;
}

WorkCounts CountWork(const WorkItem& item) {
  WorkCounts w;
  const std::int64_t out_elems =
      NumElements(LayerOutputShape(item.layer, item.input));
  switch (item.kind) {
    case WorkItem::Kind::kLayer: {
      const LayerCost c = ComputeLayerCost(item.layer, item.input);
      w.mults = c.mults_per_node;
      w.reductions = c.reductions_per_node;
      w.comm_elems = c.comm_total_elems;
      w.weight_elems = c.weights_per_node;
      w.activation_elems = NumElements(item.input) + out_elems;
      w.fixed_s = c.fixed_compute_s;
      w.fixed_mem_bytes = c.fixed_mem_bytes;
      break;
    }
    case WorkItem::Kind::kShard: {
      const LayerCost c = ComputeLayerCost(item.layer, item.input, item.method);
      w.mults = c.mults_per_node;
      w.reductions = c.reductions_per_node;
      w.comm_elems = c.comm_in_per_node + c.comm_out_per_node;
      w.weight_elems = c.weights_per_node;
      w.activation_elems = c.comm_in_per_node + c.comm_out_per_node;
      break;
    }
    case WorkItem::Kind::kMerge: {
      const LayerCost c = ComputeLayerCost(item.layer, item.input, item.method);
      w.reductions = c.merge_cost;
      w.comm_elems = c.comm_total_elems - c.nodes * c.comm_in_per_node;
      w.activation_elems = c.nodes * c.comm_out_per_node + out_elems;
      break;
    }
  }
  return w;
}

ProfileDB::ProfileDB(const DeviceProfile& device) : device_(device) {}

ProfileRecord ProfileDB::Modeled(const WorkItem& item) const {
  const WorkCounts w = CountWork(item);
  ProfileRecord r;
  r.latency_s = ComputeSeconds(w.mults, w.reductions, device_) + w.fixed_s;
  if (w.fixed_mem_bytes > 0) {
    r.mem_bytes = w.fixed_mem_bytes;
  } else {
    r.activation_bytes = w.activation_elems * device_.bytes_per_element;
    r.mem_bytes =
        w.weight_elems * device_.bytes_per_element + r.activation_bytes;
  }
  r.source = ProfileSource::kModeled;
  return r;
}

std::optional<double> ProfileDB::Regress(const WorkItem& item) const {
  auto fam = samples_.find(Family(item));
  if (fam == samples_.end() || fam->second.empty()) return std::nullopt;
  const auto& samples = fam->second;
  const WorkCounts w = CountWork(item);
  auto features = [](const WorkCounts& c) {
    return std::array<double, 3>{static_cast<double>(c.mults),
                                 static_cast<double>(c.reductions),
                                 static_cast<double>(c.comm_elems)};
  };
  // Linear in the work counts once the samples pin down every coefficient
  // that matters for this family.
  std::vector<int> cols;
  for (int f = 0; f < 3; ++f) {
    for (const auto& [key, s] : samples) {
      if (features(s.counts)[f] != 0) {
        cols.push_back(f);
        break;
      }
    }
  }
  if (!cols.empty() && samples.size() >= 3 &&
      static_cast<int>(samples.size()) >= static_cast<int>(cols.size())) {
    Eigen::MatrixXd a(samples.size(), cols.size());
    Eigen::VectorXd b(samples.size());
    int row = 0;
    for (const auto& [key, s] : samples) {
      const auto x = features(s.counts);
      for (std::size_t c = 0; c < cols.size(); ++c) a(row, c) = x[cols[c]];
      b(row) = s.latency_s;
      ++row;
    }
    // Scale columns so the rank test is not fooled by magnitudes.
    Eigen::VectorXd scale = a.colwise().norm().transpose();
    for (int c = 0; c < a.cols(); ++c) a.col(c) /= scale(c);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a.rows(), a.cols());
    qr.setThreshold(1e-9);
    qr.compute(a);
    if (qr.rank() == a.cols()) {
      const Eigen::VectorXd beta = qr.solve(b);
      const auto x = features(w);
      double pred = 0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        pred += beta(c) / scale(c) * x[cols[c]];
      }
      bool outside = false;
      for (int f = 0; f < 3; ++f) {
        if (x[f] != 0 &&
            std::find(cols.begin(), cols.end(), f) == cols.end()) {
          outside = true;
        }
      }
      if (pred > 0 && !outside) return pred + w.fixed_s;
    }
  }
  // Otherwise scale the modeled latency by the measured/modeled ratio.
  double num = 0, den = 0;
  for (const auto& [key, s] : samples) {
    num += s.latency_s * s.modeled_s;
    den += s.modeled_s * s.modeled_s;
  }
  if (den <= 0) return std::nullopt;
  return num / den * Modeled(item).latency_s;
}

ProfileRecord ProfileDB::Lookup(const WorkItem& item) const {
  auto it = records_.find(KeyOf(item));
  if (it != records_.end()) return it->second;
  ProfileRecord r = Modeled(item);
  if (auto pred = Regress(item)) {
    r.latency_s = *pred;
    r.source = ProfileSource::kRegression;
  }
  return r;
}

void ProfileDB::Put(const WorkItem& item, const ProfileRecord& record) {
  if (!(record.latency_s >= 0) || record.mem_bytes < 0) {
    throw InvalidArgument("profile records need non-negative latency and "
                          "memory");
  }
  const ProfileKey key = KeyOf(item);
  auto it = records_.find(key);
  if (it != records_.end() && it->second.source == ProfileSource::kMeasured &&
      record.source != ProfileSource::kMeasured) {
    return;
  }
  records_[key] = record;
  if (record.source == ProfileSource::kMeasured) {
    samples_[Family(item)][key] = {CountWork(item), record.latency_s,
                                   Modeled(item).latency_s};
  }
}

void ProfileDB::RecordMeasured(const WorkItem& item, double latency_s) {
  if (!(latency_s >= 0)) {
    throw InvalidArgument("measured latency must be non-negative");
  }
  const ProfileKey key = KeyOf(item);
  ProfileRecord r;
  auto it = records_.find(key);
  if (it != records_.end() && it->second.source == ProfileSource::kMeasured) {
    r = it->second;
    r.latency_s = (r.latency_s * r.samples + latency_s) / (r.samples + 1);
    ++r.samples;
  } else {
    r = it != records_.end() ? it->second : Modeled(item);
    r.latency_s = latency_s;
    r.samples = 1;
    r.source = ProfileSource::kMeasured;
  }
  Put(item, r);
}

std::vector<NodeWork> AssignmentWork(const ModelGraph& graph,
                                     const Assignment& assignment) {
  const auto programs = BuildNodePrograms(graph, assignment);
  const auto in_shapes = LayerInputShapes(graph);
  std::vector<NodeWork> out(programs.size());
  for (std::size_t i = 0; i < programs.size(); ++i) {
    const NodeProgram& p = programs[i];
    NodeWork& w = out[i];
    w.replicas = p.replica_count;
    if (p.shard_stage >= 0) {
      const Stage& st = assignment.stages[p.shard_stage];
      w.shard.push_back({graph.layers[st.first_layer],
                         in_shapes[st.first_layer], WorkItem::Kind::kShard,
                         st.split});
      if (p.is_entry()) {
        const SplitPlan plan =
            SplitLayer(graph.layers[st.first_layer], *st.split);
        w.source_elems = SelectorElementCount(plan.shards[p.shard_index].input,
                                              in_shapes[st.first_layer]);
      }
    } else if (p.is_entry()) {
      w.source_elems = NumElements(graph.input_shape);
    }
    if (p.merge_stage >= 0) {
      const Stage& st = assignment.stages[p.merge_stage];
      w.post.push_back({graph.layers[st.first_layer],
                        in_shapes[st.first_layer], WorkItem::Kind::kMerge,
                        st.split});
    }
    for (std::size_t l : p.layers) {
      w.post.push_back(
          {graph.layers[l], in_shapes[l], WorkItem::Kind::kLayer, {}});
    }
    for (const auto& s : p.sends) w.send_elems.push_back(s.elems);
  }
  return out;
}

double NodeEstimate::stage_s() const { return cycle_s() / replicas; }

NodeEstimate EstimateNode(const NodeWork& work, const ProfileDB& db,
                          const DeviceProfile& device,
                          const LinkProfile& link) {
  NodeEstimate e;
  e.replicas = work.replicas;
  std::int64_t weights = 0, act = 0;
  auto add = [&](const WorkItem& item, double& into) {
    const ProfileRecord r = db.Lookup(item);
    into += r.latency_s;
    weights += r.mem_bytes - r.activation_bytes;
    act = std::max(act, r.activation_bytes);
  };
  for (const auto& item : work.shard) add(item, e.shard_s);
  for (const auto& item : work.post) add(item, e.post_s);
  e.footprint_bytes = weights + act;
  if (e.footprint_bytes > device.mem_bytes) {
    e.swapped = true;
    e.shard_s *= device.swap_factor;
    e.post_s *= device.swap_factor;
  }
  for (auto elems : work.send_elems) {
    e.send_s += TransferSeconds(elems, 1, device, link);
  }
  if (work.source_elems > 0) {
    e.source_s = TransferSeconds(work.source_elems, 1, device, link);
  }
  return e;
}

AssignmentEstimate EvaluateAssignment(const ModelGraph& graph,
                                      const Assignment& assignment,
                                      const ProfileDB& db,
                                      const DeviceProfile& device,
                                      const LinkProfile& link) {
  AssignmentEstimate out;
  const auto work = AssignmentWork(graph, assignment);
  for (std::size_t i = 0; i < work.size(); ++i) {
    out.nodes.push_back(EstimateNode(work[i], db, device, link));
    const NodeEstimate& e = out.nodes.back();
    if (e.footprint_bytes > device.mem_bytes) out.fits = false;
    if (e.stage_s() > out.max_stage_s) {
      out.max_stage_s = e.stage_s();
      out.bottleneck = static_cast<int>(i);
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> GroupLayers(
    const std::vector<double>& latencies, std::size_t n_groups) {
  const std::size_t n = latencies.size();
  if (n_groups == 0 || n_groups > n) {
    throw InvalidArgument("cannot group " + std::to_string(n) +
                          " layers into " + std::to_string(n_groups));
  }
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + latencies[i];
  // best[g][i]: optimum for the suffix starting at i split into g groups.
  std::vector<std::vector<double>> best(n_groups + 1,
                                        std::vector<double>(n + 1, kInf));
  std::vector<std::vector<std::size_t>> cut(
      n_groups + 1, std::vector<std::size_t>(n + 1, n));
  best[0][n] = 0.0;
  for (std::size_t g = 1; g <= n_groups; ++g) {
    for (std::size_t i = 0; i + g <= n; ++i) {
      // Longest first group first, so ties keep it.
      for (std::size_t j = n - (g - 1); j > i; --j) {
        const double v =
            std::max(prefix[j] - prefix[i], best[g - 1][j]);
        if (Less(v, best[g][i])) {
          best[g][i] = v;
          cut[g][i] = j;
        }
      }
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  for (std::size_t g = n_groups; g > 0; --g) {
    out.emplace_back(i, cut[g][i]);
    i = cut[g][i];
  }
  return out;
}

double SplitStageLatency(const LayerSpec& layer, const Shape& input,
                         const SplitMethod& method, const ProfileDB& db,
                         const DeviceProfile& device,
                         const LinkProfile& link) {
  const WorkItem shard{layer, input, WorkItem::Kind::kShard, method};
  const WorkItem merge{layer, input, WorkItem::Kind::kMerge, method};
  const ProfileRecord r = db.Lookup(shard);
  double compute = r.latency_s;
  if (r.mem_bytes > device.mem_bytes) compute *= device.swap_factor;
  const LayerCost c = ComputeLayerCost(layer, input, method);
  return compute + db.Latency(merge) +
         TransferSeconds(c.comm_total_elems, c.messages, device, link);
}

namespace {

bool BetterChoice(const SplitChoice& a, const SplitChoice& b) {
  if (Less(a.latency_s, b.latency_s)) return true;
  if (Less(b.latency_s, a.latency_s)) return false;
  if (a.nodes != b.nodes) return a.nodes < b.nodes;
  if (MethodRank(a.method) != MethodRank(b.method)) {
    return MethodRank(a.method) < MethodRank(b.method);
  }
  return GridRank(a.method) < GridRank(b.method);
}

// Best split at exactly m nodes whose shards fit.
std::optional<SplitChoice> BestSplitAt(const LayerSpec& layer,
                                       const Shape& input, std::int64_t m,
                                       const ProfileDB& db,
                                       const DeviceProfile& device,
                                       const LinkProfile& link) {
  std::optional<SplitChoice> best;
  for (const SplitMethod& method : SplitsWithNodeCount(layer, m)) {
    const WorkItem shard{layer, input, WorkItem::Kind::kShard, method};
    if (db.Lookup(shard).mem_bytes > device.mem_bytes) continue;
    SplitChoice c{method, m,
                  SplitStageLatency(layer, input, method, db, device, link)};
    if (!best || BetterChoice(c, *best)) best = c;
  }
  return best;
}

}  // namespace

std::optional<SplitChoice> ChooseSplit(const LayerSpec& layer,
                                       const Shape& input,
                                       std::int64_t max_nodes,
                                       const ProfileDB& db,
                                       const DeviceProfile& device,
                                       const LinkProfile& link,
                                       std::optional<double> target_latency_s) {
  if (!HasWeights(layer)) return std::nullopt;
  const WorkItem whole{layer, input, WorkItem::Kind::kLayer, {}};
  const ProfileRecord r = db.Lookup(whole);
  const bool fits = r.mem_bytes <= device.mem_bytes;
  if (fits && target_latency_s) {
    const std::int64_t io =
        NumElements(input) + NumElements(LayerOutputShape(layer, input));
    const double unsplit = r.latency_s + TransferSeconds(io, 2, device, link);
    if (unsplit <= *target_latency_s) return std::nullopt;
  }
  std::optional<SplitChoice> best;
  for (std::int64_t m = 2; m <= max_nodes; ++m) {
    auto c = BestSplitAt(layer, input, m, db, device, link);
    if (c && (!best || BetterChoice(*c, *best))) best = c;
  }
  return best;
}

std::vector<std::size_t> UnitAnchors(const ModelGraph& graph) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < graph.layers.size(); l = UnitEnd(graph, l) + 1) {
    out.push_back(l);
  }
  return out;
}

namespace {

class GroupingSearch {
 public:
  GroupingSearch(const ModelGraph& graph,
                 const std::map<std::size_t, SplitMethod>& splits,
                 const ProfileDB& db, const DeviceProfile& device,
                 const LinkProfile& link)
      : graph_(graph),
        splits_(splits),
        db_(db),
        device_(device),
        link_(link),
        anchors_(UnitAnchors(graph)) {
    for (const auto& [anchor, method] : splits) {
      if (std::find(anchors_.begin(), anchors_.end(), anchor) ==
          anchors_.end()) {
        throw InvalidArgument("L" + std::to_string(anchor) +
                              " does not start a planning unit");
      }
    }
  }

  std::size_t units() const { return anchors_.size(); }
  bool is_split(std::size_t u) const { return splits_.count(anchors_[u]) > 0; }
  std::int64_t shard_count(std::size_t u) const {
    return SplitNodeCount(splits_.at(anchors_[u]), graph_.layers[anchors_[u]]);
  }
  std::size_t last_layer(std::size_t u) const {
    return UnitEnd(graph_, anchors_[u]);
  }

  // Stage for units [u, v).
  Stage UnitStage(std::size_t u, std::size_t v, int& next_node) const {
    Stage s;
    s.first_layer = anchors_[u];
    s.last_layer = last_layer(v - 1);
    if (v == u + 1 && is_split(u)) {
      s.split = splits_.at(anchors_[u]);
      for (std::int64_t j = 0; j < shard_count(u); ++j) {
        s.nodes.push_back(next_node++);
      }
    } else {
      s.nodes.push_back(next_node++);
    }
    return s;
  }

  // A throwaway assignment that puts units [u, v) in one stage with the
  // neighbours that decide its node's work; returns the estimates of that
  // stage's nodes.
  std::vector<NodeEstimate> InContext(std::size_t u, std::size_t v) const {
    Assignment a;
    int next = 0;
    const std::size_t U = units();
    if (u > 0) {
      if (is_split(u - 1)) {
        if (u - 1 > 0) a.stages.push_back(UnitStage(0, u - 1, next));
        a.stages.push_back(UnitStage(u - 1, u, next));
      } else {
        a.stages.push_back(UnitStage(0, u, next));
      }
    }
    const std::size_t mine = a.stages.size();
    a.stages.push_back(UnitStage(u, v, next));
    if (v < U) {
      if (is_split(v)) {
        a.stages.push_back(UnitStage(v, v + 1, next));
        if (v + 1 < U) a.stages.push_back(UnitStage(v + 1, U, next));
      } else {
        a.stages.push_back(UnitStage(v, U, next));
      }
    }
    PlaceMergeNodes(a);
    const auto work = AssignmentWork(graph_, a);
    std::vector<NodeEstimate> out;
    for (int id : a.stages[mine].nodes) {
      out.push_back(EstimateNode(work[id], db_, device_, link_));
    }
    return out;
  }

  // Slowest node of the stage holding units [u, v); infinite when a plain
  // group does not fit in memory.
  double StageCost(std::size_t u, std::size_t v) {
    auto key = std::make_pair(u, v);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    double cost = 0.0;
    for (const NodeEstimate& e : InContext(u, v)) {
      cost = std::max(cost, e.stage_s());
      if (!is_split(u) && e.footprint_bytes > device_.mem_bytes) cost = kInf;
    }
    cache_[key] = cost;
    return cost;
  }

  std::optional<Assignment> Run(int n, double tolerance) {
    const std::size_t U = units();
    // best[u][k]: slowest stage so far with units [0, u) placed on k nodes.
    std::vector<std::vector<double>> best(U + 1,
                                          std::vector<double>(n + 1, kInf));
    std::vector<std::vector<std::pair<std::size_t, int>>> from(
        U + 1, std::vector<std::pair<std::size_t, int>>(n + 1, {0, -1}));
    best[0][0] = 0.0;
    for (std::size_t u = 0; u < U; ++u) {
      for (int k = 0; k <= n; ++k) {
        if (best[u][k] == kInf) continue;
        auto relax = [&](std::size_t v, int nodes) {
          if (k + nodes > n) return;
          const double c = std::max(best[u][k], StageCost(u, v));
          if (Less(c, best[v][k + nodes])) {
            best[v][k + nodes] = c;
            from[v][k + nodes] = {u, k};
          }
        };
        if (is_split(u)) {
          relax(u + 1, static_cast<int>(shard_count(u)));
          continue;
        }
        for (std::size_t v = u + 1; v <= U && !is_split(v - 1); ++v) {
          relax(v, 1);
        }
      }
    }
    double opt = kInf;
    for (int k = 1; k <= n; ++k) opt = std::min(opt, best[U][k]);
    if (opt == kInf) return std::nullopt;
    int k = 1;
    while (!(best[U][k] <= opt * (1 + tolerance) + 1e-12)) ++k;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t v = U; v > 0;) {
      const auto [u, pk] = from[v][k];
      ranges.emplace_back(u, v);
      v = u;
      k = pk;
    }
    std::reverse(ranges.begin(), ranges.end());
    Assignment a;
    int next = 0;
    for (const auto& [u, v] : ranges) {
      a.stages.push_back(UnitStage(u, v, next));
    }
    PlaceMergeNodes(a);
    return a;
  }

 private:
  const ModelGraph& graph_;
  const std::map<std::size_t, SplitMethod>& splits_;
  const ProfileDB& db_;
  const DeviceProfile& device_;
  const LinkProfile& link_;
  std::vector<std::size_t> anchors_;
  std::map<std::pair<std::size_t, std::size_t>, double> cache_;
};

// Units hosted (as plain layers) by `node`, with the layer that anchors them.
std::vector<std::size_t> PlainAnchorsOn(const ModelGraph& graph,
                                        const Assignment& a, int node) {
  std::vector<std::size_t> out;
  const auto anchors = UnitAnchors(graph);
  for (std::size_t k = 0; k < a.stages.size(); ++k) {
    const Stage& s = a.stages[k];
    if (s.split) continue;
    if (std::find(s.nodes.begin(), s.nodes.end(), node) == s.nodes.end()) {
      continue;
    }
    for (std::size_t anchor : anchors) {
      if (anchor >= s.first_layer && anchor <= s.last_layer &&
          HasWeights(graph.layers[anchor])) {
        out.push_back(anchor);
      }
    }
  }
  return out;
}

}  // namespace

std::optional<Assignment> GroupWithSplits(
    const ModelGraph& graph, int n,
    const std::map<std::size_t, SplitMethod>& splits_by_anchor,
    const ProfileDB& db, const DeviceProfile& device, const LinkProfile& link,
    double node_saving_tolerance) {
  GroupingSearch search(graph, splits_by_anchor, db, device, link);
  return search.Run(n, node_saving_tolerance);
}

Assignment GenerateDistribution(const ModelGraph& graph, int n,
                                std::int64_t mem_bytes, const ProfileDB& db,
                                const PlannerOptions& options) {
  if (n < 1) throw InvalidArgument("need at least one node");
  if (graph.layers.empty()) throw InvalidArgument("model has no layers");
  DeviceProfile device = db.device();
  device.mem_bytes = mem_bytes;
  const LinkProfile& link = options.link;
  const auto in_shapes = LayerInputShapes(graph);

  // Step 1: layers that do not fit are split into the fewest shards that do.
  std::map<std::size_t, SplitMethod> splits;
  std::int64_t mandatory_nodes = 0;
  for (std::size_t anchor : UnitAnchors(graph)) {
    const LayerSpec& layer = graph.layers[anchor];
    const WorkItem whole{layer, in_shapes[anchor], WorkItem::Kind::kLayer, {}};
    if (db.Lookup(whole).mem_bytes <= mem_bytes) continue;
    if (!HasWeights(layer)) {
      throw InfeasibleError("L" + std::to_string(anchor) + " (" +
                            LayerKindName(layer) +
                            ") does not fit in memory and cannot be split");
    }
    std::optional<SplitChoice> choice;
    constexpr std::int64_t kMaxShards = 4096;
    for (std::int64_t m = 2; m <= kMaxShards && !choice; ++m) {
      choice = BestSplitAt(layer, in_shapes[anchor], m, db, device, link);
    }
    if (!choice) {
      throw InfeasibleError("L" + std::to_string(anchor) +
                            ": no split has shards that fit in " +
                            std::to_string(mem_bytes) + " bytes");
    }
    splits[anchor] = choice->method;
    mandatory_nodes += choice->nodes;
  }
  if (mandatory_nodes > n) {
    throw InvalidArgument("the layers that must be split need " +
                          std::to_string(mandatory_nodes) +
                          " nodes, only " + std::to_string(n) + " available");
  }

  // Step 2: group the rest.
  auto grouped = GroupWithSplits(graph, n, splits, db, device, link,
                                 options.node_saving_tolerance);
  if (!grouped) {
    throw InvalidArgument("no grouping of the model fits in " +
                          std::to_string(n) + " nodes of " +
                          std::to_string(mem_bytes) + " bytes");
  }
  Assignment best = *grouped;
  AssignmentEstimate est = EvaluateAssignment(graph, best, db, device, link);

  // Spare nodes: split the bottleneck's heaviest layer while that helps.
  while (options.latency_splits && best.NodeCount() < n) {
    auto anchors = PlainAnchorsOn(graph, best, est.bottleneck);
    if (anchors.empty()) break;
    std::stable_sort(anchors.begin(), anchors.end(),
                     [&](std::size_t x, std::size_t y) {
                       return db.Latency({graph.layers[x], in_shapes[x],
                                          WorkItem::Kind::kLayer, {}}) >
                              db.Latency({graph.layers[y], in_shapes[y],
                                          WorkItem::Kind::kLayer, {}});
                     });
    const std::size_t anchor = anchors.front();
    std::optional<Assignment> improved;
    double improved_s = est.max_stage_s;
    const int spare = n - best.NodeCount();
    for (std::int64_t m = 2; m <= spare + 1; ++m) {
      auto choice = BestSplitAt(graph.layers[anchor], in_shapes[anchor], m,
                                db, device, link);
      if (!choice) continue;
      auto trial_splits = splits;
      trial_splits[anchor] = choice->method;
      auto trial = GroupWithSplits(graph, n, trial_splits, db, device, link,
                                   options.node_saving_tolerance);
      if (!trial) continue;
      const double s =
          EvaluateAssignment(graph, *trial, db, device, link).max_stage_s;
      if (Less(s, improved_s)) {
        improved_s = s;
        improved = trial;
        splits = trial_splits;
      }
    }
    if (!improved) break;
    best = *improved;
    est = EvaluateAssignment(graph, best, db, device, link);
  }

  // Spare nodes: replicate the bottleneck stage while that helps.
  while (options.data_parallel && best.NodeCount() < n) {
    Assignment trial = best;
    bool replicated = false;
    for (std::size_t k = 0; k < trial.stages.size(); ++k) {
      Stage& s = trial.stages[k];
      if (s.split || std::find(s.nodes.begin(), s.nodes.end(),
                               est.bottleneck) == s.nodes.end()) {
        continue;
      }
      if (est.nodes[est.bottleneck].footprint_bytes > mem_bytes) break;
      s.nodes.push_back(trial.NodeCount());
      // A replicated stage cannot also host the previous merge.
      if (k > 0 && trial.stages[k - 1].split) {
        trial.stages[k - 1].merge_node = -1;
      }
      replicated = true;
      break;
    }
    if (!replicated) break;
    PlaceMergeNodes(trial);
    try {
      ValidateAssignment(graph, trial);
    } catch (const InvalidArgument&) {
      break;
    }
    const auto trial_est = EvaluateAssignment(graph, trial, db, device, link);
    if (!Less(trial_est.max_stage_s, est.max_stage_s)) break;
    best = trial;
    est = trial_est;
  }
  return best;
}

RefineResult Refine(const ModelGraph& graph, const Assignment& assignment,
                    const PipelineStats& stats, int n, std::int64_t mem_bytes,
                    ProfileDB& db, const PlannerOptions& options) {
  DeviceProfile device = db.device();
  device.mem_bytes = mem_bytes;
  const auto work = AssignmentWork(graph, assignment);
  RefineResult result;

  // Measured compute per item, from each node's observed service time.
  std::vector<std::pair<WorkItem, double>> measured;
  double mean = 0;
  int reporting = 0;
  for (const NodeStats& s : stats.nodes) {
    if (s.node < 0 || static_cast<std::size_t>(s.node) >= work.size()) {
      throw InvalidArgument("stats for node " + std::to_string(s.node) +
                            " which is not in the assignment");
    }
    if (s.inferences == 0) continue;
    mean += s.observed_latency_s;
    ++reporting;
    const NodeWork& w = work[s.node];
    const NodeEstimate e = EstimateNode(w, db, device, options.link);
    std::vector<WorkItem> items = w.shard;
    items.insert(items.end(), w.post.begin(), w.post.end());
    double modeled = 0;
    for (const auto& item : items) modeled += db.Latency(item);
    if (items.empty() || modeled <= 0) continue;
    const double compute = std::max(0.0, s.observed_latency_s - e.send_s) /
                           (e.swapped ? device.swap_factor : 1.0);
    for (const auto& item : items) {
      measured.emplace_back(item, db.Latency(item) * compute / modeled);
    }
  }
  for (const auto& [item, latency] : measured) db.RecordMeasured(item, latency);

  if (reporting > 0) mean /= reporting;
  for (const NodeStats& s : stats.nodes) {
    if (s.inferences == 0) continue;
    if (HistogramMedian(s.queue_occupancy_hist) >= 1 &&
        s.observed_latency_s >= 1.1 * mean) {
      result.bottlenecks.push_back(s.node);
    }
    if (s.busy_fraction < 0.1) result.idle.push_back(s.node);
  }
  result.assignment = GenerateDistribution(graph, n, mem_bytes, db, options);
  result.changed = !(result.assignment == assignment);
  return result;
}

}  // namespace cdnn
