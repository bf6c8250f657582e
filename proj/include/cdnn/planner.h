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

// Distribution of a model over n identical nodes.
//
// Step 1 splits every layer whose footprint exceeds the node memory, using
// the fewest shards that fit. Step 2 groups the remaining planning units
// (an anchor layer and the light layers after it) into contiguous stages so
// that the slowest node is as fast as possible. Spare nodes then go to
// latency splits of the bottleneck's heaviest layer while that helps.
// Refine feeds observed per-node latencies back into the profile database
// and replans.
//
// Node timing, shared with the simulator: a node's service time is its
// compute (shard, merge, layers; times the swap factor when its footprint
// exceeds memory) plus its sends, which it performs itself one after another.
// Entry nodes also wait for the source to send them the model input, so their
// cycle includes that transfer.

#ifndef CDNN_PLANNER_H_
#define CDNN_PLANNER_H_

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdnn/cost_model.h"
#include "cdnn/model.h"
#include "cdnn/plan.h"
#include "cdnn/splitter.h"
#include "cdnn/stats.h"

namespace cdnn {

// One unit of node compute: a whole layer, one shard of a split layer, or the
// merge of a split layer's shard outputs.
struct WorkItem {
  enum class Kind { kLayer, kShard, kMerge };
  LayerSpec layer;
  Shape input;
  Kind kind = Kind::kLayer;
  std::optional<SplitMethod> method;  // kShard and kMerge
};

struct ProfileKey {
  std::string layer;   // signature plus input shape
  std::string method;  // "none", "output[2]", "merge:output[2]", ...
  std::int64_t factor = 1;
  auto operator<=>(const ProfileKey&) const = default;
};

ProfileKey KeyOf(const WorkItem& item);

// Work counts of an item under the cost model.
struct WorkCounts {
  std::int64_t mults = 0;
  std::int64_t reductions = 0;
  std::int64_t comm_elems = 0;
  std::int64_t weight_elems = 0;
  std::int64_t activation_elems = 0;
  double fixed_s = 0.0;
  std::int64_t fixed_mem_bytes = 0;
};

WorkCounts CountWork(const WorkItem& item);

enum class ProfileSource { kModeled, kRegression, kMeasured };

struct ProfileRecord {
  double latency_s = 0.0;  // compute only, no swap penalty
  std::int64_t mem_bytes = 0;
  std::int64_t activation_bytes = 0;  // part of mem_bytes that is transient
  ProfileSource source = ProfileSource::kModeled;
  int samples = 0;  // measurements averaged into a Measured record
};

// Latency and memory of work items. Records that are not stored are
// synthesized: from a per-kind linear regression over the measured records
// when there are enough of them, otherwise from the cost model on the
// database's device.
class ProfileDB {
 public:
  explicit ProfileDB(const DeviceProfile& device = DeviceProfile{});

  const DeviceProfile& device() const { return device_; }

  ProfileRecord Lookup(const WorkItem& item) const;
  double Latency(const WorkItem& item) const { return Lookup(item).latency_s; }

  // Stores a record as given; Modeled records do not replace Measured ones.
  void Put(const WorkItem& item, const ProfileRecord& record);
  // Averages a measured latency into the item's Measured record.
  void RecordMeasured(const WorkItem& item, double latency_s);

  const std::map<ProfileKey, ProfileRecord>& records() const {
    return records_;
  }

 private:
  ProfileRecord Modeled(const WorkItem& item) const;
  std::optional<double> Regress(const WorkItem& item) const;

  DeviceProfile device_;
  std::map<ProfileKey, ProfileRecord> records_;
  // Measured samples by regression family, for the fit.
  struct Sample {
    WorkCounts counts;
    double latency_s;
    double modeled_s;
  };
  std::map<std::string, std::map<ProfileKey, Sample>> samples_;
};

// What one node of an assignment computes and sends per inference.
struct NodeWork {
  std::vector<WorkItem> shard;  // zero or one item, run first
  std::vector<WorkItem> post;   // merge and plain layers, in order
  std::vector<std::int64_t> send_elems;
  std::int64_t source_elems = 0;  // input pulled from the source, if entry
  int replicas = 1;
};

std::vector<NodeWork> AssignmentWork(const ModelGraph& graph,
                                     const Assignment& assignment);

struct NodeEstimate {
  double shard_s = 0.0;  // swap applied
  double post_s = 0.0;   // swap applied
  double send_s = 0.0;
  double source_s = 0.0;
  std::int64_t footprint_bytes = 0;
  bool swapped = false;
  int replicas = 1;
  double service_s() const { return shard_s + post_s + send_s; }
  double cycle_s() const { return service_s() + source_s; }
  // Time per inference this node's stage contributes to throughput.
  double stage_s() const;
};

// Footprint: summed weights of all items plus the largest activation.
NodeEstimate EstimateNode(const NodeWork& work, const ProfileDB& db,
                          const DeviceProfile& device, const LinkProfile& link);

struct AssignmentEstimate {
  std::vector<NodeEstimate> nodes;
  double max_stage_s = 0.0;
  int bottleneck = 0;
  bool fits = true;  // every footprint within memory
};

AssignmentEstimate EvaluateAssignment(const ModelGraph& graph,
                                      const Assignment& assignment,
                                      const ProfileDB& db,
                                      const DeviceProfile& device,
                                      const LinkProfile& link);

// Contiguous partition of `latencies` into exactly n_groups non-empty runs
// minimizing the largest run sum, as half-open [begin, end) ranges. Among
// optimal partitions the lexicographically largest first group wins.
std::vector<std::pair<std::size_t, std::size_t>> GroupLayers(
    const std::vector<double>& latencies, std::size_t n_groups);

struct SplitChoice {
  SplitMethod method;
  std::int64_t nodes = 0;
  double latency_s = 0.0;  // compute of the critical shard + merge + comm
};

// Estimated stage latency of `layer` under `method`: critical shard compute
// (swap applied if the shard does not fit), merge, and all traffic.
double SplitStageLatency(const LayerSpec& layer, const Shape& input,
                         const SplitMethod& method, const ProfileDB& db,
                         const DeviceProfile& device, const LinkProfile& link);

// Best split of `layer` using between 2 and max_nodes nodes whose shards fit
// in device.mem_bytes. Ties go to fewer nodes, then to output/channel, then
// spatial, then input/filter. Returns nullopt when the layer fits and its
// unsplit latency is within `target_latency_s` (if given), or when no split
// fits.
std::optional<SplitChoice> ChooseSplit(
    const LayerSpec& layer, const Shape& input, std::int64_t max_nodes,
    const ProfileDB& db, const DeviceProfile& device, const LinkProfile& link,
    std::optional<double> target_latency_s = std::nullopt);

struct PlannerOptions {
  LinkProfile link;
  // Fewer nodes are preferred while the slowest stage stays within this
  // fraction of the best achievable.
  double node_saving_tolerance = 0.1;
  // Spend spare nodes on splitting the bottleneck's heaviest layer.
  bool latency_splits = true;
  // Spend spare nodes on replicas of the bottleneck stage.
  bool data_parallel = false;
};

// Throws InvalidArgument when n is below what the mandatory splits need and
// InfeasibleError when a layer cannot be split small enough.
Assignment GenerateDistribution(const ModelGraph& graph, int n,
                                std::int64_t mem_bytes, const ProfileDB& db,
                                const PlannerOptions& options = {});

// Grouping step alone: stage boundaries chosen by exact dynamic programming
// with the given units split as stated (unit index -> method). Exposed for
// the exhaustive search tests.
std::optional<Assignment> GroupWithSplits(
    const ModelGraph& graph, int n, const std::map<std::size_t, SplitMethod>&
                                        splits_by_anchor,
    const ProfileDB& db, const DeviceProfile& device, const LinkProfile& link,
    double node_saving_tolerance);

// Anchor layer index of every planning unit.
std::vector<std::size_t> UnitAnchors(const ModelGraph& graph);

struct RefineResult {
  Assignment assignment;
  std::vector<int> bottlenecks;
  std::vector<int> idle;
  bool changed = false;
};

// Records observed latencies in `db` as Measured entries (each node's gap
// between observed and modeled time is spread over its compute items in
// proportion to their modeled latency) and replans with n nodes.
RefineResult Refine(const ModelGraph& graph, const Assignment& assignment,
                    const PipelineStats& stats, int n, std::int64_t mem_bytes,
                    ProfileDB& db, const PlannerOptions& options = {});

}  // namespace cdnn

#endif  // CDNN_PLANNER_H_
