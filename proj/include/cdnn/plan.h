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

// Assignments of layers to nodes, the per-node programs derived from them,
// and the plan file that carries both to every node.
//
// A pipeline is a list of stages in layer order. A plain stage runs a
// contiguous layer range on one node (or on several replicas, each taking
// every r-th inference). A split stage runs the shards of one layer on
// several nodes; its merge node reassembles the shard outputs and runs the
// activation/pooling layers that trail the split layer. The merge node is
// the node of the following plain stage when there is one, which saves a
// hop; otherwise it is the first shard node.
//
// Plan file:
//
//   plan 1
//   seed 42
//   link bandwidth=94100000 latency=0.0004
//   device default mult=5e8 reduce=5e8 mem=1073741824 swap=4
//   node 0 127.0.0.1:7000 : L0, L1, L2
//   node 1 127.0.0.1:7001 : L3.output[2]#0
//   node 2 127.0.0.1:7002 : L3.output[2]#1
//   node 3 127.0.0.1:7003 : L3.merge, L4, L5
//   model-begin
//   <model description>
//   model-end

#ifndef CDNN_PLAN_H_
#define CDNN_PLAN_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdnn/cost_model.h"
#include "cdnn/model.h"
#include "cdnn/splitter.h"

namespace cdnn {

inline constexpr int kSourceNode = -1;
inline constexpr int kSinkNode = -2;

struct Stage {
  std::size_t first_layer = 0;
  std::size_t last_layer = 0;  // inclusive
  std::optional<SplitMethod> split;  // applies to first_layer
  // Replicas of a plain stage, or the shard nodes of a split stage in shard
  // order.
  std::vector<int> nodes;
  int merge_node = -1;  // split stages only
  bool operator==(const Stage&) const = default;
};

struct Assignment {
  std::vector<Stage> stages;
  int NodeCount() const;
  bool operator==(const Assignment&) const = default;
};

// Last layer of the planning unit that starts at `anchor`: the anchor plus
// the activation, pooling and flatten layers that follow it.
std::size_t UnitEnd(const ModelGraph& graph, std::size_t anchor);

// Fills in merge nodes by the placement rule above.
void PlaceMergeNodes(Assignment& assignment);

// Checks coverage (every layer exactly once, in order), shard completeness,
// node ids 0..N-1 each in one stage, and that split stages start at a
// splittable layer. Throws InvalidArgument.
void ValidateAssignment(const ModelGraph& graph, const Assignment& assignment);

struct SendSpec {
  enum class Payload { kFull, kShardInput, kPartial };
  // Receivers; inference i goes to to[i % to.size()].
  std::vector<int> to;
  Payload payload = Payload::kFull;
  int stage = -1;  // split stage for kShardInput and kPartial
  int shard = -1;
  std::int64_t elems = 0;
  std::string tag;
};

// What one node does for each inference it handles, in order: take the
// primary input, run its shard (if any), gather partials and merge (if it is
// a merge node), run `layers`, then perform `sends`.
struct NodeProgram {
  int node = 0;
  // The node handles inferences with id % replica_count == replica_index.
  int replica_index = 0;
  int replica_count = 1;
  // Producer of the primary input for inference i: primary_from[i % size].
  // Empty for nodes whose input arrives only as partials.
  std::vector<int> primary_from;
  int shard_stage = -1;
  int shard_index = -1;
  int merge_stage = -1;
  std::vector<int> gather_from;  // shard nodes in shard order
  std::vector<std::size_t> layers;
  std::vector<SendSpec> sends;
  bool is_entry() const;
  bool is_exit() const;
};

// Elements a shard input selector picks out of an input of `input` shape.
std::int64_t SelectorElementCount(const InputSelector& selector,
                                  const Shape& input);

std::vector<NodeProgram> BuildNodePrograms(const ModelGraph& graph,
                                           const Assignment& assignment);

// Task descriptors of one node in plan-file syntax.
std::vector<std::string> NodeTasks(const ModelGraph& graph,
                                   const Assignment& assignment, int node);

struct PlanFile {
  std::uint64_t seed = 0;
  LinkProfile link;
  DeviceProfile default_device;
  std::map<int, DeviceProfile> devices;  // per-node overrides
  std::vector<std::string> addresses;    // indexed by node id
  ModelGraph graph;
  Assignment assignment;

  const DeviceProfile& DeviceFor(int node) const;
};

std::string FormatPlan(const PlanFile& plan);
PlanFile ParsePlan(std::string_view text);
PlanFile LoadPlan(const std::string& path);
// FNV-1a of the canonical text; identical plans hash identically.
std::uint64_t PlanHash(const PlanFile& plan);
std::string HashToHex(std::uint64_t hash);

// Device and link profiles alone, as `link` and `device` lines in plan-file
// syntax.
struct Profiles {
  LinkProfile link;
  DeviceProfile default_device;
  std::map<int, DeviceProfile> devices;
};
Profiles ParseProfiles(std::string_view text);
Profiles LoadProfiles(const std::string& path);

// Addresses 127.0.0.1:<base_port + i>.
std::vector<std::string> LocalAddresses(int count, int base_port);

}  // namespace cdnn

#endif  // CDNN_PLAN_H_
