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

// Discrete-event simulation of an assignment running on profiled nodes.
//
// Each node handles its inferences in id order: it takes the primary input,
// computes its shard, waits for the partials it merges, computes its layers,
// then transmits each output itself (store-and-forward; the node is busy for
// bytes/bandwidth + latency per message). Compute times come from
// EstimateNode, so the simulator and the planner agree on what a node costs.
//
// Closed injection is pull-based: the source sends input i+1 once the nodes
// that take it are idle with nothing queued. Open injection draws Poisson
// arrivals from the seed and sends them as soon as the source is free.

#ifndef CDNN_PIPESIM_H_
#define CDNN_PIPESIM_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cdnn/cost_model.h"
#include "cdnn/model.h"
#include "cdnn/plan.h"
#include "cdnn/planner.h"
#include "cdnn/stats.h"

namespace cdnn {

struct ClosedInjection {
  std::int64_t inputs = 100;
};

struct OpenInjection {
  double rate_hz = 1.0;
  double duration_s = 100.0;
};

using Injection = std::variant<ClosedInjection, OpenInjection>;

struct SimConfig {
  ModelGraph graph;
  Assignment assignment;
  DeviceProfile default_device;
  std::map<int, DeviceProfile> devices;
  LinkProfile link;
  // Per directed edge (sender, receiver) overrides of `link`.
  std::map<std::pair<int, int>, LinkProfile> edge_links;
  Injection injection = ClosedInjection{};
  // Inferences a node may have queued (arrived or in transit) before senders
  // block. Unbounded when empty.
  std::optional<std::int64_t> queue_capacity;
  std::uint64_t seed = 0;
  // Stop processing events after this time; unfinished inferences are
  // reported as in flight.
  std::optional<double> horizon_s;
  // Compute latencies; each node's own device model when null.
  const ProfileDB* truth = nullptr;
  std::string plan_hash;

  const DeviceProfile& DeviceFor(int node) const;
  const LinkProfile& LinkFor(int from, int to) const;
};

SimConfig ConfigFromPlan(const PlanFile& plan, const Injection& injection);

// Throws InvalidArgument for bad configurations and Error if the simulation
// deadlocks.
SimReport Simulate(const SimConfig& config);

// Elements moved on every edge for a single inference.
std::vector<EdgeCount> TraceComm(const SimConfig& config);

struct SpeedupRow {
  std::string label;  // "none" or the split method
  std::int64_t nodes = 1;
  double ips = 0.0;
  double speedup = 1.0;  // against the single-node run
};

// Runs `model` on one node and then with its first weighted layer split by
// each method (merged on the first shard), `inputs` closed-loop inferences
// each. Rows start with the single-node baseline.
std::vector<SpeedupRow> SpeedupExperiment(
    const ModelGraph& model, const std::vector<SplitMethod>& methods,
    const DeviceProfile& device, const LinkProfile& link,
    std::int64_t inputs = 50);

}  // namespace cdnn

#endif  // CDNN_PIPESIM_H_
