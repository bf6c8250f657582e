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

// Per-node pipeline statistics, shared by the simulator and the socket
// executor, and the simulator's report. Both serialize to JSON with one
// schema:
//
//   {"node": 2, "observed_latency_s": 0.5, "busy_fraction": 0.93,
//    "inferences": 20, "queue_occupancy_hist": [3, 12, 5]}
//
// queue_occupancy_hist[d] counts the samples that saw d inputs waiting.

#ifndef CDNN_STATS_H_
#define CDNN_STATS_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cdnn {

struct NodeStats {
  int node = 0;
  double observed_latency_s = 0.0;  // mean service time per inference
  std::vector<std::int64_t> queue_occupancy_hist;
  double busy_fraction = 0.0;
  std::int64_t inferences = 0;
  bool operator==(const NodeStats&) const = default;
};

struct PipelineStats {
  std::vector<NodeStats> nodes;  // ascending node id
  bool operator==(const PipelineStats&) const = default;
};

// Median queue depth of a histogram; 0 for an empty one.
std::int64_t HistogramMedian(const std::vector<std::int64_t>& hist);

struct EdgeCount {
  int from = 0;  // kSourceNode for the injector
  int to = 0;    // kSinkNode for the collector
  std::int64_t elems = 0;
  bool operator==(const EdgeCount&) const = default;
};

struct SimReport {
  std::uint64_t seed = 0;
  std::string plan_hash;
  double ips = 0.0;
  double latency_p50_s = 0.0;
  double latency_p95_s = 0.0;
  double latency_mean_s = 0.0;
  std::int64_t injected = 0;
  std::int64_t completed = 0;
  PipelineStats stats;
  std::vector<EdgeCount> edges;  // elements per edge over the whole run
  bool operator==(const SimReport&) const = default;
};

std::string NodeStatsToJson(const NodeStats& stats);
NodeStats NodeStatsFromJson(std::string_view text);
std::string PipelineStatsToJson(const PipelineStats& stats);
PipelineStats PipelineStatsFromJson(std::string_view text);
std::string SimReportToJson(const SimReport& report);
SimReport SimReportFromJson(std::string_view text);

// Tidy CSV, one observation per row: metric,node,value.
std::string SimReportToCsv(const SimReport& report);

}  // namespace cdnn

#endif  // CDNN_STATS_H_
