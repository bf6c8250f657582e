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

#include "cdnn/stats.h"

#include <sstream>

#include "cdnn/error.h"
#include "cdnn/text_util.h"
#include "json.hpp"

namespace cdnn {
namespace {

using nlohmann::json;

json ToJson(const NodeStats& s) {
  return json{{"node", s.node},
              {"observed_latency_s", s.observed_latency_s},
              {"busy_fraction", s.busy_fraction},
              {"inferences", s.inferences},
              {"queue_occupancy_hist", s.queue_occupancy_hist}};
}

NodeStats NodeFromJson(const json& j) {
  NodeStats s;
  s.node = j.at("node").get<int>();
  s.observed_latency_s = j.at("observed_latency_s").get<double>();
  s.busy_fraction = j.at("busy_fraction").get<double>();
  s.inferences = j.at("inferences").get<std::int64_t>();
  s.queue_occupancy_hist =
      j.at("queue_occupancy_hist").get<std::vector<std::int64_t>>();
  if (s.busy_fraction < 0 || s.busy_fraction > 1) {
    throw ParseError("busy_fraction outside [0, 1]");
  }
  for (auto c : s.queue_occupancy_hist) {
    if (c < 0) throw ParseError("negative histogram count");
  }
  return s;
}

json ToJson(const PipelineStats& s) {
  json nodes = json::array();
  for (const auto& n : s.nodes) nodes.push_back(ToJson(n));
  return json{{"nodes", nodes}};
}

PipelineStats PipelineFromJson(const json& j) {
  PipelineStats s;
  for (const auto& n : j.at("nodes")) s.nodes.push_back(NodeFromJson(n));
  return s;
}

template <class F>
auto Parse(std::string_view text, F f) {
  try {
    return f(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad stats JSON: ") + e.what());
  }
}

}  // namespace

std::int64_t HistogramMedian(const std::vector<std::int64_t>& hist) {
  std::int64_t total = 0;
  for (auto c : hist) total += c;
  if (total == 0) return 0;
  std::int64_t seen = 0;
  for (std::size_t d = 0; d < hist.size(); ++d) {
    seen += hist[d];
    if (2 * seen >= total) return static_cast<std::int64_t>(d);
  }
  return static_cast<std::int64_t>(hist.size()) - 1;
}

std::string NodeStatsToJson(const NodeStats& stats) {
  return ToJson(stats).dump();
}

NodeStats NodeStatsFromJson(std::string_view text) {
  return Parse(text, NodeFromJson);
}

std::string PipelineStatsToJson(const PipelineStats& stats) {
  return ToJson(stats).dump(2);
}

PipelineStats PipelineStatsFromJson(std::string_view text) {
  return Parse(text, PipelineFromJson);
}

std::string SimReportToJson(const SimReport& r) {
  json edges = json::array();
  for (const auto& e : r.edges) {
    edges.push_back(json{{"from", e.from}, {"to", e.to}, {"elems", e.elems}});
  }
  json j{{"seed", r.seed},
         {"plan_hash", r.plan_hash},
         {"ips", r.ips},
         {"latency_p50_s", r.latency_p50_s},
         {"latency_p95_s", r.latency_p95_s},
         {"latency_mean_s", r.latency_mean_s},
         {"injected", r.injected},
         {"completed", r.completed},
         {"nodes", ToJson(r.stats).at("nodes")},
         {"edges", edges}};
  return j.dump(2);
}

SimReport SimReportFromJson(std::string_view text) {
  return Parse(text, [](const json& j) {
    SimReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.plan_hash = j.at("plan_hash").get<std::string>();
    r.ips = j.at("ips").get<double>();
    r.latency_p50_s = j.at("latency_p50_s").get<double>();
    r.latency_p95_s = j.at("latency_p95_s").get<double>();
    r.latency_mean_s = j.at("latency_mean_s").get<double>();
    r.injected = j.at("injected").get<std::int64_t>();
    r.completed = j.at("completed").get<std::int64_t>();
    r.stats = PipelineFromJson(j);
    for (const auto& e : j.at("edges")) {
      r.edges.push_back({e.at("from").get<int>(), e.at("to").get<int>(),
                         e.at("elems").get<std::int64_t>()});
    }
    return r;
  });
}

std::string SimReportToCsv(const SimReport& r) {
  std::ostringstream os;
  os << "metric,node,value\n";
  os << "ips,," << FormatDouble(r.ips) << "\n";
  os << "latency_p50_s,," << FormatDouble(r.latency_p50_s) << "\n";
  os << "latency_p95_s,," << FormatDouble(r.latency_p95_s) << "\n";
  os << "latency_mean_s,," << FormatDouble(r.latency_mean_s) << "\n";
  os << "completed,," << r.completed << "\n";
  for (const auto& n : r.stats.nodes) {
    os << "busy_fraction," << n.node << "," << FormatDouble(n.busy_fraction)
       << "\n";
    os << "observed_latency_s," << n.node << ","
       << FormatDouble(n.observed_latency_s) << "\n";
    os << "queue_median," << n.node << ","
       << HistogramMedian(n.queue_occupancy_hist) << "\n";
  }
  for (const auto& e : r.edges) {
    os << "edge_elems," << e.from << "->" << e.to << "," << e.elems << "\n";
  }
  return os.str();
}

}  // namespace cdnn
