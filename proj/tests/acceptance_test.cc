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

// Acceptance checks, one per criterion. Prints "AC<n> PASS|FAIL detail" and
// exits nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "cdnn/cost_model.h"
#include "cdnn/error.h"
#include "cdnn/model.h"
#include "cdnn/netexec.h"
#include "cdnn/ops.h"
#include "cdnn/pipesim.h"
#include "cdnn/plan.h"
#include "cdnn/planner.h"
#include "cdnn/splitter.h"
#include "cdnn/wire.h"

namespace cdnn {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Timer {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

std::string Num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

LinkProfile FreeLink() { return LinkProfile{1e18, 0.0}; }

std::int64_t Pick(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

Conv2DLayer RandomConv(std::mt19937_64& rng) {
  static constexpr std::int64_t kKernels[] = {1, 3, 5};
  Conv2DLayer c;
  c.h_in = Pick(rng, 4, 32);
  c.w_in = Pick(rng, 4, 32);
  c.c_in = Pick(rng, 1, 16);
  c.filters = Pick(rng, 1, 16);
  c.kernel = kKernels[rng() % 3];
  c.has_bias = rng() % 2;
  return c;
}

// AC1 ----------------------------------------------------------------------

Outcome SplitEquivalence() {
  constexpr int kConfigs = 50;
  Timer timer;
  std::mt19937_64 rng(1);
  const char* names[] = {"output", "input", "channel", "spatial", "filter"};
  double worst[5] = {};
  for (int t = 0; t < kConfigs; ++t) {
    const std::uint64_t seed = 1000 + t;
    const std::optional<ActivationKind> act =
        t % 3 == 0 ? std::nullopt
                   : std::optional(t % 3 == 1 ? ActivationKind::kReLU
                                              : ActivationKind::kSigmoid);
    DenseLayer d{Pick(rng, 3, 64), Pick(rng, 3, 64), t % 2 == 0};
    worst[0] = std::max(
        worst[0], VerifySplit(d, DenseOutputSplit{Pick(rng, 2, d.output_dim)},
                              1, seed, act));
    d = DenseLayer{Pick(rng, 3, 64), Pick(rng, 3, 64), t % 2 == 1};
    worst[1] = std::max(
        worst[1], VerifySplit(d, DenseInputSplit{Pick(rng, 2, d.input_dim)},
                              1, seed, act));
    auto c = RandomConv(rng);
    worst[2] = std::max(
        worst[2], VerifySplit(c, ConvChannelSplit{Pick(rng, 1, c.filters)}, 1,
                              seed, act));
    c = RandomConv(rng);
    ConvSpatialSplit sp{Pick(rng, 1, 4), Pick(rng, 1, 4)};
    if (sp.parts_y * sp.parts_x == 1) sp.parts_x = 2;
    worst[3] = std::max(worst[3], VerifySplit(c, sp, 1, seed, act));
    c = RandomConv(rng);
    worst[4] = std::max(
        worst[4], VerifySplit(c, ConvFilterSplit{Pick(rng, 1, c.c_in)}, 1,
                              seed, act));
  }
  const double secs = timer.Seconds();
  Outcome o;
  o.detail = std::to_string(kConfigs) + " configs/method";
  for (int m = 0; m < 5; ++m) {
    o.detail += std::string(" ") + names[m] + "=" + Num(worst[m]);
    if (!(worst[m] <= 1e-4)) o.pass = false;
  }
  o.detail += " time=" + Num(secs) + "s";
  if (secs >= 60) o.pass = false;
  return o;
}

// AC2 ----------------------------------------------------------------------

// A split layer on shard nodes 0..s-1 feeding a merge node s.
SimConfig SplitConfig(const LayerSpec& layer, const Shape& input,
                      const SplitMethod& m) {
  SimConfig c;
  c.graph.input_shape = input;
  c.graph.layers = {layer, OpaqueLayer{0.0, 1}};
  Stage s{0, 0, m, {}, -1};
  const auto shards = SplitNodeCount(m, layer);
  for (int j = 0; j < shards; ++j) s.nodes.push_back(j);
  const int merge = static_cast<int>(shards);
  s.merge_node = merge;
  c.assignment.stages = {s, {1, 1, std::nullopt, {merge}, -1}};
  c.link = FreeLink();
  return c;
}

struct Traffic {
  std::int64_t total = 0;     // every edge touching a shard node
  std::int64_t inbound = 0;   // edges into shard nodes
};

Traffic ShardTraffic(const SimConfig& c) {
  const auto& shards = c.assignment.stages[0].nodes;
  auto is_shard = [&](int n) {
    return std::find(shards.begin(), shards.end(), n) != shards.end();
  };
  Traffic t;
  for (const auto& e : TraceComm(c)) {
    if (is_shard(e.to) || is_shard(e.from)) t.total += e.elems;
    if (is_shard(e.to)) t.inbound += e.elems;
  }
  return t;
}

Shape ConvInput(const Conv2DLayer& c) { return {c.h_in, c.w_in, c.c_in}; }

Outcome CostMatchesTrace() {
  constexpr int kConfigs = 20;
  std::mt19937_64 rng(2);
  int mismatches = 0;
  int checked = 0;
  std::string first;
  auto check = [&](const std::string& what, std::int64_t trace,
                   std::int64_t model) {
    ++checked;
    if (trace != model) {
      if (mismatches++ == 0) {
        first = what + " trace=" + std::to_string(trace) +
                " model=" + std::to_string(model);
      }
    }
  };
  for (int t = 0; t < kConfigs; ++t) {
    DenseLayer d{Pick(rng, 3, 64), Pick(rng, 3, 64), t % 2 == 0};
    const SplitMethod out = DenseOutputSplit{Pick(rng, 2, d.output_dim)};
    check("output", ShardTraffic(SplitConfig(d, {d.input_dim}, out)).total,
          ComputeLayerCost(d, out).comm_total_elems);
    const SplitMethod in = DenseInputSplit{Pick(rng, 2, d.input_dim)};
    check("input", ShardTraffic(SplitConfig(d, {d.input_dim}, in)).total,
          ComputeLayerCost(d, in).comm_total_elems);
    auto c = RandomConv(rng);
    const SplitMethod ch = ConvChannelSplit{Pick(rng, 1, c.filters)};
    if (SplitNodeCount(ch, c) >= 2) {
      check("channel", ShardTraffic(SplitConfig(c, ConvInput(c), ch)).total,
            ComputeLayerCost(c, ch).comm_total_elems);
    }
    c = RandomConv(rng);
    const SplitMethod fl = ConvFilterSplit{Pick(rng, 1, c.c_in)};
    if (SplitNodeCount(fl, c) >= 2) {
      check("filter", ShardTraffic(SplitConfig(c, ConvInput(c), fl)).total,
            ComputeLayerCost(c, fl).comm_total_elems);
    }
    c = RandomConv(rng);
    ConvSpatialSplit sp{Pick(rng, 1, 4), Pick(rng, 1, 4)};
    if (sp.parts_y * sp.parts_x == 1) sp.parts_y = 2;
    const auto tr = ShardTraffic(SplitConfig(c, ConvInput(c), sp));
    check("spatial", tr.total, ComputeLayerCost(c, sp).comm_total_elems);
    check("spatial-halo", tr.inbound,
          SpatialInputElemsExact(c.h_in, c.w_in, c.c_in, c.kernel,
                                 sp.parts_y, sp.parts_x));
  }

  // Closed form against the exact per-node mean on 128x128 inputs.
  double worst_rel = 0;
  std::string worst_at;
  int over = 0, cases = 0;
  for (std::int64_t ch : {1, 3, 64}) {
    for (std::int64_t d = 1; d <= 3; ++d) {
      for (std::int64_t f : {1, 3, 5, 7, 9}) {
        const double exact =
            static_cast<double>(SpatialInputElemsExact(128, 128, ch, f, d, d)) /
            static_cast<double>(d * d);
        const double closed = SpatialInputElemsPaper(128, 128, ch, f, d);
        const double rel = std::abs(closed - exact) / exact;
        ++cases;
        if (rel > 0.10) ++over;
        if (rel > worst_rel) {
          worst_rel = rel;
          worst_at = "C=" + std::to_string(ch) + ",d=" + std::to_string(d) +
                     ",f=" + std::to_string(f);
        }
      }
    }
  }
  Outcome o;
  o.pass = mismatches == 0 && over == 0;
  o.detail = "trace " + std::to_string(checked - mismatches) + "/" +
             std::to_string(checked) + " exact";
  if (!first.empty()) o.detail += " (first mismatch " + first + ")";
  o.detail += "; closed form within 10% on " + std::to_string(cases - over) +
              "/" + std::to_string(cases) + " cases, worst " +
              Num(100 * worst_rel) + "% at " + worst_at;
  return o;
}

// AC3 ----------------------------------------------------------------------

Outcome PipelineLaws() {
  constexpr int kPipelines = 10;
  constexpr std::int64_t kInputs = 250;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> secs(0.05, 2.0);
  double worst_tput = 0, worst_lat = 0;
  std::int64_t min_completed = kInputs;
  for (int t = 0; t < kPipelines; ++t) {
    const std::size_t stages = 2 + rng() % 5;
    SimConfig c;
    c.graph.input_shape = {8};
    std::vector<double> s(stages);
    std::vector<int> replicas(stages, 1);
    int next = 0;
    double bottleneck = 0, chain = 0;
    for (std::size_t i = 0; i < stages; ++i) {
      s[i] = secs(rng);
      if (t % 2 == 1 && rng() % 3 == 0) replicas[i] = 2;
      c.graph.layers.push_back(
          OpaqueLayer{s[i], 100 + static_cast<std::int64_t>(i)});
      Stage st{i, i, std::nullopt, {}, -1};
      for (int r = 0; r < replicas[i]; ++r) st.nodes.push_back(next++);
      c.assignment.stages.push_back(st);
      bottleneck = std::max(bottleneck, s[i] / replicas[i]);
      chain += s[i];
    }
    c.link = FreeLink();
    c.injection = ClosedInjection{kInputs};
    const auto r = Simulate(c);
    min_completed = std::min(min_completed, r.completed);
    const double want = 1.0 / bottleneck;
    worst_tput = std::max(worst_tput, std::abs(r.ips - want) / want);

    // One input through a chain on a real link: every hop carries the
    // 8-element activation as one message.
    for (auto& st : c.assignment.stages) st.nodes.resize(1);
    for (std::size_t i = 0; i < stages; ++i) {
      c.assignment.stages[i].nodes[0] = static_cast<int>(i);
    }
    c.link = LinkProfile{1e6 * (1 + t), 1e-3 * t};
    c.injection = ClosedInjection{1};
    const auto one = Simulate(c);
    const double hop = 8.0 * 4 * 8 / c.link.bandwidth_bps + c.link.latency_s;
    const double expect = chain + static_cast<double>(stages + 1) * hop;
    worst_lat = std::max(worst_lat, std::abs(one.latency_p50_s - expect));
  }
  Outcome o;
  o.pass = worst_tput <= 0.02 && worst_lat <= 1e-9 && min_completed >= 200;
  o.detail = std::to_string(kPipelines) + " pipelines, min completions " +
             std::to_string(min_completed) + ", worst ips error " +
             Num(100 * worst_tput) + "%, worst single-input latency error " +
             Num(worst_lat) + "s";
  return o;
}

// AC4 ----------------------------------------------------------------------

double MaxGroup(const std::vector<double>& lat,
                const std::vector<std::pair<std::size_t, std::size_t>>& g) {
  double m = 0;
  for (auto [b, e] : g) {
    double s = 0;
    for (std::size_t i = b; i < e; ++i) s += lat[i];
    m = std::max(m, s);
  }
  return m;
}

// Every contiguous partition into exactly k groups.
double BruteForceGroups(const std::vector<double>& lat, std::size_t k) {
  const std::size_t n = lat.size();
  double best = 1e300;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k - 1) continue;
    double cur = 0, m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      cur += lat[i];
      if (i + 1 == n || (mask >> i) & 1) {
        m = std::max(m, cur);
        cur = 0;
      }
    }
    best = std::min(best, m);
  }
  return best;
}

// Every split choice (none, or any method at 2..n nodes per weighted unit)
// combined with every contiguous grouping of the plain runs.
double ExhaustiveBest(const ModelGraph& g, int n, const ProfileDB& db,
                      const DeviceProfile& dev, const LinkProfile& link) {
  const auto anchors = UnitAnchors(g);
  std::vector<std::vector<std::optional<SplitMethod>>> options;
  for (std::size_t a : anchors) {
    std::vector<std::optional<SplitMethod>> o = {std::nullopt};
    if (HasWeights(g.layers[a])) {
      for (int m = 2; m <= n; ++m) {
        for (const auto& s : SplitsWithNodeCount(g.layers[a], m)) {
          o.push_back(s);
        }
      }
    }
    options.push_back(o);
  }
  const std::size_t units = anchors.size();
  double best = 1e300;
  std::vector<std::size_t> pick(units, 0);
  while (true) {
    for (std::uint32_t mask = 0; mask < (1u << (units - 1)); ++mask) {
      Assignment a;
      int next = 0;
      std::size_t u = 0;
      while (u < units && next <= n) {
        Stage s;
        s.first_layer = anchors[u];
        if (pick[u] != 0) {
          s.split = options[u][pick[u]];
          s.last_layer = UnitEnd(g, anchors[u]);
          const auto shards = SplitNodeCount(*s.split, g.layers[anchors[u]]);
          for (std::int64_t j = 0; j < shards; ++j) s.nodes.push_back(next++);
          ++u;
        } else {
          std::size_t v = u + 1;
          while (v < units && pick[v] == 0 && !((mask >> (v - 1)) & 1)) ++v;
          s.last_layer = UnitEnd(g, anchors[v - 1]);
          s.nodes.push_back(next++);
          u = v;
        }
        a.stages.push_back(s);
      }
      if (next > n) continue;
      PlaceMergeNodes(a);
      const auto est = EvaluateAssignment(g, a, db, dev, link);
      if (est.fits) best = std::min(best, est.max_stage_s);
    }
    std::size_t i = 0;
    while (i < units && ++pick[i] == options[i].size()) pick[i++] = 0;
    if (i == units) break;
  }
  return best;
}

ModelGraph RandomDenseChain(std::mt19937_64& rng, int units) {
  ModelGraph g;
  g.name = "synthetic";
  std::int64_t d = 64 + rng() % 512;
  g.input_shape = {d};
  for (int u = 0; u < units; ++u) {
    const std::int64_t out = 64 + rng() % 1024;
    g.layers.push_back(DenseLayer{d, out, true});
    if (rng() % 2) g.layers.push_back(ActivationLayer{});
    d = out;
  }
  return g;
}

Outcome PlannerBound() {
  Timer timer;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lat(0.1, 5.0);
  int dp_cases = 0, dp_wrong = 0;
  for (std::size_t len = 1; len <= 12; ++len) {
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<double> l(len);
      for (auto& x : l) x = lat(rng);
      for (std::size_t k = 1; k <= std::min<std::size_t>(len, 6); ++k) {
        ++dp_cases;
        const auto groups = GroupLayers(l, k);
        if (groups.size() != k ||
            std::abs(MaxGroup(l, groups) - BruteForceGroups(l, k)) > 1e-9) {
          ++dp_wrong;
        }
      }
    }
  }

  constexpr int kProfiles = 10;
  double worst_ratio = 0;
  for (int t = 0; t < kProfiles; ++t) {
    DeviceProfile dev;
    dev.mult_rate = 1e6 * (1 + t);
    dev.reduce_rate = dev.mult_rate * (t % 2 ? 2.0 : 1.0);
    const LinkProfile link{1e8 * (1 + t % 3), 1e-4 * (1 + t % 4)};
    const ProfileDB db(dev);
    PlannerOptions opt;
    opt.link = link;
    const auto g = RandomDenseChain(rng, 3 + t % 2);
    const int n = 2 + t % 3;
    const auto a = GenerateDistribution(g, n, dev.mem_bytes, db, opt);
    const double got = EvaluateAssignment(g, a, db, dev, link).max_stage_s;
    worst_ratio = std::max(worst_ratio, got / ExhaustiveBest(g, n, db, dev, link));
  }
  const double secs = timer.Seconds();
  Outcome o;
  o.pass = dp_wrong == 0 && worst_ratio <= 1.15 && secs < 120;
  o.detail = "grouping exact on " + std::to_string(dp_cases - dp_wrong) + "/" +
             std::to_string(dp_cases) + " chains; planner/exhaustive worst " +
             Num(worst_ratio) + " over " + std::to_string(kProfiles) +
             " profiles; time=" + Num(secs) + "s";
  return o;
}

// AC5 ----------------------------------------------------------------------

double SplitSpeedup(std::int64_t mem_bytes) {
  ModelGraph m;
  m.name = "fc";
  m.input_shape = {7680};
  m.layers = {DenseLayer{7680, 16384, false}};
  DeviceProfile dev;
  dev.swap_factor = 4;
  dev.mem_bytes = mem_bytes;
  const auto rows =
      SpeedupExperiment(m, {DenseOutputSplit{2}}, dev, LinkProfile{}, 20);
  return rows.at(1).speedup;
}

double Modeled(const LayerSpec& layer, const SplitMethod& m) {
  return EstimateLatency(ComputeLayerCost(layer, m), DeviceProfile{},
                         LinkProfile{});
}

Outcome Trends() {
  // The layer needs about 503 MB: it swaps at 300 MB and its halves do not.
  const double swapped = SplitSpeedup(std::int64_t{300} << 20);
  const double fits = SplitSpeedup(std::int64_t{1} << 30);
  const bool a = swapped > 2.0;
  const bool b = fits < 2.0;

  // Three nodes, 128x128 inputs.
  int spatial_best = 0, margin_shrinks = 0, c_cases = 0;
  for (std::int64_t k : {128, 512}) {
    for (std::int64_t ch : {16, 64, 128, 256, 512}) {
      ++c_cases;
      double margin[2] = {};
      int i = 0;
      for (std::int64_t f : {3, 9}) {
        Conv2DLayer conv;
        conv.h_in = conv.w_in = 128;
        conv.c_in = ch;
        conv.filters = k;
        conv.kernel = f;
        const double spatial = Modeled(conv, ConvSpatialSplit{3, 1});
        const double channel = Modeled(conv, ConvChannelSplit{(k + 2) / 3});
        const double filter = Modeled(conv, ConvFilterSplit{(ch + 2) / 3});
        const double other = std::min(channel, filter);
        if (f == 3 && spatial < other) ++spatial_best;
        margin[i++] = other / spatial - 1.0;
      }
      if (margin[1] < margin[0]) ++margin_shrinks;
    }
  }
  const bool c = spatial_best == c_cases && margin_shrinks == c_cases;

  int d_cases = 0, d_ok = 0;
  for (std::int64_t di : {7680, 8192}) {
    for (std::int64_t d_o = 512; d_o <= 16384; d_o *= 2) {
      ++d_cases;
      const DenseLayer layer{di, d_o, false};
      if (Modeled(layer, DenseInputSplit{2}) >=
          Modeled(layer, DenseOutputSplit{2})) {
        ++d_ok;
      }
    }
  }
  const bool d = d_ok == d_cases;

  Outcome o;
  o.pass = a && b && c && d;
  o.detail = "(a) swapped speedup " + Num(swapped) + (a ? " ok" : " FAIL") +
             "; (b) in-memory speedup " + Num(fits) + (b ? " ok" : " FAIL") +
             "; (c) spatial best " + std::to_string(spatial_best) + "/" +
             std::to_string(c_cases) + ", margin shrinks " +
             std::to_string(margin_shrinks) + "/" + std::to_string(c_cases) +
             (c ? " ok" : " FAIL") + "; (d) input>=output " +
             std::to_string(d_ok) + "/" + std::to_string(d_cases) +
             (d ? " ok" : " FAIL");
  return o;
}

// AC6 ----------------------------------------------------------------------

bool HasSplitStage(const Assignment& a) {
  return std::any_of(a.stages.begin(), a.stages.end(),
                     [](const Stage& s) { return s.split.has_value(); });
}

Outcome DistributedRun(const std::string& executable) {
  Timer timer;
  PlanFile p;
  p.graph = LoadModel(CDNN_MODELS_DIR "/toy.mdl");
  p.seed = 7;
  // Small enough that the widest layer must be split.
  p.default_device.mem_bytes = 100 << 10;
  p.link = LinkProfile{};
  ProfileDB db(p.default_device);
  PlannerOptions opt;
  opt.link = p.link;
  p.assignment = GenerateDistribution(p.graph, 6, p.default_device.mem_bytes,
                                      db, opt);
  const int nodes = p.assignment.NodeCount();
  p.addresses = LocalAddresses(nodes, 1);
  Outcome o;
  if (p.graph.layers.size() < 6 || !HasSplitStage(p.assignment) || nodes < 4 ||
      nodes > 6) {
    o.pass = false;
    o.detail = "plan has " + std::to_string(nodes) +
               " nodes and no usable split stage";
    return o;
  }

  const fs::path dir =
      fs::temp_directory_path() / ("cdnn-accept-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::mt19937_64 rng(11);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 20; ++i) inputs.push_back(RandomTensor(p.graph.input_shape, rng));

  DriveResult r;
  std::vector<int> codes;
  {
    LocalCluster cluster(executable, p, dir.string());
    r = Drive(cluster.plan(), inputs);
    codes = cluster.Wait(30);
  }
  const ModelWeights w = MakeModelWeights(p.graph, p.seed);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst,
                     MaxAbsDiff(r.outputs.at(i), ModelForward(p.graph, w, inputs[i])));
  }
  const bool clean = std::all_of(codes.begin(), codes.end(),
                                 [](int c) { return c == 0; });

  // The stats go through their JSON form, as they would from a file.
  const PipelineStats stats = PipelineStatsFromJson(PipelineStatsToJson(r.stats));
  const double before =
      EvaluateAssignment(p.graph, p.assignment, db, p.default_device, p.link)
          .max_stage_s;
  ProfileDB measured(p.default_device);
  const RefineResult refined = Refine(p.graph, p.assignment, stats, nodes,
                                      p.default_device.mem_bytes, measured, opt);
  const double old_measured =
      EvaluateAssignment(p.graph, p.assignment, measured, p.default_device, p.link)
          .max_stage_s;
  const double new_measured =
      EvaluateAssignment(p.graph, refined.assignment, measured,
                         p.default_device, p.link)
          .max_stage_s;
  const bool refine_ok = !refined.changed || new_measured <= old_measured;
  const double secs = timer.Seconds();
  std::error_code ec;
  fs::remove_all(dir, ec);

  o.pass = worst <= 1e-4 && clean && r.outputs.size() == inputs.size() &&
           stats.nodes.size() == static_cast<std::size_t>(nodes) && refine_ok &&
           secs < 300;
  o.detail = std::to_string(nodes) + " processes, " +
             std::to_string(r.outputs.size()) + " inferences, max_err=" +
             Num(worst) + (clean ? "" : ", a node exited uncleanly") +
             "; refine: " +
             (refined.changed ? "changed, bottleneck " + Num(old_measured) +
                                    "s -> " + Num(new_measured) + "s"
                              : std::string("fixed point")) +
             " (modeled bottleneck " + Num(before) + "s); time=" + Num(secs) +
             "s";
  return o;
}

// AC7 ----------------------------------------------------------------------

std::vector<std::uint8_t> ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor RandomShapeTensor(std::mt19937_64& rng) {
  Shape s(rng() % 4);
  for (auto& d : s) d = 1 + static_cast<std::int64_t>(rng() % 6);
  return RandomTensor(s, rng);
}

Outcome WireFormat() {
  std::mt19937_64 rng(7);
  int ok = 0;
  constexpr int kFrames = 1000;
  for (int i = 0; i < kFrames; ++i) {
    WireMessage m;
    switch (rng() % 5) {
      case 0:
        m = HelloMsg{static_cast<std::uint32_t>(rng()), rng()};
        break;
      case 1: {
        std::string tag(rng() % 20, 'a');
        for (auto& ch : tag) ch = static_cast<char>('!' + rng() % 90);
        m = TensorMsg{rng(), tag, RandomShapeTensor(rng)};
        break;
      }
      case 2: {
        PipelineStats s;
        s.nodes.push_back({static_cast<int>(rng() % 8), 0.25, {1, 2, 3}, 0.5,
                           static_cast<std::int64_t>(rng() % 100)});
        m = StatsMsg{s};
        break;
      }
      case 3:
        m = ShutdownMsg{};
        break;
      default:
        m = BlobMsg{RandomShapeTensor(rng)};
    }
    const auto bytes = EncodeFrame(m);
    if (DecodeFrame(bytes) == m && EncodeFrame(DecodeFrame(bytes)) == bytes) ++ok;
  }

  int golden_ok = 0;
  const std::string dir = CDNN_GOLDEN_DIR;
  if (EncodeFrame(HelloMsg{3, 0x0123456789ABCDEFull}) ==
      ReadBytes(dir + "/hello.bin")) {
    ++golden_ok;
  }
  const Tensor t({2, 3}, {0.5f, -1.0f, 2.25f, 0.0f, 1e-3f, -7.75f});
  if (EncodeFrame(TensorMsg{42, "L5.conv#1", t}) ==
      ReadBytes(dir + "/tensor_2x3.bin")) {
    ++golden_ok;
  }
  if (EncodeFrame(ShutdownMsg{}) == ReadBytes(dir + "/shutdown.bin")) ++golden_ok;

  Outcome o;
  o.pass = ok == kFrames && golden_ok == 3;
  o.detail = std::to_string(ok) + "/" + std::to_string(kFrames) +
             " round trips, " + std::to_string(golden_ok) +
             "/3 golden frames byte-exact";
  return o;
}

Outcome RunCriterion(int n, const std::string& executable) {
  switch (n) {
    case 1: return SplitEquivalence();
    case 2: return CostMatchesTrace();
    case 3: return PipelineLaws();
    case 4: return PlannerBound();
    case 5: return Trends();
    case 6: return DistributedRun(executable);
    case 7: return WireFormat();
  }
  throw InvalidArgument("no criterion " + std::to_string(n));
}

}  // namespace
}  // namespace cdnn

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> criteria;
  std::string executable = CDNN_CLI;
  app.add_option("--criterion", criteria, "criterion number (default all)")
      ->check(CLI::Range(1, 7));
  app.add_option("--cdnn", executable, "cdnn executable for node processes")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7};

  int failed = 0;
  for (int n : criteria) {
    cdnn::Outcome o;
    try {
      o = cdnn::RunCriterion(n, executable);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << "AC" << n << (o.pass ? " PASS " : " FAIL ") << o.detail
              << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
