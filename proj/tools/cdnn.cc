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

// Command-line front end: describe, cost, plan, simulate, verify, serve,
// drive, refine, export and make-inputs.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

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
#include "cdnn/stats.h"
#include "cdnn/text_util.h"
#include "cdnn/wire.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace cdnn {
namespace {

const std::vector<std::string> kMethodNames = {"output", "input", "channel",
                                               "spatial", "filter"};

bool IsDenseMethod(const std::string& name) {
  return name == "output" || name == "input";
}

// A grid entry: a method family, optionally with a fixed degree.
struct MethodSpec {
  std::string name;
  std::optional<SplitMethod> fixed;
};

// "all", or a comma list of "name" and "name:degree" ("spatial:2x2").
std::vector<MethodSpec> ParseMethodGrid(const std::string& text) {
  std::vector<MethodSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (item == "all") {
      for (const auto& n : kMethodNames) out.push_back({n, std::nullopt});
      continue;
    }
    const auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    if (std::find(kMethodNames.begin(), kMethodNames.end(), name) ==
        kMethodNames.end()) {
      throw ParseError("unknown split method '" + name + "'");
    }
    if (colon == std::string::npos) {
      out.push_back({name, std::nullopt});
    } else {
      out.push_back({name, ParseSplitMethod(name + "[" + item.substr(colon + 1) + "]")});
    }
  }
  if (out.empty()) throw InvalidArgument("empty method grid");
  return out;
}

// "3", "1..4" or "1,2,4".
std::vector<std::int64_t> ParseNodeRange(const std::string& text) {
  std::vector<std::int64_t> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto lo = ParseInt(text.substr(0, dots));
    const auto hi = ParseInt(text.substr(dots + 2));
    for (auto n = lo; n <= hi; ++n) out.push_back(n);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(ParseInt(item));
  }
  if (out.empty() || *std::min_element(out.begin(), out.end()) < 1) {
    throw InvalidArgument("node counts must be a non-empty set of positive numbers");
  }
  return out;
}

// Instance of family `name` with exactly n shards on `layer`; spatial takes
// the squarest grid.
std::optional<SplitMethod> MethodForNodes(const std::string& name,
                                          const LayerSpec& layer, std::int64_t n) {
  std::optional<SplitMethod> best;
  std::int64_t best_gap = 0;
  for (const auto& m : SplitsWithNodeCount(layer, n)) {
    if (SplitMethodName(m) != name) continue;
    std::int64_t gap = 0;
    if (const auto* s = std::get_if<ConvSpatialSplit>(&m)) {
      gap = std::llabs(s->parts_y - s->parts_x);
    }
    if (!best || gap < best_gap) {
      best = m;
      best_gap = gap;
    }
  }
  return best;
}

struct Instance {
  std::size_t layer;
  SplitMethod method;
};

// Expands the grid over the model's layers. Families no layer accepts are
// skipped with a warning.
std::vector<Instance> ExpandGrid(const ModelGraph& g, const std::vector<MethodSpec>& grid,
                                 const std::vector<std::int64_t>& nodes) {
  std::vector<Instance> out;
  for (const auto& spec : grid) {
    bool any_layer = false;
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      const LayerSpec& layer = g.layers[l];
      if (!HasWeights(layer)) continue;
      const SplitMethod probe =
          spec.fixed ? *spec.fixed
                     : ParseSplitMethod(spec.name +
                                        (spec.name == "spatial" ? "[1x1]" : "[1]"));
      if (!SplitApplies(probe, layer)) continue;
      any_layer = true;
      if (spec.fixed) {
        try {
          SplitLayer(layer, *spec.fixed);
          out.push_back({l, *spec.fixed});
        } catch (const InvalidArgument& e) {
          std::cerr << "warning: L" << l << " " << FormatSplitMethod(*spec.fixed)
                    << ": " << e.what() << "\n";
        }
        continue;
      }
      for (auto n : nodes) {
        if (auto m = MethodForNodes(spec.name, layer, n)) {
          out.push_back({l, *m});
        } else {
          std::cerr << "warning: no " << spec.name << " split of L" << l << " onto "
                    << n << " nodes\n";
        }
      }
    }
    if (!any_layer) {
      std::cerr << "warning: no layer of " << g.name << " takes " << spec.name
                << (IsDenseMethod(spec.name) ? " (dense)" : " (convolution)")
                << " splitting; skipped\n";
    }
  }
  return out;
}

Profiles ProfilesOrDefault(const std::string& path) {
  return path.empty() ? Profiles{} : LoadProfiles(path);
}

void WriteOrPrint(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    WriteFile(path, text);
  }
}

// Records what produced the files in the output directory.
void UpdateManifest(const std::string& out, const std::map<std::string, std::string>& fields,
                    std::optional<std::uint64_t> seed) {
  if (out.empty() || out == "-") return;
  const fs::path dir = fs::absolute(out).parent_path();
  const fs::path path = dir / "manifest.json";
  nlohmann::json m = nlohmann::json::object();
  if (fs::exists(path)) {
    try {
      m = nlohmann::json::parse(ReadFile(path.string()));
    } catch (const std::exception&) {
      m = nlohmann::json::object();
    }
  }
  for (const auto& [k, v] : fields) {
    if (!v.empty()) m[k] = fs::absolute(v).string();
  }
  if (seed) m["seed"] = *seed;
  m["output_dir"] = dir.string();
  WriteFile(path.string(), m.dump(2) + "\n");
}

int CmdDescribe(const std::string& model_path) {
  const ModelGraph g = LoadModel(model_path);
  const auto in = LayerInputShapes(g);
  const auto out = InferShapes(g);
  const DeviceProfile dev;
  std::cout << "model " << g.name << " input " << ShapeToString(g.input_shape) << "\n";
  std::cout << "idx  kind        output          params       mults          mem_MB\n";
  std::int64_t params = 0, mults = 0;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    const LayerCost c = ComputeLayerCost(g.layers[l], in[l]);
    params += ParamCount(g.layers[l]);
    mults += c.mults_per_node;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-4zu %-11s %-15s %-12lld %-14lld %.2f\n", l,
                  LayerKindName(g.layers[l]).c_str(), ShapeToString(out[l]).c_str(),
                  static_cast<long long>(ParamCount(g.layers[l])),
                  static_cast<long long>(c.mults_per_node),
                  static_cast<double>(FootprintBytes(c, dev)) / (1 << 20));
    std::cout << buf;
  }
  std::cout << "total params " << params << ", mults " << mults << "\n";
  return 0;
}

int CmdCost(const std::string& model_path, const std::string& methods,
            const std::string& nodes, const std::string& profiles_path,
            const std::string& out) {
  const ModelGraph g = LoadModel(model_path);
  const auto grid = ParseMethodGrid(methods);
  const auto range = ParseNodeRange(nodes);
  const Profiles prof = ProfilesOrDefault(profiles_path);
  const auto in = LayerInputShapes(g);
  std::ostringstream csv;
  csv << "layer,kind,method,n,mults_per_node,reductions_per_node,weights_per_node,"
         "comm_elems,est_latency_s\n";
  for (const auto& inst : ExpandGrid(g, grid, range)) {
    const LayerSpec& layer = g.layers[inst.layer];
    const LayerCost c = ComputeLayerCost(layer, in[inst.layer], inst.method);
    csv << inst.layer << "," << LayerKindName(layer) << ","
        << FormatSplitMethod(inst.method) << "," << c.nodes << "," << c.mults_per_node
        << "," << c.reductions_per_node << "," << c.weights_per_node << ","
        << c.comm_total_elems << ","
        << FormatDouble(EstimateLatency(c, prof.default_device, prof.link)) << "\n";
  }
  WriteOrPrint(out, csv.str());
  UpdateManifest(out, {{"model", model_path}, {"profiles", profiles_path}}, std::nullopt);
  return 0;
}

std::string DescribeAssignment(const ModelGraph& g, const Assignment& a) {
  std::ostringstream os;
  for (int i = 0; i < a.NodeCount(); ++i) {
    os << "  node " << i << ":";
    const auto tasks = NodeTasks(g, a, i);
    for (std::size_t t = 0; t < tasks.size(); ++t) os << (t ? ", " : " ") << tasks[t];
    os << "\n";
  }
  return os.str();
}

struct PlanArgs {
  std::string model, profiles, out = "plan.txt", mem;
  int nodes = 1;
  std::uint64_t seed = 0;
  double tolerance = 0.1;
  bool data_parallel = false;
  bool no_latency_splits = false;
  int base_port = 7000;
};

int CmdPlan(const PlanArgs& args) {
  PlanFile p;
  p.graph = LoadModel(args.model);
  const Profiles prof = ProfilesOrDefault(args.profiles);
  p.link = prof.link;
  p.default_device = prof.default_device;
  p.devices = prof.devices;
  if (!args.mem.empty()) p.default_device.mem_bytes = ParseByteSize(args.mem);
  p.seed = args.seed;
  PlannerOptions opt;
  opt.link = p.link;
  opt.node_saving_tolerance = args.tolerance;
  opt.data_parallel = args.data_parallel;
  opt.latency_splits = !args.no_latency_splits;
  const ProfileDB db(p.default_device);
  p.assignment =
      GenerateDistribution(p.graph, args.nodes, p.default_device.mem_bytes, db, opt);
  p.addresses = LocalAddresses(p.assignment.NodeCount(), args.base_port);
  WriteOrPrint(args.out, FormatPlan(p));
  const auto est = EvaluateAssignment(p.graph, p.assignment, db, p.default_device, p.link);
  std::cerr << "plan " << HashToHex(PlanHash(p)) << ": " << p.assignment.NodeCount()
            << " of " << args.nodes << " nodes, bottleneck node " << est.bottleneck
            << " at " << FormatDouble(est.max_stage_s) << " s (est. "
            << FormatDouble(est.max_stage_s > 0 ? 1.0 / est.max_stage_s : 0.0)
            << " inferences/s)\n"
            << DescribeAssignment(p.graph, p.assignment);
  UpdateManifest(args.out,
                 {{"model", args.model}, {"profiles", args.profiles}, {"plan", args.out}},
                 args.seed);
  return 0;
}

struct SimArgs {
  std::string plan, out = "sim.json", csv;
  std::int64_t inputs = 100;
  double rate = 0, duration = 100;
  std::int64_t queue = 0;
  std::optional<std::uint64_t> seed;
};

int CmdSimulate(const SimArgs& args) {
  const PlanFile p = LoadPlan(args.plan);
  Injection inj = ClosedInjection{args.inputs};
  if (args.rate > 0) inj = OpenInjection{args.rate, args.duration};
  SimConfig c = ConfigFromPlan(p, inj);
  if (args.seed) c.seed = *args.seed;
  if (args.queue > 0) c.queue_capacity = args.queue;
  const SimReport r = Simulate(c);
  WriteOrPrint(args.out, SimReportToJson(r) + "\n");
  if (!args.csv.empty()) WriteFile(args.csv, SimReportToCsv(r));
  std::cerr << "ips " << FormatDouble(r.ips) << ", latency p50 "
            << FormatDouble(r.latency_p50_s) << " s, p95 " << FormatDouble(r.latency_p95_s)
            << " s, " << r.completed << "/" << r.injected << " completed\n";
  UpdateManifest(args.out, {{"plan", args.plan}}, c.seed);
  return 0;
}

int CmdVerify(const std::string& model_path, const std::string& methods,
              const std::string& nodes, int trials, std::uint64_t seed,
              const std::string& out) {
  const ModelGraph g = LoadModel(model_path);
  const auto insts = ExpandGrid(g, ParseMethodGrid(methods), ParseNodeRange(nodes));
  if (insts.empty()) throw InvalidArgument("no layer of the model takes these methods");
  std::ostringstream report;
  double worst = 0;
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const double err =
        VerifySplit(g.layers[insts[i].layer], insts[i].method, trials, seed + i);
    worst = std::max(worst, err);
    report << "L" << insts[i].layer << " " << FormatSplitMethod(insts[i].method)
           << " max_err=" << FormatDouble(err) << "\n";
  }
  const bool pass = worst <= 1e-4;
  report << (pass ? "PASS" : "FAIL") << " max_err=" << FormatDouble(worst) << "\n";
  std::cout << report.str();
  if (!out.empty()) {
    WriteFile(out, report.str());
    UpdateManifest(out, {{"model", model_path}}, seed);
  }
  return pass ? 0 : 1;
}

int CmdServe(const std::string& plan_path, int node, const std::string& bind,
             int stats_every) {
  const PlanFile p = LoadPlan(plan_path);
  ServeOptions o;
  o.bind = bind;
  o.stats_every = stats_every;
  o.log = &std::cerr;
  ServeNode(p, node, o);
  return 0;
}

struct DriveArgs {
  std::string plan, inputs, out = "outputs.bin", stats = "stats.json";
  bool local = false;
  bool check = false;
  double timeout = 60;
};

int CmdDrive(const DriveArgs& args) {
  PlanFile p = LoadPlan(args.plan);
  const auto inputs = ReadTensorFile(args.inputs);
  DriveOptions o;
  o.timeout_s = args.timeout;
  std::optional<LocalCluster> cluster;
  if (args.local) {
    const fs::path dir = fs::temp_directory_path() / ("cdnn-local-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    cluster.emplace(fs::read_symlink("/proc/self/exe").string(), p, dir.string());
    p = cluster->plan();
    std::cerr << "started " << p.assignment.NodeCount() << " local nodes, logs in "
              << dir.string() << "\n";
  }
  const DriveResult r = Drive(p, inputs, o);
  WriteTensorFile(args.out, r.outputs);
  WriteFile(args.stats, PipelineStatsToJson(r.stats) + "\n");
  std::cerr << r.outputs.size() << " inferences in " << FormatDouble(r.seconds) << " s\n";
  int rc = 0;
  if (cluster) {
    const auto codes = cluster->Wait(30);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i] != 0) {
        std::cerr << "node " << i << " exited with " << codes[i] << "\n";
        rc = 1;
      }
    }
  }
  if (args.check) {
    const ModelWeights w = MakeModelWeights(p.graph, p.seed);
    double worst = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      worst = std::max(worst, MaxAbsDiff(r.outputs[i], ModelForward(p.graph, w, inputs[i])));
    }
    const bool pass = worst <= 1e-4;
    std::cout << (pass ? "PASS" : "FAIL") << " max_err=" << FormatDouble(worst) << "\n";
    if (!pass) rc = 1;
  }
  UpdateManifest(args.out, {{"plan", args.plan}}, p.seed);
  return rc;
}

int CmdRefine(const std::string& plan_path, const std::string& stats_path,
              const std::string& profiles_path, const std::string& out) {
  PlanFile p = LoadPlan(plan_path);
  const PipelineStats stats = PipelineStatsFromJson(ReadFile(stats_path));
  const Profiles prof = ProfilesOrDefault(profiles_path);
  ProfileDB db(profiles_path.empty() ? p.default_device : prof.default_device);
  PlannerOptions opt;
  opt.link = p.link;
  const RefineResult r = Refine(p.graph, p.assignment, stats, p.assignment.NodeCount(),
                                p.default_device.mem_bytes, db, opt);
  const int old_nodes = p.assignment.NodeCount();
  p.assignment = r.assignment;
  if (p.assignment.NodeCount() != old_nodes) {
    p.addresses.resize(p.assignment.NodeCount());
  }
  WriteOrPrint(out, FormatPlan(p));
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s.empty() ? std::string("none") : s;
  };
  std::cerr << "bottlenecks " << list(r.bottlenecks) << ", idle " << list(r.idle) << ", "
            << (r.changed ? "plan changed" : "fixed point") << "\n"
            << DescribeAssignment(p.graph, p.assignment);
  UpdateManifest(out, {{"plan", out}, {"profiles", profiles_path}}, p.seed);
  return 0;
}

int CmdExport(const std::string& report_path, const std::string& out) {
  const std::string text = ReadFile(report_path);
  SimReport r;
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object() && !j.contains("ips")) {
    r.stats = PipelineStatsFromJson(text);
  } else {
    r = SimReportFromJson(text);
  }
  WriteOrPrint(out, SimReportToCsv(r));
  return 0;
}

int CmdMakeInputs(const std::string& model_path, int count, std::uint64_t seed,
                  const std::string& out) {
  const ModelGraph g = LoadModel(model_path);
  std::mt19937_64 rng(seed);
  std::vector<Tensor> v;
  for (int i = 0; i < count; ++i) v.push_back(RandomTensor(g.input_shape, rng));
  WriteTensorFile(out, v);
  UpdateManifest(out, {{"model", model_path}}, seed);
  return 0;
}

}  // namespace
}  // namespace cdnn

int main(int argc, char** argv) {
  using namespace cdnn;
  CLI::App app{"Distributed DNN inference planning, simulation and execution"};
  app.require_subcommand(1);
  int rc = 0;

  std::string model, methods, nodes_range = "1", profiles, out, plan, stats;

  auto* describe = app.add_subcommand("describe", "Layer shapes, parameters and work");
  describe->add_option("--model", model, "Model description")->required();
  describe->callback([&] { rc = CmdDescribe(model); });

  auto* cost = app.add_subcommand("cost", "Cost-model rows per layer, method and n");
  cost->add_option("--model", model)->required();
  cost->add_option("--methods", methods, "all, or e.g. output,spatial:2x2")->required();
  cost->add_option("--nodes", nodes_range, "n values, e.g. 1..4")->capture_default_str();
  cost->add_option("--profiles", profiles, "device/link profile file");
  cost->add_option("--out", out, "CSV path (stdout when omitted)");
  cost->callback([&] { rc = CmdCost(model, methods, nodes_range, profiles, out); });

  PlanArgs pa;
  auto* planc = app.add_subcommand("plan", "Distribute a model over n nodes");
  planc->add_option("--model", pa.model)->required();
  planc->add_option("--nodes", pa.nodes)->required()->check(CLI::PositiveNumber);
  planc->add_option("--mem", pa.mem, "node memory, e.g. 256MB");
  planc->add_option("--profiles", pa.profiles);
  planc->add_option("--seed", pa.seed)->capture_default_str();
  planc->add_option("--tolerance", pa.tolerance, "node saving tolerance")
      ->capture_default_str();
  planc->add_flag("--data-parallel", pa.data_parallel, "replicate the bottleneck");
  planc->add_flag("--no-latency-splits", pa.no_latency_splits);
  planc->add_option("--base-port", pa.base_port)->capture_default_str();
  planc->add_option("--out", pa.out)->capture_default_str();
  planc->callback([&] { rc = CmdPlan(pa); });

  SimArgs sa;
  std::uint64_t sim_seed = 0;
  auto* sim = app.add_subcommand("simulate", "Discrete-event run of a plan");
  sim->add_option("--plan", sa.plan)->required();
  sim->add_option("--inputs", sa.inputs, "closed-loop inference count")
      ->capture_default_str();
  auto* rate = sim->add_option("--rate", sa.rate, "open-loop arrivals per second");
  sim->add_option("--duration", sa.duration, "open-loop seconds")->capture_default_str();
  sim->add_option("--queue", sa.queue, "per-node queue capacity (unbounded: 0)");
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "overrides the plan seed");
  sim->add_option("--out", sa.out)->capture_default_str();
  sim->add_option("--csv", sa.csv, "also write the tidy CSV");
  (void)rate;
  sim->callback([&] {
    if (*sim_seed_opt) sa.seed = sim_seed;
    rc = CmdSimulate(sa);
  });

  int trials = 3;
  std::uint64_t verify_seed = 1;
  auto* verify = app.add_subcommand("verify", "Split-versus-whole equivalence check");
  verify->add_option("--model", model)->required();
  verify->add_option("--methods", methods)->required();
  verify->add_option("--nodes", nodes_range)->capture_default_str();
  verify->add_option("--trials", trials)->capture_default_str();
  verify->add_option("--seed", verify_seed)->capture_default_str();
  verify->add_option("--out", out);
  verify->callback(
      [&] { rc = CmdVerify(model, methods, nodes_range, trials, verify_seed, out); });

  int node = 0, stats_every = 10;
  std::string bind;
  auto* serve = app.add_subcommand("serve", "Run one node of a plan");
  serve->add_option("--plan", plan)->required();
  serve->add_option("--node", node)->required();
  serve->add_option("--bind", bind, "listen address (plan address when omitted)");
  serve->add_option("--stats-every", stats_every)->capture_default_str();
  serve->callback([&] { rc = CmdServe(plan, node, bind, stats_every); });

  DriveArgs da;
  auto* drive = app.add_subcommand("drive", "Feed inputs through serving nodes");
  drive->add_option("--plan", da.plan)->required();
  drive->add_option("--inputs", da.inputs, "tensor file")->required();
  drive->add_option("--out", da.out)->capture_default_str();
  drive->add_option("--stats", da.stats)->capture_default_str();
  drive->add_option("--timeout", da.timeout, "seconds per inference")
      ->capture_default_str();
  drive->add_flag("--local", da.local, "start the nodes as local processes");
  drive->add_flag("--check", da.check, "compare with a single-process run");
  drive->callback([&] { rc = CmdDrive(da); });

  auto* refine = app.add_subcommand("refine", "Replan from observed node stats");
  refine->add_option("--plan", plan)->required();
  refine->add_option("--stats", stats)->required();
  refine->add_option("--profiles", profiles);
  refine->add_option("--out", out)->required();
  refine->callback([&] { rc = CmdRefine(plan, stats, profiles, out); });

  std::string report;
  auto* exp = app.add_subcommand("export", "Simulation report or stats to CSV");
  exp->add_option("--report", report)->required();
  exp->add_option("--out", out);
  exp->callback([&] { rc = CmdExport(report, out); });

  int count = 20;
  std::uint64_t input_seed = 1;
  auto* mk = app.add_subcommand("make-inputs", "Random model inputs as a tensor file");
  mk->add_option("--model", model)->required();
  mk->add_option("--count", count)->capture_default_str();
  mk->add_option("--seed", input_seed)->capture_default_str();
  mk->add_option("--out", out)->required();
  mk->callback([&] { rc = CmdMakeInputs(model, count, input_seed, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const cdnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
