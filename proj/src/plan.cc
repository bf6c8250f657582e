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

#include "cdnn/plan.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iomanip>
#include <set>
#include <sstream>

#include "cdnn/error.h"
#include "cdnn/text_util.h"

namespace cdnn {
namespace {

// Like Tokenize, but '#' opens a comment only at the start of a word, since
// shard tasks contain it ("L3.output[2]#1").
std::vector<Token> PlanTokens(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    if (line[i] == '#') break;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
    }
    out.push_back({std::string(line.substr(start, i - start)), start + 1});
  }
  return out;
}

std::string ShardTag(const Stage& st, int shard) {
  return "L" + std::to_string(st.first_layer) + "." +
         FormatSplitMethod(*st.split) + "#" + std::to_string(shard);
}

}  // namespace

int Assignment::NodeCount() const {
  int n = 0;
  for (const auto& s : stages) {
    for (int id : s.nodes) n = std::max(n, id + 1);
    n = std::max(n, s.merge_node + 1);
  }
  return n;
}

std::size_t UnitEnd(const ModelGraph& graph, std::size_t anchor) {
  std::size_t e = anchor;
  while (e + 1 < graph.layers.size() && !IsAnchorLayer(graph.layers[e + 1])) {
    ++e;
  }
  return e;
}

void PlaceMergeNodes(Assignment& assignment) {
  auto& st = assignment.stages;
  for (std::size_t k = 0; k < st.size(); ++k) {
    if (!st[k].split || st[k].merge_node >= 0) continue;
    if (k + 1 < st.size() && !st[k + 1].split && st[k + 1].nodes.size() == 1) {
      st[k].merge_node = st[k + 1].nodes[0];
    } else {
      st[k].merge_node = st[k].nodes.at(0);
    }
  }
}

void ValidateAssignment(const ModelGraph& graph, const Assignment& assignment) {
  const auto& st = assignment.stages;
  const std::size_t n_layers = graph.layers.size();
  if (st.empty()) throw InvalidArgument("assignment has no stages");
  std::size_t next = 0;
  std::map<int, int> owner;  // node -> number of stage memberships
  std::set<int> dedicated_merge;
  for (std::size_t k = 0; k < st.size(); ++k) {
    const Stage& s = st[k];
    if (s.first_layer != next || s.last_layer < s.first_layer ||
        s.last_layer >= n_layers) {
      throw InvalidArgument("stage " + std::to_string(k) + " covers L" +
                            std::to_string(s.first_layer) + "..L" +
                            std::to_string(s.last_layer) + ", expected L" +
                            std::to_string(next) + " next");
    }
    next = s.last_layer + 1;
    if (s.nodes.empty()) {
      throw InvalidArgument("stage " + std::to_string(k) + " has no nodes");
    }
    for (int id : s.nodes) {
      if (id < 0) throw InvalidArgument("negative node id");
      ++owner[id];
    }
    if (s.split) {
      const LayerSpec& layer = graph.layers[s.first_layer];
      if (!SplitApplies(*s.split, layer)) {
        throw InvalidArgument("split " + FormatSplitMethod(*s.split) +
                              " does not apply to L" +
                              std::to_string(s.first_layer));
      }
      if (static_cast<std::int64_t>(s.nodes.size()) !=
          SplitNodeCount(*s.split, layer)) {
        throw InvalidArgument("split at L" + std::to_string(s.first_layer) +
                              " needs " +
                              std::to_string(SplitNodeCount(*s.split, layer)) +
                              " shard nodes, has " +
                              std::to_string(s.nodes.size()));
      }
      if (s.last_layer > UnitEnd(graph, s.first_layer)) {
        throw InvalidArgument("split stage at L" +
                              std::to_string(s.first_layer) +
                              " extends past its trailing layers");
      }
      if (s.merge_node < 0) {
        throw InvalidArgument("split at L" + std::to_string(s.first_layer) +
                              " has no merge node");
      }
      const bool in_shards = std::count(s.nodes.begin(), s.nodes.end(),
                                        s.merge_node) > 0;
      const bool in_next = k + 1 < st.size() && !st[k + 1].split &&
                           st[k + 1].nodes == std::vector<int>{s.merge_node};
      if (!in_shards && !in_next) dedicated_merge.insert(s.merge_node);
    } else if (s.merge_node >= 0) {
      throw InvalidArgument("plain stage with a merge node");
    }
  }
  if (next != n_layers) {
    throw InvalidArgument("assignment covers " + std::to_string(next) +
                          " of " + std::to_string(n_layers) + " layers");
  }
  for (int id : dedicated_merge) ++owner[id];
  for (const auto& [id, count] : owner) {
    if (count != 1) {
      throw InvalidArgument("node " + std::to_string(id) + " is in " +
                            std::to_string(count) + " stages");
    }
  }
  const int n = assignment.NodeCount();
  if (static_cast<int>(owner.size()) != n) {
    throw InvalidArgument("node ids must be 0.." + std::to_string(n - 1));
  }
}

std::int64_t SelectorElementCount(const InputSelector& sel, const Shape& input) {
  return std::visit(
      [&](const auto& s) -> std::int64_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FullInput>) {
          return NumElements(input);
        } else if constexpr (std::is_same_v<T, RowRange>) {
          return s.rows.size();
        } else if constexpr (std::is_same_v<T, SpatialRect>) {
          return s.height() * s.width() * input.back();
        } else {
          return NumElements(input) / input.back() * s.channels.size();
        }
      },
      sel);
}

bool NodeProgram::is_entry() const {
  return std::count(primary_from.begin(), primary_from.end(), kSourceNode) > 0;
}

bool NodeProgram::is_exit() const {
  for (const auto& s : sends) {
    if (s.to == std::vector<int>{kSinkNode}) return true;
  }
  return false;
}

std::vector<NodeProgram> BuildNodePrograms(const ModelGraph& graph,
                                           const Assignment& assignment) {
  ValidateAssignment(graph, assignment);
  const auto& st = assignment.stages;
  const auto in_shapes = LayerInputShapes(graph);
  const auto out_shapes = InferShapes(graph);
  std::vector<NodeProgram> progs(assignment.NodeCount());
  for (std::size_t i = 0; i < progs.size(); ++i) {
    progs[i].node = static_cast<int>(i);
  }
  // Producers of each stage's output.
  auto producers = [&](std::size_t k) {
    return st[k].split ? std::vector<int>{st[k].merge_node} : st[k].nodes;
  };
  auto merged_into = [&](std::size_t k, int node) {
    return k > 0 && st[k - 1].split && st[k - 1].merge_node == node;
  };

  for (std::size_t k = 0; k < st.size(); ++k) {
    const Stage& s = st[k];
    const std::vector<int> upstream =
        k == 0 ? std::vector<int>{kSourceNode} : producers(k - 1);
    if (!s.split) {
      for (std::size_t r = 0; r < s.nodes.size(); ++r) {
        NodeProgram& p = progs[s.nodes[r]];
        p.replica_index = static_cast<int>(r);
        p.replica_count = static_cast<int>(s.nodes.size());
        if (!merged_into(k, p.node)) p.primary_from = upstream;
        for (std::size_t l = s.first_layer; l <= s.last_layer; ++l) {
          p.layers.push_back(l);
        }
      }
    } else {
      const SplitPlan plan = SplitLayer(graph.layers[s.first_layer], *s.split);
      for (std::size_t j = 0; j < s.nodes.size(); ++j) {
        NodeProgram& p = progs[s.nodes[j]];
        p.primary_from = upstream;
        p.shard_stage = static_cast<int>(k);
        p.shard_index = static_cast<int>(j);
        if (s.nodes[j] != s.merge_node) {
          SendSpec send;
          send.to = {s.merge_node};
          send.payload = SendSpec::Payload::kPartial;
          send.stage = static_cast<int>(k);
          send.shard = static_cast<int>(j);
          send.elems = NumElements(plan.shards[j].output_shape);
          send.tag = ShardTag(s, static_cast<int>(j));
          p.sends.push_back(send);
        }
      }
      NodeProgram& m = progs[s.merge_node];
      m.merge_stage = static_cast<int>(k);
      m.gather_from = s.nodes;
      for (std::size_t l = s.first_layer + 1; l <= s.last_layer; ++l) {
        m.layers.push_back(l);
      }
    }
    // Output of stage k, unless the next stage's node merges it locally.
    if (s.split && k + 1 < st.size() && merged_into(k + 1, st[k + 1].nodes[0]) &&
        !st[k + 1].split && st[k + 1].nodes.size() == 1 &&
        st[k + 1].nodes[0] == s.merge_node) {
      continue;
    }
    std::vector<SendSpec> out;
    const std::int64_t elems = NumElements(out_shapes[s.last_layer]);
    const std::string tag = "L" + std::to_string(s.last_layer);
    if (k + 1 == st.size()) {
      out.push_back({{kSinkNode}, SendSpec::Payload::kFull, -1, -1, elems, tag});
    } else if (!st[k + 1].split) {
      out.push_back(
          {st[k + 1].nodes, SendSpec::Payload::kFull, -1, -1, elems, tag});
    } else {
      const Stage& nx = st[k + 1];
      const SplitPlan plan = SplitLayer(graph.layers[nx.first_layer], *nx.split);
      for (std::size_t j = 0; j < nx.nodes.size(); ++j) {
        out.push_back({{nx.nodes[j]},
                       SendSpec::Payload::kShardInput,
                       static_cast<int>(k + 1),
                       static_cast<int>(j),
                       SelectorElementCount(plan.shards[j].input,
                                     in_shapes[nx.first_layer]),
                       ShardTag(nx, static_cast<int>(j)) + ".in"});
      }
    }
    for (int id : producers(k)) {
      auto& sends = progs[id].sends;
      sends.insert(sends.end(), out.begin(), out.end());
    }
  }
  return progs;
}

std::vector<std::string> NodeTasks(const ModelGraph& graph,
                                   const Assignment& assignment, int node) {
  (void)graph;
  std::vector<std::string> tasks;
  for (const auto& s : assignment.stages) {
    for (std::size_t j = 0; j < s.nodes.size(); ++j) {
      if (s.split && s.nodes[j] == node) {
        tasks.push_back(ShardTag(s, static_cast<int>(j)));
      }
    }
    if (s.split && s.merge_node == node) {
      tasks.push_back("L" + std::to_string(s.first_layer) + ".merge");
      for (std::size_t l = s.first_layer + 1; l <= s.last_layer; ++l) {
        tasks.push_back("L" + std::to_string(l));
      }
    }
    if (!s.split &&
        std::count(s.nodes.begin(), s.nodes.end(), node) > 0) {
      for (std::size_t l = s.first_layer; l <= s.last_layer; ++l) {
        tasks.push_back("L" + std::to_string(l));
      }
    }
  }
  return tasks;
}

const DeviceProfile& PlanFile::DeviceFor(int node) const {
  auto it = devices.find(node);
  return it == devices.end() ? default_device : it->second;
}

namespace {

std::string FormatDevice(const DeviceProfile& d) {
  std::ostringstream os;
  os << "mult=" << FormatDouble(d.mult_rate)
     << " reduce=" << FormatDouble(d.reduce_rate) << " mem=" << d.mem_bytes
     << " swap=" << FormatDouble(d.swap_factor)
     << " bpe=" << d.bytes_per_element;
  return os.str();
}

// key=value tokens of one line, starting at token `from`.
class Options {
 public:
  Options(const std::vector<Token>& tokens, std::size_t from,
          std::size_t line)
      : line_(line) {
    for (std::size_t i = from; i < tokens.size(); ++i) {
      const auto eq = tokens[i].text.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError("expected key=value, got '" + tokens[i].text + "'",
                         line, tokens[i].column);
      }
      values_[tokens[i].text.substr(0, eq)] = {tokens[i].text.substr(eq + 1),
                                               tokens[i].column + eq + 1};
    }
  }

  template <class F>
  auto Get(const std::string& key, F parse) -> decltype(parse("")) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw ParseError("missing option '" + key + "'", line_, 1);
    }
    auto [text, column] = it->second;
    values_.erase(it);
    try {
      return parse(text);
    } catch (const ParseError& e) {
      throw ParseError(e.message(), line_, column);
    }
  }
  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  void Finish() const {
    if (!values_.empty()) {
      const auto& [key, v] = *values_.begin();
      throw ParseError("unknown option '" + key + "'", line_, v.second);
    }
  }

 private:
  std::size_t line_;
  std::map<std::string, std::pair<std::string, std::size_t>> values_;
};

double PositiveReal(std::string_view s) {
  const double v = ParseDouble(s);
  if (!(v > 0)) throw ParseError("expected a positive number");
  return v;
}

double NonNegativeReal(std::string_view s) {
  const double v = ParseDouble(s);
  if (!(v >= 0)) throw ParseError("expected a non-negative number");
  return v;
}

DeviceProfile ParseDevice(Options& o, DeviceProfile d) {
  if (o.Has("mult")) d.mult_rate = o.Get("mult", PositiveReal);
  if (o.Has("reduce")) d.reduce_rate = o.Get("reduce", PositiveReal);
  if (o.Has("mem")) d.mem_bytes = o.Get("mem", ParseByteSize);
  if (o.Has("swap")) {
    d.swap_factor = o.Get("swap", [](std::string_view s) {
      const double v = ParseDouble(s);
      if (!(v >= 1)) throw ParseError("swap factor must be >= 1");
      return v;
    });
  }
  if (o.Has("bpe")) {
    d.bytes_per_element = o.Get("bpe", [](std::string_view s) {
      const auto v = ParseInt(s);
      if (v < 1) throw ParseError("bytes per element must be >= 1");
      return v;
    });
  }
  o.Finish();
  return d;
}

struct TaskRef {
  std::size_t layer = 0;
  enum { kLayer, kShard, kMerge } kind = kLayer;
  std::optional<SplitMethod> method;
  int shard = -1;
};

TaskRef ParseTask(std::string_view text) {
  if (text.size() < 2 || text[0] != 'L') {
    throw ParseError("bad task '" + std::string(text) + "'");
  }
  const auto dot = text.find('.');
  TaskRef t;
  const auto idx = ParseInt(text.substr(1, dot == std::string_view::npos
                                               ? std::string_view::npos
                                               : dot - 1));
  if (idx < 0) throw ParseError("bad task '" + std::string(text) + "'");
  t.layer = static_cast<std::size_t>(idx);
  if (dot == std::string_view::npos) return t;
  const std::string_view rest = text.substr(dot + 1);
  if (rest == "merge") {
    t.kind = TaskRef::kMerge;
    return t;
  }
  const auto hash = rest.find('#');
  if (hash == std::string_view::npos) {
    throw ParseError("shard task needs '#<index>': '" + std::string(text) +
                     "'");
  }
  t.kind = TaskRef::kShard;
  t.method = ParseSplitMethod(rest.substr(0, hash));
  t.shard = static_cast<int>(ParseInt(rest.substr(hash + 1)));
  return t;
}

struct NodeLine {
  int id;
  std::size_t line;
  std::vector<TaskRef> tasks;
};

Assignment DeriveAssignment(const ModelGraph& graph,
                            const std::vector<NodeLine>& nodes) {
  struct SplitInfo {
    std::optional<SplitMethod> method;
    std::map<int, int> shards;  // shard index -> node
    int merge = -1;
    std::size_t line = 0;
  };
  std::map<std::size_t, SplitInfo> splits;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<int>> groups;
  const std::size_t n_layers = graph.layers.size();
  for (const auto& n : nodes) {
    std::size_t i = 0;
    const auto& t = n.tasks;
    auto bad = [&](const std::string& msg) {
      return ParseError("node " + std::to_string(n.id) + ": " + msg, n.line, 1);
    };
    for (const auto& task : t) {
      if (task.layer >= n_layers) {
        throw bad("task refers to L" + std::to_string(task.layer) +
                  " but the model has " + std::to_string(n_layers) + " layers");
      }
    }
    if (i < t.size() && t[i].kind == TaskRef::kShard) {
      SplitInfo& info = splits[t[i].layer];
      if (!info.method) info.method = t[i].method;
      if (!(*info.method == *t[i].method)) {
        throw bad("conflicting split methods for L" +
                  std::to_string(t[i].layer));
      }
      if (!info.shards.emplace(t[i].shard, n.id).second) {
        throw bad("duplicate shard " + std::to_string(t[i].shard));
      }
      info.line = n.line;
      ++i;
    }
    if (i < t.size() && t[i].kind == TaskRef::kMerge) {
      const std::size_t l = t[i].layer;
      if (splits.count(l) && splits[l].merge >= 0) {
        throw bad("L" + std::to_string(l) + " merged twice");
      }
      splits[l].merge = n.id;
      ++i;
      // Trailing layers of the split unit run right after the merge.
      for (std::size_t e = l + 1; e <= UnitEnd(graph, l); ++e, ++i) {
        if (i >= t.size() || t[i].kind != TaskRef::kLayer || t[i].layer != e) {
          throw bad("L" + std::to_string(e) + " must follow L" +
                    std::to_string(l) + ".merge");
        }
      }
    }
    if (i < t.size()) {
      const std::size_t first = t[i].layer;
      for (std::size_t j = i; j < t.size(); ++j) {
        if (t[j].kind != TaskRef::kLayer || t[j].layer != first + (j - i)) {
          throw bad("layers of a node must be a contiguous run");
        }
      }
      groups[{first, t.back().layer}].push_back(n.id);
    }
  }
  Assignment a;
  for (auto& [l, info] : splits) {
    Stage s;
    s.first_layer = l;
    s.last_layer = UnitEnd(graph, l);
    if (!info.method) {
      throw ParseError("L" + std::to_string(l) + ".merge without shards");
    }
    s.split = info.method;
    for (std::size_t j = 0; j < info.shards.size(); ++j) {
      auto it = info.shards.find(static_cast<int>(j));
      if (it == info.shards.end()) {
        throw ParseError("split at L" + std::to_string(l) + " misses shard " +
                             std::to_string(j),
                         info.line, 1);
      }
      s.nodes.push_back(it->second);
    }
    s.merge_node = info.merge;
    a.stages.push_back(s);
  }
  for (auto& [range, ids] : groups) {
    Stage s;
    s.first_layer = range.first;
    s.last_layer = range.second;
    s.nodes = ids;
    std::sort(s.nodes.begin(), s.nodes.end());
    a.stages.push_back(s);
  }
  std::sort(a.stages.begin(), a.stages.end(),
            [](const Stage& x, const Stage& y) {
              return x.first_layer < y.first_layer;
            });
  try {
    ValidateAssignment(graph, a);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid plan: ") + e.what());
  }
  return a;
}

// `link` and `device` lines, shared by plan and profile files.
void ParseProfileLine(const std::vector<Token>& tokens, std::size_t line,
                      LinkProfile& link, DeviceProfile& default_device,
                      std::map<int, DeviceProfile>& devices) {
  if (tokens[0].text == "link") {
    Options o(tokens, 1, line);
    link.bandwidth_bps = o.Get("bandwidth", PositiveReal);
    link.latency_s = o.Get("latency", NonNegativeReal);
    o.Finish();
    return;
  }
  if (tokens.size() < 2) throw ParseError("device needs a name", line, 1);
  Options o(tokens, 2, line);
  if (tokens[1].text == "default") {
    default_device = ParseDevice(o, default_device);
    return;
  }
  int id = 0;
  try {
    id = static_cast<int>(ParseInt(tokens[1].text));
  } catch (const ParseError& e) {
    throw ParseError(e.message(), line, tokens[1].column);
  }
  devices[id] = ParseDevice(o, default_device);
}

}  // namespace

std::string FormatPlan(const PlanFile& plan) {
  std::ostringstream os;
  os << "plan 1\n";
  os << "seed " << plan.seed << "\n";
  os << "link bandwidth=" << FormatDouble(plan.link.bandwidth_bps)
     << " latency=" << FormatDouble(plan.link.latency_s) << "\n";
  os << "device default " << FormatDevice(plan.default_device) << "\n";
  for (const auto& [id, d] : plan.devices) {
    os << "device " << id << " " << FormatDevice(d) << "\n";
  }
  const int n = plan.assignment.NodeCount();
  for (int id = 0; id < n; ++id) {
    os << "node " << id << " "
       << (static_cast<std::size_t>(id) < plan.addresses.size()
               ? plan.addresses[id]
               : std::string("-"))
       << " :";
    const auto tasks = NodeTasks(plan.graph, plan.assignment, id);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      os << (i ? ", " : " ") << tasks[i];
    }
    os << "\n";
  }
  os << "model-begin\n" << FormatModel(plan.graph) << "model-end\n";
  return os.str();
}

PlanFile ParsePlan(std::string_view text) {
  const auto lines = SplitLines(text);
  PlanFile plan;
  bool header = false, have_model = false;
  std::vector<NodeLine> nodes;
  std::map<int, std::string> addresses;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line = li + 1;
    const auto tokens = PlanTokens(lines[li]);
    if (tokens.empty()) continue;
    const std::string& kw = tokens[0].text;
    if (!header) {
      if (kw != "plan" || tokens.size() != 2 || tokens[1].text != "1") {
        throw ParseError("expected 'plan 1' header", line, tokens[0].column);
      }
      header = true;
      continue;
    }
    if (kw == "seed") {
      if (tokens.size() != 2) throw ParseError("seed takes one value", line, 1);
      std::uint64_t v = 0;
      const auto& s = tokens[1].text;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw ParseError("bad seed '" + s + "'", line, tokens[1].column);
      }
      plan.seed = v;
    } else if (kw == "link" || kw == "device") {
      ParseProfileLine(tokens, line, plan.link, plan.default_device,
                       plan.devices);
    } else if (kw == "node") {
      if (tokens.size() < 4 || tokens[3].text != ":") {
        throw ParseError("expected 'node <id> <address> : <tasks>'", line,
                         tokens[0].column);
      }
      NodeLine n;
      n.line = line;
      try {
        n.id = static_cast<int>(ParseInt(tokens[1].text));
      } catch (const ParseError& e) {
        throw ParseError(e.message(), line, tokens[1].column);
      }
      if (n.id < 0 || addresses.count(n.id)) {
        throw ParseError("bad or duplicate node id", line, tokens[1].column);
      }
      addresses[n.id] = tokens[2].text;
      std::string joined;
      for (std::size_t i = 4; i < tokens.size(); ++i) joined += tokens[i].text;
      std::size_t start = 0;
      while (start < joined.size()) {
        auto comma = joined.find(',', start);
        if (comma == std::string::npos) comma = joined.size();
        const std::string task = joined.substr(start, comma - start);
        if (task.empty()) throw ParseError("empty task", line, tokens[3].column);
        try {
          n.tasks.push_back(ParseTask(task));
        } catch (const ParseError& e) {
          throw ParseError(e.message(), line, tokens[3].column + 2);
        }
        start = comma + 1;
      }
      nodes.push_back(std::move(n));
    } else if (kw == "model-begin") {
      std::string body;
      std::size_t end = li + 1;
      while (end < lines.size()) {
        const auto t = PlanTokens(lines[end]);
        if (t.size() == 1 && t[0].text == "model-end") break;
        body += std::string(lines[end]) + "\n";
        ++end;
      }
      if (end >= lines.size()) {
        throw ParseError("model-begin without model-end", line, 1);
      }
      try {
        plan.graph = ParseModel(body);
      } catch (const ParseError& e) {
        throw ParseError(e.message(), e.line() ? e.line() + line : line,
                         e.column());
      }
      have_model = true;
      li = end;
    } else {
      throw ParseError("unknown plan directive '" + kw + "'", line,
                       tokens[0].column);
    }
  }
  if (!header) throw ParseError("empty plan");
  if (!have_model) throw ParseError("plan has no embedded model");
  if (nodes.empty()) throw ParseError("plan has no nodes");
  plan.assignment = DeriveAssignment(plan.graph, nodes);
  for (const auto& [id, addr] : addresses) {
    if (static_cast<std::size_t>(id) >= plan.addresses.size()) {
      plan.addresses.resize(id + 1);
    }
    plan.addresses[id] = addr;
  }
  return plan;
}

Profiles ParseProfiles(std::string_view text) {
  Profiles p;
  const auto lines = SplitLines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto tokens = PlanTokens(lines[li]);
    if (tokens.empty()) continue;
    if (tokens[0].text != "link" && tokens[0].text != "device") {
      throw ParseError("expected a link or device line", li + 1,
                       tokens[0].column);
    }
    ParseProfileLine(tokens, li + 1, p.link, p.default_device, p.devices);
  }
  return p;
}

Profiles LoadProfiles(const std::string& path) {
  const std::string text = ReadFile(path);
  try {
    return ParseProfiles(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

PlanFile LoadPlan(const std::string& path) {
  const std::string text = ReadFile(path);
  try {
    return ParsePlan(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::uint64_t PlanHash(const PlanFile& plan) {
  return Fnv1a64(FormatPlan(plan));
}

std::string HashToHex(std::uint64_t hash) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

std::vector<std::string> LocalAddresses(int count, int base_port) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) {
    out.push_back("127.0.0.1:" + std::to_string(base_port + i));
  }
  return out;
}

}  // namespace cdnn
