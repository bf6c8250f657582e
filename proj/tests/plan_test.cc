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

#include "cdnn/error.h"
#include "gtest/gtest.h"

namespace cdnn {
namespace {

// toy: 0 conv, 1 relu, 2 maxpool, 3 conv, 4 relu, 5 flatten, 6 dense,
// 7 relu, 8 dense.
ModelGraph Toy() { return LoadModel(CDNN_MODELS_DIR "/toy.mdl"); }

Stage Plain(std::size_t a, std::size_t b, std::vector<int> nodes) {
  Stage s;
  s.first_layer = a;
  s.last_layer = b;
  s.nodes = std::move(nodes);
  return s;
}

Stage Split(std::size_t a, std::size_t b, SplitMethod m,
            std::vector<int> nodes, int merge = -1) {
  Stage s = Plain(a, b, std::move(nodes));
  s.split = m;
  s.merge_node = merge;
  return s;
}

// conv+relu+pool on node 0, conv split across 1 and 2 merged on 3, which
// runs the rest.
Assignment SplitThenTail() {
  Assignment a;
  a.stages = {Plain(0, 2, {0}), Split(3, 5, ConvChannelSplit{8}, {1, 2}),
              Plain(6, 8, {3})};
  PlaceMergeNodes(a);
  return a;
}

PlanFile MakePlan(const Assignment& a) {
  PlanFile p;
  p.seed = 7;
  p.graph = Toy();
  p.assignment = a;
  p.addresses = LocalAddresses(a.NodeCount(), 9000);
  p.default_device.mem_bytes = 64 << 20;
  DeviceProfile slow;
  slow.mult_rate = 1e8;
  p.devices[2] = slow;
  return p;
}

TEST(PlanTest, UnitEnd) {
  const auto g = Toy();
  EXPECT_EQ(UnitEnd(g, 0), 2u);
  EXPECT_EQ(UnitEnd(g, 3), 5u);
  EXPECT_EQ(UnitEnd(g, 6), 7u);
  EXPECT_EQ(UnitEnd(g, 8), 8u);
}

TEST(PlanTest, MergePlacement) {
  auto a = SplitThenTail();
  EXPECT_EQ(a.stages[1].merge_node, 3);
  Assignment last;
  last.stages = {Plain(0, 7, {0}), Split(8, 8, DenseOutputSplit{2}, {1, 2})};
  PlaceMergeNodes(last);
  EXPECT_EQ(last.stages[1].merge_node, 1);
  EXPECT_NO_THROW(ValidateAssignment(Toy(), last));
}

TEST(PlanTest, ValidationErrors) {
  const auto g = Toy();
  Assignment gap;
  gap.stages = {Plain(0, 2, {0}), Plain(4, 8, {1})};
  EXPECT_THROW(ValidateAssignment(g, gap), InvalidArgument);
  Assignment shared;
  shared.stages = {Plain(0, 2, {0}), Plain(3, 8, {0})};
  EXPECT_THROW(ValidateAssignment(g, shared), InvalidArgument);
  Assignment wrong_count;
  wrong_count.stages = {Plain(0, 2, {0}),
                        Split(3, 5, ConvChannelSplit{8}, {1, 2, 3}, 1),
                        Plain(6, 8, {4})};
  EXPECT_THROW(ValidateAssignment(g, wrong_count), InvalidArgument);
  Assignment on_relu;
  on_relu.stages = {Plain(0, 0, {0}), Split(1, 2, DenseOutputSplit{2}, {1, 2}, 1),
                    Plain(3, 8, {3})};
  EXPECT_THROW(ValidateAssignment(g, on_relu), InvalidArgument);
  Assignment past_unit;
  past_unit.stages = {Plain(0, 2, {0}),
                      Split(3, 6, ConvChannelSplit{8}, {1, 2}, 1),
                      Plain(7, 8, {3})};
  EXPECT_THROW(ValidateAssignment(g, past_unit), InvalidArgument);
  Assignment skip_id;
  skip_id.stages = {Plain(0, 2, {0}), Plain(3, 8, {2})};
  EXPECT_THROW(ValidateAssignment(g, skip_id), InvalidArgument);
  EXPECT_NO_THROW(ValidateAssignment(g, SplitThenTail()));
}

TEST(PlanTest, ProgramsForSplitMergedOnNextNode) {
  const auto g = Toy();
  const auto progs = BuildNodePrograms(g, SplitThenTail());
  ASSERT_EQ(progs.size(), 4u);
  EXPECT_TRUE(progs[0].is_entry());
  EXPECT_EQ(progs[0].layers, (std::vector<std::size_t>{0, 1, 2}));
  // Node 0 sends each shard its channel slice of the 8x8x8 pooled map.
  ASSERT_EQ(progs[0].sends.size(), 2u);
  EXPECT_EQ(progs[0].sends[0].payload, SendSpec::Payload::kShardInput);
  EXPECT_EQ(progs[0].sends[0].to, std::vector<int>{1});
  EXPECT_EQ(progs[0].sends[0].elems, 8 * 8 * 8);
  EXPECT_EQ(progs[0].sends[1].to, std::vector<int>{2});
  for (int n : {1, 2}) {
    EXPECT_EQ(progs[n].shard_stage, 1);
    EXPECT_EQ(progs[n].primary_from, std::vector<int>{0});
    ASSERT_EQ(progs[n].sends.size(), 1u);
    EXPECT_EQ(progs[n].sends[0].payload, SendSpec::Payload::kPartial);
    EXPECT_EQ(progs[n].sends[0].to, std::vector<int>{3});
    EXPECT_EQ(progs[n].sends[0].elems, 8 * 8 * 8);
  }
  const auto& m = progs[3];
  EXPECT_TRUE(m.primary_from.empty());
  EXPECT_EQ(m.merge_stage, 1);
  EXPECT_EQ(m.gather_from, (std::vector<int>{1, 2}));
  EXPECT_EQ(m.layers, (std::vector<std::size_t>{4, 5, 6, 7, 8}));
  EXPECT_TRUE(m.is_exit());
  EXPECT_EQ(m.sends.size(), 1u);
}

TEST(PlanTest, ProgramsForReplicas) {
  Assignment a;
  a.stages = {Plain(0, 5, {0, 1}), Plain(6, 8, {2})};
  const auto progs = BuildNodePrograms(Toy(), a);
  EXPECT_EQ(progs[1].replica_index, 1);
  EXPECT_EQ(progs[1].replica_count, 2);
  EXPECT_EQ(progs[2].primary_from, (std::vector<int>{0, 1}));
  EXPECT_EQ(progs[0].sends[0].to, std::vector<int>{2});
}

TEST(PlanTest, ShardMergesOnItself) {
  Assignment a;
  a.stages = {Plain(0, 7, {0}), Split(8, 8, DenseOutputSplit{2}, {1, 2})};
  PlaceMergeNodes(a);
  const auto progs = BuildNodePrograms(Toy(), a);
  EXPECT_EQ(progs[1].merge_stage, 1);
  EXPECT_EQ(progs[1].shard_index, 0);
  EXPECT_TRUE(progs[1].is_exit());
  EXPECT_EQ(progs[2].sends[0].to, std::vector<int>{1});
  EXPECT_FALSE(progs[2].is_exit());
}

TEST(PlanTest, TextRoundTrip) {
  const PlanFile p = MakePlan(SplitThenTail());
  const std::string text = FormatPlan(p);
  EXPECT_NE(text.find("node 3 127.0.0.1:9003 : L3.merge, L4, L5, L6, L7, L8"),
            std::string::npos)
      << text;
  EXPECT_NE(text.find("L3.channel[8]#1"), std::string::npos) << text;
  const PlanFile q = ParsePlan(text);
  EXPECT_EQ(q.assignment, p.assignment);
  EXPECT_EQ(q.seed, 7u);
  EXPECT_EQ(q.addresses, p.addresses);
  EXPECT_EQ(q.default_device, p.default_device);
  EXPECT_EQ(q.DeviceFor(2).mult_rate, 1e8);
  EXPECT_EQ(q.DeviceFor(1), p.default_device);
  EXPECT_EQ(FormatPlan(q), text);
  EXPECT_EQ(PlanHash(q), PlanHash(p));
}

TEST(PlanTest, HashChangesWithPlan) {
  PlanFile p = MakePlan(SplitThenTail());
  const auto h = PlanHash(p);
  p.seed = 8;
  EXPECT_NE(PlanHash(p), h);
  EXPECT_EQ(HashToHex(0x1f).size(), 16u);
  EXPECT_EQ(HashToHex(0x1f), "000000000000001f");
}

TEST(PlanTest, ReplicasRoundTrip) {
  Assignment a;
  a.stages = {Plain(0, 5, {0, 1}), Plain(6, 8, {2})};
  const PlanFile p = MakePlan(a);
  EXPECT_EQ(ParsePlan(FormatPlan(p)).assignment, a);
}

TEST(PlanTest, ParseErrors) {
  const std::string good = FormatPlan(MakePlan(SplitThenTail()));
  auto replace = [&](const std::string& from, const std::string& to) {
    std::string t = good;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  EXPECT_THROW(ParsePlan(""), ParseError);
  EXPECT_THROW(ParsePlan(replace("plan 1", "plan 2")), ParseError);
  EXPECT_THROW(ParsePlan(replace("L3.channel[8]#1", "L3.channel[8]#0")),
               ParseError);
  EXPECT_THROW(ParsePlan(replace("L3.merge, L4", "L3.merge")), ParseError);
  EXPECT_THROW(ParsePlan(replace("link bandwidth", "link speed")), ParseError);
  try {
    ParsePlan(replace("dense out=10", "dense out=x"));
    FAIL();
  } catch (const ParseError& e) {
    // The model error carries its line in the plan file.
    const std::size_t line =
        std::count(good.begin(), good.begin() + good.find("dense out=10"),
                   '\n') + 1;
    EXPECT_EQ(e.line(), line);
  }
}

TEST(PlanTest, ProfilesFile) {
  const Profiles p = ParseProfiles(
      "# desk cluster\n"
      "link bandwidth=1e6 latency=0.002\n"
      "device default mult=2e8 reduce=1e8 mem=256MB swap=3\n"
      "device 2 mult=4e8\n");
  EXPECT_EQ(p.link, (LinkProfile{1e6, 0.002}));
  EXPECT_EQ(p.default_device.mem_bytes, 256 << 20);
  EXPECT_EQ(p.devices.at(2).mult_rate, 4e8);
  EXPECT_EQ(p.devices.at(2).reduce_rate, 1e8);
  EXPECT_THROW(ParseProfiles("node 0 x : L0\n"), ParseError);
  EXPECT_TRUE(ParseProfiles("").devices.empty());
}

}  // namespace
}  // namespace cdnn
