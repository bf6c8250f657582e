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

// Runs a plan as one process per node over TCP.
//
// Every node listens on its plan address. Upstream nodes connect to their
// downstream peers and open with a Hello carrying their id and the plan hash;
// the receiver answers with its own Hello or, on a hash mismatch, closes the
// connection and fails. The driver connects to every node the same way (id
// kDriverNodeId): it feeds the entry nodes, receives the exit nodes' outputs
// and every node's Stats, and ends the run with Shutdown.
//
// Inside a node, one receiver thread per inbound connection fills a bounded
// per-edge queue (the peer blocks when it is full) and one worker thread runs
// the node program, sending its outputs synchronously.

#ifndef CDNN_NETEXEC_H_
#define CDNN_NETEXEC_H_

#include <functional>
#include <ostream>
#include <string>
#include <sys/types.h>
#include <vector>

#include "cdnn/plan.h"
#include "cdnn/stats.h"
#include "cdnn/tensor.h"
#include "cdnn/wire.h"

namespace cdnn {

// Called for every tensor frame put on an edge, by its sender.
using FrameTap = std::function<void(int from, int to, const TensorMsg&)>;

struct ServeOptions {
  std::string bind;  // plan address of the node when empty
  int stats_every = 10;
  std::size_t queue_capacity = 4;
  double connect_timeout_s = 30.0;
  FrameTap tap;
  std::ostream* log = nullptr;
};

// Serves until the driver sends Shutdown. Throws WireError on a plan hash
// mismatch or protocol violation and IoError when a peer disconnects early.
void ServeNode(const PlanFile& plan, int node, const ServeOptions& options = {});

struct DriveOptions {
  double timeout_s = 60.0;  // per inference, measured from the last progress
  double connect_timeout_s = 30.0;
  FrameTap tap;
};

struct DriveResult {
  std::vector<Tensor> outputs;  // in inference order
  PipelineStats stats;          // last snapshot from every node
  double seconds = 0.0;
};

DriveResult Drive(const PlanFile& plan, const std::vector<Tensor>& inputs,
                  const DriveOptions& options = {});

// Port block for local runs, derived from the process id.
int LocalBasePort();

// `serve` processes of the cdnn executable, one per node, on localhost.
class LocalCluster {
 public:
  // Rewrites the plan's addresses to local ports, writes it to
  // <work_dir>/local.plan and starts the nodes, logging to
  // <work_dir>/node<i>.log.
  LocalCluster(const std::string& executable, PlanFile plan,
               const std::string& work_dir);
  ~LocalCluster();
  LocalCluster(const LocalCluster&) = delete;
  LocalCluster& operator=(const LocalCluster&) = delete;

  const PlanFile& plan() const { return plan_; }
  const std::string& plan_path() const { return plan_path_; }
  // Exit codes in node order; processes still running after the timeout are
  // killed and reported as -1.
  std::vector<int> Wait(double timeout_s);

 private:
  PlanFile plan_;
  std::string plan_path_;
  std::vector<pid_t> pids_;
};

}  // namespace cdnn

#endif  // CDNN_NETEXEC_H_
