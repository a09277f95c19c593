/* Copyright 2026 The memshare Authors. All Rights Reserved.

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

#pragma once

// Continuous-batching simulator over a fixed block budget. Decode outputs are
// scripted (replayed from kvgen), so sharing can only change memory use and
// scheduling, never what a request emits.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "memshare/blockstore.h"
#include "memshare/kvgen.h"
#include "memshare/simfilter.h"

namespace memshare {

struct RequestScript {
  Trace trace;
  KVStates kv;
};

enum class RequestState { kWaiting, kRunning, kSwapped, kFinished };

struct Request {
  std::string seq_id;
  std::shared_ptr<const RequestScript> script;
  std::size_t arrival_tick = 0;
  RequestState state = RequestState::kWaiting;
  std::size_t tokens_emitted = 0;

  std::size_t length() const { return script->trace.total_tokens(); }
};

// Blocks a request must draw to be (re)admitted: 1 for a fresh request,
// the replayed prefix plus the next token for a swapped one.
std::size_t next_block_demand(const Request& request, std::size_t block_size);

// Length of the longest FIFO prefix whose summed demand fits.
std::size_t admissible_prefix(std::size_t free_blocks, std::span<const std::size_t> demands);

std::vector<Request> admissible_batch(std::size_t free_blocks,
                                      const std::vector<Request>& waiting,
                                      std::size_t block_size);

struct SimConfig {
  std::size_t block_budget = 0;
  StoreDims dims{};
  Thresholds thresholds{};
  bool sharing_enabled = false;
  std::size_t max_ticks = 1'000'000;
  // Also run the filter every this many ticks (0 = only at step ends).
  std::size_t evaluator_period = 0;
};

struct OccupancySample {
  std::size_t tick = 0;
  std::size_t allocated = 0;
  std::size_t running = 0;
  std::size_t waiting = 0;
  std::size_t swapped = 0;
};

struct SimMetrics {
  std::size_t ticks_elapsed = 0;
  std::size_t tokens_total = 0;
  double throughput = 0.0;
  std::size_t peak_allocated_blocks = 0;
  double mean_batch_size = 0.0;
  double affected_ratio_final = 0.0;
  std::size_t shares_applied = 0;
  std::size_t blocks_freed_by_sharing = 0;
  std::size_t filter_invocations = 0;
  std::size_t preemptions = 0;
  std::size_t finished_requests = 0;
  bool all_finished = false;
  std::vector<std::size_t> tokens_per_request;  // request order
  std::vector<OccupancySample> occupancy;
};

// Throws std::invalid_argument if seq_ids repeat or any single request could
// not complete within the block budget.
SimMetrics run_simulation(const SimConfig& cfg, const std::vector<Request>& requests);

struct RunComparison {
  SimMetrics baseline;
  SimMetrics shared;
  double throughput_gain = 0.0;  // shared / baseline - 1
};

RunComparison compare_runs(const SimConfig& cfg, const std::vector<Request>& requests);

// Synthetic request set: one kvgen trace per request with a shared
// projection set.
struct WorkloadConfig {
  std::uint64_t seed = 0;
  std::size_t num_requests = 8;
  TraceConfig trace{};  // seed and seq_id are overridden per request
  KVShape shape{};
  std::size_t embed_dim = 32;
  double noise_scale = 0.0;
};

std::vector<Request> make_requests(const WorkloadConfig& cfg);

// tau_b calibrated on a redundancy-free trace drawn from the same workload.
double calibrate_workload_threshold(const WorkloadConfig& cfg, std::size_t block_size,
                                    double quantile = 0.10);

// Blocks needed to hold every request at once without sharing.
std::size_t unshared_blocks_for(const std::vector<Request>& requests, std::size_t block_size);

}  // namespace memshare
