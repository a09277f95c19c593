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

// CSV/JSON writers for every report the CLI emits. Each report starts with
// '#' meta lines (tool version, command, seed, config); the rest is data.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "memshare/bounds.h"
#include "memshare/kvgen.h"
#include "memshare/schedsim.h"
#include "memshare/simfilter.h"

namespace memshare {

using ordered_json = nlohmann::ordered_json;

const char* tool_version();

struct ReportMeta {
  std::string command;
  std::uint64_t seed = 0;
  ordered_json config = ordered_json::object();
};

void write_meta_header(std::ostream& out, const ReportMeta& meta);
ordered_json meta_json(const ReportMeta& meta);

// Drops '#' lines.
std::string strip_meta(const std::string& text);

// Shortest round-trip text for a threshold ("0.8", not "0.800000").
std::string format_threshold(double t);

// seq_id,step_index,best_match_index,cosine,redundant@t1,...
void write_similarity_csv(std::ostream& out, std::span<const Trace> traces,
                          std::span<const double> thresholds);

// seq_id,num_steps,ratio@t1,... then a "mean" row averaged over traces.
void write_ratios_csv(std::ostream& out, std::span<const Trace> traces,
                      std::span<const double> thresholds);

// Square matrix with a leading block-index column.
void write_distance_csv(std::ostream& out, const DistanceMatrix& m);

void write_matches_csv(std::ostream& out, std::span<const BlockMatch> matches);

ordered_json metrics_json(const SimMetrics& m);

// tick,allocated,running,waiting,swapped
void write_occupancy_csv(std::ostream& out, const SimMetrics& m);

// epsilon,delta,t,d_h,max_weight_ratio,max_output_ratio,trials
void write_sweep_csv(std::ostream& out, const SweepResult& r);

}  // namespace memshare
