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

// Two-stage reusable-block search: a bag-of-words cosine screen over
// reasoning steps, then a layer-averaged normalized Euclidean distance over
// the aligned KV blocks of the surviving step pairs.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "memshare/kvgen.h"

namespace memshare {

class SparseTokenVector {
 public:
  SparseTokenVector() = default;
  explicit SparseTokenVector(std::span<const TokenId> tokens);

  // Sorted by token id; counts are always > 0.
  const std::vector<std::pair<TokenId, std::uint32_t>>& entries() const { return entries_; }
  std::uint64_t squared_norm() const { return squared_norm_; }
  double norm() const { return norm_; }
  bool empty() const { return entries_.empty(); }
  std::uint32_t count(TokenId token) const;

 private:
  std::vector<std::pair<TokenId, std::uint32_t>> entries_;
  std::uint64_t squared_norm_ = 0;
  double norm_ = 0.0;
};

SparseTokenVector encode_step(const StepRecord& step);

// In [0, 1]. Integer dot products, so identical (or proportional) inputs
// give exactly 1.0. Throws std::invalid_argument on an empty vector.
double cosine(const SparseTokenVector& a, const SparseTokenVector& b);

struct Thresholds {
  double step_threshold = 0.8;           // tau_s, cosine floor
  double block_distance_threshold = 0.0; // tau_b, distance ceiling
  std::size_t top_k = 8;

  void validate() const;
};

struct CandidateMatch {
  std::size_t curr_step = 0;
  std::size_t cand_step = 0;
  double cosine = 0.0;
};

// Block references are logical block indices in the sequence
// (absolute token position / block_size).
struct BlockMatch {
  std::size_t target_block = 0;
  std::size_t source_block = 0;
  std::size_t target_step = 0;
  std::size_t source_step = 0;
  double distance = 0.0;

  bool operator==(const BlockMatch&) const = default;
};

// Read-only view of one KV block: for each layer, `fill` token rows of
// [heads x head_dim] floats.
struct BlockKVView {
  std::span<const float> keys;
  std::span<const float> values;
  std::size_t layer_stride = 0;
  KVShape shape{};
  std::size_t block_size = 0;
  std::size_t fill = 0;

  std::span<const float> key_layer(std::size_t layer) const;
  std::span<const float> value_layer(std::size_t layer) const;
};

BlockKVView block_view(const KVStates& kv, std::size_t block_index, std::size_t block_size);

// (1/N) * sum_layers (dK + dV) / (2 * block_size * heads), with dK/dV the
// Frobenius distance of that layer's block slice. Both blocks must be full
// and identically shaped.
double stage2_block_distance(const BlockKVView& b1, const BlockKVView& b2);

// Earlier steps with cosine >= tau_s, best first (ties: lower step index),
// truncated to top_k.
std::vector<CandidateMatch> stage1_candidates(const StepRecord& curr,
                                              std::span<const StepRecord> history,
                                              const Thresholds& th);

// Full blocks lying entirely inside a step: [first, first + count).
struct BlockRange {
  std::size_t first = 0;
  std::size_t count = 0;
};
BlockRange full_blocks_of_step(const StepRecord& step, std::size_t block_size);

// Runs both stages for one step against every earlier step. Each target
// block is reported at most once, paired with its nearest source (ties go
// to the earliest source block).
std::vector<BlockMatch> find_reusable_blocks_for_step(const Trace& trace, const KVStates& kv,
                                                      const Thresholds& th,
                                                      std::size_t block_size,
                                                      std::size_t step_index);

// Latest step of the trace.
std::vector<BlockMatch> find_reusable_blocks(const Trace& trace, const KVStates& kv,
                                             const Thresholds& th, std::size_t block_size);

// Every step in order; offline whole-trace analysis.
std::vector<BlockMatch> find_reusable_blocks_all(const Trace& trace, const KVStates& kv,
                                                 const Thresholds& th, std::size_t block_size);

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double at(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

// Stage-2 distance over every pair of full blocks in the sequence.
DistanceMatrix all_pairs_block_distance(const KVStates& kv, std::size_t block_size);

// Quantile (linear interpolation) of the off-diagonal all-pairs distances.
double calibrate_block_threshold(const KVStates& kv, std::size_t block_size,
                                 double quantile = 0.10);

struct StepSimilarity {
  std::size_t step_index = 0;
  std::optional<std::size_t> best_match;  // earliest step with the max cosine
  double cosine = 0.0;
};

std::vector<StepSimilarity> step_similarities(const Trace& trace);

// Fraction of steps whose max cosine against any earlier step is strictly
// above the threshold. Step 0 never counts.
double similarity_ratio(const Trace& trace, double threshold);
double similarity_ratio(std::span<const StepSimilarity> sims, double threshold);

}  // namespace memshare
