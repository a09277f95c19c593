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

// Synthetic reasoning traces with planted redundancy, and the per-layer,
// per-head KV states a model would have cached for them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memshare/tensor.h"

namespace memshare {

using TokenId = std::uint32_t;

struct StepRecord {
  std::string seq_id;
  std::size_t step_index = 0;
  std::string text;
  std::vector<TokenId> tokens;
  std::size_t token_offset = 0;

  std::size_t end_offset() const { return token_offset + tokens.size(); }
};

struct Trace {
  std::string seq_id;
  std::vector<StepRecord> steps;
  // For each step, the earlier step it was generated from (if any).
  std::vector<std::optional<std::size_t>> redundancy_labels;

  std::size_t total_tokens() const;
  // Token ids of the whole sequence in position order.
  std::vector<TokenId> flat_tokens() const;
  // Throws std::invalid_argument if offsets/labels are inconsistent.
  void validate() const;
};

struct TraceConfig {
  std::uint64_t seed = 0;
  std::size_t num_steps = 32;
  std::size_t min_step_len = 16;
  std::size_t max_step_len = 64;
  std::size_t vocab_size = 512;
  double redundancy_prob = 0.3;
  double mutation_rate = 0.0;
  // Fresh step lengths are rounded up to a multiple of this. Setting it to
  // the cache block size makes every step start on a block boundary.
  std::size_t step_quantum = 1;
  // Empty means "s<seed>".
  std::string seq_id;
};

Trace generate_trace(const TraceConfig& cfg);

// "w5 w9 w12"; never contains a step delimiter.
std::string render_step_text(std::span<const TokenId> tokens);

// Splits on the delimiter, dropping empty segments.
std::vector<std::string> segment_steps(std::string_view raw_text, std::string_view delimiter);

struct KVShape {
  std::size_t num_layers = 4;
  std::size_t num_heads = 2;
  std::size_t head_dim = 8;

  std::size_t row_elems() const { return num_heads * head_dim; }
  std::size_t token_elems() const { return num_layers * num_heads * head_dim; }
  bool operator==(const KVShape&) const = default;
};

enum class ProjectionRole : std::uint8_t { kQuery = 0, kKey = 1, kValue = 2 };

// Deterministic W_q / W_k / W_v per (layer, head), each embed_dim x head_dim.
class ProjectionSet {
 public:
  ProjectionSet(std::uint64_t seed, KVShape shape, std::size_t embed_dim = 32);

  std::uint64_t seed() const { return seed_; }
  const KVShape& shape() const { return shape_; }
  std::size_t embed_dim() const { return embed_dim_; }

  // Unit-norm embedding derived from a hash of (seed, token id).
  Vec embedding(TokenId token) const;
  Vec project(ProjectionRole role, std::size_t layer, std::size_t head,
              std::span<const double> x) const;

 private:
  std::span<const double> matrix(ProjectionRole role, std::size_t layer, std::size_t head) const;

  std::uint64_t seed_;
  KVShape shape_;
  std::size_t embed_dim_;
  std::vector<double> weights_;
};

// Dense KV for a whole sequence. Layout is layer-major, token-major,
// head-major, dim-minor (the MSKV1 on-disk order).
class KVStates {
 public:
  KVStates() = default;
  KVStates(KVShape shape, std::size_t num_tokens);
  KVStates(KVShape shape, std::size_t num_tokens, std::vector<float> keys,
           std::vector<float> values);

  const KVShape& shape() const { return shape_; }
  std::size_t num_tokens() const { return num_tokens_; }

  std::span<const float> key(std::size_t layer, std::size_t token, std::size_t head) const;
  std::span<const float> value(std::size_t layer, std::size_t token, std::size_t head) const;
  std::span<float> mutable_key(std::size_t layer, std::size_t token, std::size_t head);
  std::span<float> mutable_value(std::size_t layer, std::size_t token, std::size_t head);

  // All heads of tokens [first, first + count) in one layer.
  std::span<const float> key_rows(std::size_t layer, std::size_t first, std::size_t count) const;
  std::span<const float> value_rows(std::size_t layer, std::size_t first,
                                    std::size_t count) const;

  // One token across all layers, layer-major (the blockstore append layout).
  std::vector<float> token_keys(std::size_t token) const;
  std::vector<float> token_values(std::size_t token) const;

  const std::vector<float>& keys() const { return keys_; }
  const std::vector<float>& values() const { return values_; }

 private:
  std::size_t offset(std::size_t layer, std::size_t token, std::size_t head) const;

  KVShape shape_{};
  std::size_t num_tokens_ = 0;
  std::vector<float> keys_;
  std::vector<float> values_;
};

// K/V = projection of the token embedding plus N(0, noise_scale^2) noise
// keyed on (seed, layer, head, position, role).
KVStates kv_for_trace(const Trace& trace, const ProjectionSet& proj, double noise_scale,
                      std::uint64_t seed);

// Noise-free query for a token, used to drive attention over cached KV.
Vec query_for_token(const ProjectionSet& proj, TokenId token, std::size_t layer,
                    std::size_t head);

}  // namespace memshare
