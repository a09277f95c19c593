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

#include <cstddef>
#include <span>
#include <vector>

namespace memshare {

// All attention math runs in double; stored KV payloads are float.
using Vec = std::vector<double>;

enum class NormKind { kL1, kL2, kLinf };

// Single-head attention inputs for one decode position.
struct AttentionState {
  Vec query;
  std::vector<Vec> keys;
  std::vector<Vec> values;

  std::size_t length() const { return keys.size(); }
  std::size_t head_dim() const { return query.size(); }

  // Throws std::invalid_argument when the shape invariants are broken.
  void validate() const;
};

// Numerically stabilized softmax (max-subtraction). Throws on empty or
// non-finite input.
Vec softmax(std::span<const double> scores);

// score_i = <query, key_i> / sqrt(d_h)
Vec attention_scores(const AttentionState& state);

// Weighted sum of values under softmax(attention_scores(state)).
Vec attention_output(const AttentionState& state);

// Same as attention_output but with caller-supplied weights.
Vec weighted_sum(std::span<const double> weights, const std::vector<Vec>& values);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v, NormKind kind);
Vec subtract(std::span<const double> a, std::span<const double> b);

// sqrt(sum (a_i - b_i)^2) over two equally shaped flat tensors.
double frobenius_distance(std::span<const float> a, std::span<const float> b);
double frobenius_distance(std::span<const double> a, std::span<const double> b);

Vec to_vec(std::span<const float> v);

}  // namespace memshare
