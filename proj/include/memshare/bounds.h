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

// Numerical checks of the attention perturbation bounds that justify
// substituting a cached key/value with a nearby one:
//
//   |s_j - s_j'|        <= ||q|| * ||k_j - k_j'|| / sqrt(d)
//   ||A - A'||_1        <= ||S - S'||_inf <= ||q|| * eps / sqrt(d)
//   ||o - o'||_2        <= sum_{j in J} A_j ||v_j - v_j'|| <= delta
//   ||o - o''||         <= ||o - o'|| + ||o' - o''||
//   ||o' - o''||        <= ||A - A'||_1 * max_i ||v_i'||
//
// Every check compares observed <= bound + slack.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "memshare/tensor.h"

namespace memshare {

inline constexpr double kBoundSlack = 1e-6;

struct KeyBoundReport {
  double epsilon = 0.0;               // realized ||k_j - k_j'||
  double observed_score_delta = 0.0;  // |s_j - s_j'|
  double score_bound = 0.0;           // ||q|| eps / sqrt(d)
  double observed_weight_l1 = 0.0;    // ||A - A'||_1
  double weight_bound = 0.0;
  bool pass = true;
};

struct ValueBoundReport {
  double delta = 0.0;                 // max_j ||v_j - v_j'||
  double observed_output_l2 = 0.0;    // ||o - o'||
  double weighted_bound = 0.0;        // sum_j A_j ||v_j - v_j'||
  double output_bound = 0.0;          // delta * sum_j A_j
  bool pass = true;
};

struct BoundReport {
  KeyBoundReport key;
  ValueBoundReport value;
  double observed_total_l2 = 0.0;     // ||o - o''||
  double observed_attention_term = 0.0;  // ||o' - o''||
  double attention_term_bound = 0.0;  // ||A - A'||_1 * max ||v_i'||
  double max_perturbed_value_norm = 0.0;
  double combined_bound = 0.0;        // delta + (||q|| eps / sqrt(d)) * max ||v_i'||
  bool triangle_holds = true;
  bool all_pass = true;
};

// Multiplier on every bound before comparison. 1.0 in normal use; lowering
// it lets tests confirm the checks can fail.
struct BoundOptions {
  double bound_scale = 1.0;
  double slack = kBoundSlack;
};

KeyBoundReport check_key_bound(const AttentionState& state, std::size_t j,
                               const Vec& perturbed_key, const BoundOptions& opt = {});

// perturbed_values[i] replaces values[indices[i]].
ValueBoundReport check_value_bound(const AttentionState& state,
                                   const std::vector<std::size_t>& indices,
                                   const std::vector<Vec>& perturbed_values,
                                   const BoundOptions& opt = {});

BoundReport check_combined_bound(const AttentionState& state, std::size_t j,
                                 const Vec& perturbed_key, const Vec& perturbed_value,
                                 const BoundOptions& opt = {});

// Whole-state substitution (same query, any subset of positions changed).
// Bound = sum over changed positions of delta_i + ||q|| eps_i / sqrt(d) * max ||v'||.
struct SubstitutionReport {
  std::size_t changed_positions = 0;
  double observed_l2 = 0.0;
  double summed_bound = 0.0;
  bool pass = true;
};

SubstitutionReport check_substitution(const AttentionState& original,
                                      const AttentionState& perturbed,
                                      const BoundOptions& opt = {});

struct SweepConfig {
  std::uint64_t seed = 0;
  std::size_t trials_per_cell = 50;
  std::vector<double> epsilon_grid{0.0, 0.01, 0.1, 0.5, 1.0};
  std::vector<double> delta_grid{0.0, 0.01, 0.1, 1.0};
  std::vector<std::size_t> head_dims{4, 8, 16};
  std::vector<std::size_t> lengths{2, 4, 16, 64};
  BoundOptions options{};
};

struct SweepRow {
  double epsilon = 0.0;
  double delta = 0.0;
  std::size_t t = 0;
  std::size_t head_dim = 0;
  double max_weight_ratio = 0.0;  // observed / bound, 0 when both are 0
  double max_output_ratio = 0.0;
  std::size_t trials = 0;
  std::size_t violations = 0;
};

struct Violation {
  double epsilon = 0.0;
  double delta = 0.0;
  std::size_t t = 0;
  std::size_t head_dim = 0;
  std::size_t trial = 0;
  std::size_t index = 0;
  std::string check;
  double observed = 0.0;
  double bound = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<Violation> violations;
  std::size_t total_trials = 0;
};

// Random trials: q, K, V i.i.d. N(0, 1/d_h); perturbations uniform on the
// eps- and delta-spheres. Each trial runs the key, value (single and
// multi-index) and combined checks.
SweepResult sweep_report(const SweepConfig& cfg);

}  // namespace memshare
