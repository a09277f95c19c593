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

// Trace JSONL and MSKV1 binary KV dumps.
//
// JSONL: one step per line,
//   {"seq_id": str, "step_index": int, "text": str, "tokens": [int],
//    "token_offset": int, "copy_of": int|null}
//
// MSKV1: "MSKV", u8 version = 1, u32le num_layers, num_heads, head_dim,
// num_tokens, then K then V as f32le in layer/token/head/dim order.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "memshare/kvgen.h"

namespace memshare {

// Malformed input. line() is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

void write_trace_jsonl(std::ostream& out, const Trace& trace);
// Traces in order of first appearance of each seq_id.
std::vector<Trace> read_trace_jsonl(std::istream& in);
std::vector<Trace> read_trace_jsonl_file(const std::filesystem::path& path);

void write_mskv(std::ostream& out, const KVStates& kv);
KVStates read_mskv(std::istream& in);
KVStates read_mskv_file(const std::filesystem::path& path);

}  // namespace memshare
