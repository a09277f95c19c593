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

// Paged KV cache with per-sequence block tables and reference-counted
// physical blocks. Sharing remaps a block-table entry onto another physical
// block; payload bytes are never copied or moved by a share.
//
// Single-writer: mutating calls must be serialized by the caller. Const
// calls may run concurrently between mutations.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memshare/kvgen.h"
#include "memshare/simfilter.h"
#include "memshare/tensor.h"

namespace memshare {

using BlockId = std::uint32_t;

struct StoreDims {
  KVShape kv{};
  std::size_t block_size = 16;
  // Bytes per stored element used for accounting (4 = f32, 2 = fp16).
  std::size_t bytes_per_element = 4;

  // 2 (K and V) * heads * head_dim * layers * bytes_per_element
  std::uint64_t bytes_per_token() const;
  std::size_t block_elems() const { return kv.token_elems() * block_size; }
  bool operator==(const StoreDims&) const = default;
};

enum class PayloadMode {
  kStored,          // K/V payload kept in an arena
  kAccountingOnly,  // counts only; append_token takes no vectors
};

// Free list exhausted. The store is left unchanged.
class OutOfBlocksError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A table entry referenced a block that is not allocated.
class StoreCorruptionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct BlockRef {
  std::string seq_id;
  std::size_t logical_index = 0;
};

struct ShareResult {
  bool remapped = false;  // table entry changed
  bool freed = false;     // old target block returned to the free list
};

struct MemoryStats {
  std::size_t total_blocks = 0;
  std::size_t allocated_physical = 0;
  std::size_t free_blocks = 0;
  std::size_t logical_blocks = 0;
  std::size_t shared_tokens = 0;
  std::size_t total_tokens = 0;
  std::size_t live_sequences = 0;
  std::uint64_t bytes_per_token = 0;
  // total_tokens * bytes_per_token: what the sequences would occupy unshared.
  std::uint64_t logical_kv_bytes = 0;
  // allocated_physical * block_size * bytes_per_token.
  std::uint64_t physical_kv_bytes = 0;

  double affected_ratio() const {
    return total_tokens ? static_cast<double>(shared_tokens) / static_cast<double>(total_tokens)
                        : 0.0;
  }
};

struct AuditReport {
  bool ok = true;
  std::vector<std::string> problems;
};

class BlockStore {
 public:
  BlockStore(std::size_t capacity_blocks, StoreDims dims,
             PayloadMode mode = PayloadMode::kStored);

  const StoreDims& dims() const { return dims_; }
  std::size_t capacity() const { return refcount_.size(); }
  std::size_t free_blocks() const { return free_list_.size(); }
  std::size_t allocated_blocks() const { return capacity() - free_blocks(); }
  PayloadMode mode() const { return mode_; }

  void add_sequence(const std::string& seq_id);
  bool has_sequence(const std::string& seq_id) const;
  std::size_t num_tokens(const std::string& seq_id) const;
  std::vector<std::string> sequence_ids() const;
  const std::vector<BlockId>& block_table(const std::string& seq_id) const;

  // Blocks append_token would draw from the free list right now (0 or 1).
  std::size_t blocks_needed_for_append(const std::string& seq_id) const;

  // keys/values hold one token for every layer, layer-major
  // ([layer][head][dim]). Returns the token's logical position.
  // Throws OutOfBlocksError when a fresh block is needed and none is free.
  std::size_t append_token(const std::string& seq_id, std::span<const float> keys,
                           std::span<const float> values);
  // Accounting-only append.
  std::size_t append_token(const std::string& seq_id);

  ShareResult share_block(const BlockRef& target, const BlockRef& source);

  // Returns the number of blocks returned to the free list.
  std::size_t free_sequence(const std::string& seq_id);

  // Logical-order K/V for one (layer, head) through the block table.
  struct HeadView {
    std::vector<Vec> keys;
    std::vector<Vec> values;
  };
  HeadView gather_attention_view(const std::string& seq_id, std::size_t layer,
                                 std::size_t head) const;

  // View of a physical block's payload in simfilter's block layout.
  BlockKVView physical_block_view(BlockId id) const;

  MemoryStats memory_stats() const;
  std::size_t shared_tokens(const std::string& seq_id) const;

  std::uint32_t refcount(BlockId id) const { return refcount_.at(id); }
  std::uint32_t fill(BlockId id) const { return fill_.at(id); }

  // Recounts every table reference and checks all structural invariants.
  AuditReport audit() const;

  // FNV-1a over a block's K and V payload bytes.
  std::uint64_t payload_checksum(BlockId id) const;
  // Total slot writes into payload since construction.
  std::uint64_t payload_write_count() const { return payload_writes_; }

  // {capacity, dims, tables: {seq_id: [ids]}, refcounts: [...], fill: [...]}
  std::string snapshot_json() const;

 private:
  struct Sequence {
    std::vector<BlockId> blocks;
    std::vector<bool> substituted;  // logical entry was remapped by a share
    std::size_t tokens = 0;
  };

  Sequence& sequence(const std::string& seq_id);
  const Sequence& sequence(const std::string& seq_id) const;
  BlockId allocate();
  void release(BlockId id);
  void check_live(BlockId id) const;
  void write_slot(BlockId id, std::size_t slot, std::span<const float> keys,
                  std::span<const float> values);
  std::size_t append_impl(const std::string& seq_id, std::span<const float> keys,
                          std::span<const float> values);

  StoreDims dims_;
  PayloadMode mode_;
  std::vector<std::uint32_t> refcount_;
  std::vector<std::uint32_t> fill_;
  std::vector<BlockId> free_list_;  // stack; back() is handed out next
  std::map<std::string, Sequence> sequences_;
  std::vector<float> key_arena_;
  std::vector<float> value_arena_;
  std::uint64_t payload_writes_ = 0;
};

}  // namespace memshare
