#include "memshare/blockstore.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "json.hpp"

namespace memshare {

std::uint64_t StoreDims::bytes_per_token() const {
  return 2ULL * kv.num_heads * kv.head_dim * kv.num_layers * bytes_per_element;
}

BlockStore::BlockStore(std::size_t capacity_blocks, StoreDims dims, PayloadMode mode)
    : dims_(dims), mode_(mode) {
  if (capacity_blocks == 0) {
    throw std::invalid_argument("BlockStore: capacity must be >= 1");
  }
  if (dims.block_size == 0 || dims.kv.num_layers == 0 || dims.kv.num_heads == 0 ||
      dims.kv.head_dim == 0 || dims.bytes_per_element == 0) {
    throw std::invalid_argument("BlockStore: all dimensions must be positive");
  }
  if (capacity_blocks > std::numeric_limits<BlockId>::max()) {
    throw std::invalid_argument("BlockStore: capacity exceeds block id range");
  }
  refcount_.assign(capacity_blocks, 0);
  fill_.assign(capacity_blocks, 0);
  free_list_.reserve(capacity_blocks);
  for (std::size_t i = capacity_blocks; i-- > 0;) free_list_.push_back(static_cast<BlockId>(i));
  if (mode_ == PayloadMode::kStored) {
    key_arena_.assign(capacity_blocks * dims.block_elems(), 0.0f);
    value_arena_.assign(capacity_blocks * dims.block_elems(), 0.0f);
  }
}

void BlockStore::add_sequence(const std::string& seq_id) {
  if (!sequences_.try_emplace(seq_id).second) {
    throw std::invalid_argument("BlockStore: sequence '" + seq_id + "' already registered");
  }
}

bool BlockStore::has_sequence(const std::string& seq_id) const {
  return sequences_.count(seq_id) != 0;
}

BlockStore::Sequence& BlockStore::sequence(const std::string& seq_id) {
  const auto it = sequences_.find(seq_id);
  if (it == sequences_.end()) {
    throw std::invalid_argument("BlockStore: unknown sequence '" + seq_id + "'");
  }
  return it->second;
}

const BlockStore::Sequence& BlockStore::sequence(const std::string& seq_id) const {
  const auto it = sequences_.find(seq_id);
  if (it == sequences_.end()) {
    throw std::invalid_argument("BlockStore: unknown sequence '" + seq_id + "'");
  }
  return it->second;
}

std::size_t BlockStore::num_tokens(const std::string& seq_id) const {
  return sequence(seq_id).tokens;
}

std::vector<std::string> BlockStore::sequence_ids() const {
  std::vector<std::string> ids;
  ids.reserve(sequences_.size());
  for (const auto& [id, _] : sequences_) ids.push_back(id);
  return ids;
}

const std::vector<BlockId>& BlockStore::block_table(const std::string& seq_id) const {
  return sequence(seq_id).blocks;
}

BlockId BlockStore::allocate() {
  if (free_list_.empty()) {
    throw OutOfBlocksError("BlockStore: no free blocks (capacity " +
                           std::to_string(capacity()) + ")");
  }
  const BlockId id = free_list_.back();
  free_list_.pop_back();
  refcount_[id] = 1;
  fill_[id] = 0;
  return id;
}

void BlockStore::check_live(BlockId id) const {
  if (id >= capacity() || refcount_[id] == 0) {
    throw StoreCorruptionError("BlockStore: table references unallocated block " +
                               std::to_string(id));
  }
}

void BlockStore::release(BlockId id) {
  check_live(id);
  if (--refcount_[id] == 0) {
    fill_[id] = 0;
    free_list_.push_back(id);
  }
}

void BlockStore::write_slot(BlockId id, std::size_t slot, std::span<const float> keys,
                            std::span<const float> values) {
  if (mode_ != PayloadMode::kStored) return;
  const std::size_t row = dims_.kv.row_elems();
  const std::size_t layer_stride = dims_.block_size * row;
  const std::size_t base = static_cast<std::size_t>(id) * dims_.block_elems();
  for (std::size_t l = 0; l < dims_.kv.num_layers; ++l) {
    const std::size_t dst = base + l * layer_stride + slot * row;
    std::copy_n(keys.begin() + l * row, row, key_arena_.begin() + dst);
    std::copy_n(values.begin() + l * row, row, value_arena_.begin() + dst);
  }
  ++payload_writes_;
}

std::size_t BlockStore::blocks_needed_for_append(const std::string& seq_id) const {
  const Sequence& seq = sequence(seq_id);
  if (seq.blocks.empty()) return 1;
  const BlockId tail = seq.blocks.back();
  return (fill_[tail] == dims_.block_size || refcount_[tail] > 1) ? 1 : 0;
}

std::size_t BlockStore::append_impl(const std::string& seq_id, std::span<const float> keys,
                                    std::span<const float> values) {
  Sequence& seq = sequence(seq_id);
  if (blocks_needed_for_append(seq_id) > 0) {
    const BlockId fresh = allocate();  // throws before any state changes
    if (!seq.blocks.empty() && fill_[seq.blocks.back()] < dims_.block_size) {
      // Copy-on-append: the partially filled tail is shared, so its slots are
      // copied into a private block and the shared one is left untouched.
      const BlockId old = seq.blocks.back();
      if (mode_ == PayloadMode::kStored) {
        const std::size_t n = dims_.block_elems();
        std::copy_n(key_arena_.begin() + old * n, n, key_arena_.begin() + fresh * n);
        std::copy_n(value_arena_.begin() + old * n, n, value_arena_.begin() + fresh * n);
      }
      fill_[fresh] = fill_[old];
      seq.blocks.back() = fresh;
      seq.substituted.back() = false;
      release(old);
    } else {
      seq.blocks.push_back(fresh);
      seq.substituted.push_back(false);
    }
  }
  const BlockId tail = seq.blocks.back();
  write_slot(tail, fill_[tail], keys, values);
  ++fill_[tail];
  return seq.tokens++;
}

std::size_t BlockStore::append_token(const std::string& seq_id, std::span<const float> keys,
                                     std::span<const float> values) {
  if (mode_ == PayloadMode::kStored &&
      (keys.size() != dims_.kv.token_elems() || values.size() != dims_.kv.token_elems())) {
    throw std::invalid_argument("BlockStore::append_token: expected " +
                                std::to_string(dims_.kv.token_elems()) +
                                " floats per K and V");
  }
  return append_impl(seq_id, keys, values);
}

std::size_t BlockStore::append_token(const std::string& seq_id) {
  if (mode_ == PayloadMode::kStored) {
    throw std::logic_error("BlockStore::append_token: payload required in stored mode");
  }
  return append_impl(seq_id, {}, {});
}

ShareResult BlockStore::share_block(const BlockRef& target, const BlockRef& source) {
  Sequence& tseq = sequence(target.seq_id);
  const Sequence& sseq = sequence(source.seq_id);
  if (target.logical_index >= tseq.blocks.size() || source.logical_index >= sseq.blocks.size()) {
    throw std::invalid_argument("BlockStore::share_block: logical block out of range");
  }
  const BlockId tid = tseq.blocks[target.logical_index];
  const BlockId sid = sseq.blocks[source.logical_index];
  check_live(tid);
  check_live(sid);
  if (fill_[tid] != dims_.block_size || fill_[sid] != dims_.block_size) {
    throw std::invalid_argument("BlockStore::share_block: both blocks must be full");
  }
  if (tid == sid) return {};
  ++refcount_[sid];
  tseq.blocks[target.logical_index] = sid;
  tseq.substituted[target.logical_index] = true;
  const bool freed = refcount_[tid] == 1;
  release(tid);
  return {true, freed};
}

std::size_t BlockStore::free_sequence(const std::string& seq_id) {
  Sequence& seq = sequence(seq_id);
  std::size_t reclaimed = 0;
  for (BlockId id : seq.blocks) {
    const bool last_ref = refcount_.at(id) == 1;
    release(id);
    if (last_ref) ++reclaimed;
  }
  sequences_.erase(seq_id);
  return reclaimed;
}

BlockStore::HeadView BlockStore::gather_attention_view(const std::string& seq_id,
                                                       std::size_t layer,
                                                       std::size_t head) const {
  if (mode_ != PayloadMode::kStored) {
    throw std::logic_error("BlockStore::gather_attention_view: no payload in accounting mode");
  }
  if (layer >= dims_.kv.num_layers || head >= dims_.kv.num_heads) {
    throw std::invalid_argument("BlockStore::gather_attention_view: layer/head out of range");
  }
  const Sequence& seq = sequence(seq_id);
  const std::size_t d = dims_.kv.head_dim;
  const std::size_t row = dims_.kv.row_elems();
  const std::size_t layer_stride = dims_.block_size * row;
  HeadView view;
  view.keys.reserve(seq.tokens);
  view.values.reserve(seq.tokens);
  for (BlockId id : seq.blocks) {
    check_live(id);
    const std::size_t base = static_cast<std::size_t>(id) * dims_.block_elems() +
                             layer * layer_stride + head * d;
    for (std::size_t slot = 0; slot < fill_[id]; ++slot) {
      const std::size_t at = base + slot * row;
      view.keys.emplace_back(key_arena_.begin() + at, key_arena_.begin() + at + d);
      view.values.emplace_back(value_arena_.begin() + at, value_arena_.begin() + at + d);
    }
  }
  return view;
}

BlockKVView BlockStore::physical_block_view(BlockId id) const {
  if (mode_ != PayloadMode::kStored) {
    throw std::logic_error("BlockStore::physical_block_view: no payload in accounting mode");
  }
  check_live(id);
  const std::size_t n = dims_.block_elems();
  BlockKVView v;
  v.keys = std::span<const float>(key_arena_).subspan(static_cast<std::size_t>(id) * n, n);
  v.values = std::span<const float>(value_arena_).subspan(static_cast<std::size_t>(id) * n, n);
  v.layer_stride = dims_.block_size * dims_.kv.row_elems();
  v.shape = dims_.kv;
  v.block_size = dims_.block_size;
  v.fill = fill_[id];
  return v;
}

std::size_t BlockStore::shared_tokens(const std::string& seq_id) const {
  const Sequence& seq = sequence(seq_id);
  std::size_t n = 0;
  for (std::size_t i = 0; i < seq.blocks.size(); ++i) {
    if (seq.substituted[i]) n += fill_[seq.blocks[i]];
  }
  return n;
}

MemoryStats BlockStore::memory_stats() const {
  MemoryStats s;
  s.total_blocks = capacity();
  s.free_blocks = free_blocks();
  s.allocated_physical = allocated_blocks();
  s.live_sequences = sequences_.size();
  s.bytes_per_token = dims_.bytes_per_token();
  for (const auto& [id, seq] : sequences_) {
    s.logical_blocks += seq.blocks.size();
    s.total_tokens += seq.tokens;
    s.shared_tokens += shared_tokens(id);
  }
  s.logical_kv_bytes = static_cast<std::uint64_t>(s.total_tokens) * s.bytes_per_token;
  s.physical_kv_bytes =
      static_cast<std::uint64_t>(s.allocated_physical) * dims_.block_size * s.bytes_per_token;
  return s;
}

AuditReport BlockStore::audit() const {
  AuditReport r;
  auto fail = [&r](std::string msg) {
    r.ok = false;
    r.problems.push_back(std::move(msg));
  };
  std::vector<std::uint32_t> refs(capacity(), 0);
  for (const auto& [id, seq] : sequences_) {
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < seq.blocks.size(); ++i) {
      const BlockId b = seq.blocks[i];
      if (b >= capacity() || refcount_[b] == 0) {
        fail("dangling entry " + id + "[" + std::to_string(i) + "] -> " + std::to_string(b));
        continue;
      }
      ++refs[b];
      tokens += fill_[b];
      if (i + 1 < seq.blocks.size() && fill_[b] != dims_.block_size) {
        fail("interior block " + id + "[" + std::to_string(i) + "] is partially filled");
      }
    }
    if (tokens != seq.tokens) fail("token count mismatch for " + id);
  }
  std::vector<bool> in_free(capacity(), false);
  for (BlockId b : free_list_) {
    if (b >= capacity()) {
      fail("free list holds invalid id " + std::to_string(b));
      continue;
    }
    if (in_free[b]) fail("block " + std::to_string(b) + " appears twice in free list");
    in_free[b] = true;
    if (refcount_[b] != 0) fail("free block " + std::to_string(b) + " has nonzero refcount");
  }
  for (std::size_t b = 0; b < capacity(); ++b) {
    if (refs[b] != refcount_[b]) {
      fail("block " + std::to_string(b) + " refcount " + std::to_string(refcount_[b]) +
           " but " + std::to_string(refs[b]) + " references");
    }
    if (refcount_[b] == 0 && !in_free[b]) fail("block " + std::to_string(b) + " leaked");
  }
  if (allocated_blocks() + free_blocks() != capacity()) fail("conservation violated");
  return r;
}

std::uint64_t BlockStore::payload_checksum(BlockId id) const {
  if (mode_ != PayloadMode::kStored || id >= capacity()) return 0;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::size_t n = dims_.block_elems();
  auto feed = [&h](float f) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) {
      h ^= (bits >> (8 * k)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < n; ++i) feed(key_arena_[id * n + i]);
  for (std::size_t i = 0; i < n; ++i) feed(value_arena_[id * n + i]);
  return h;
}

std::string BlockStore::snapshot_json() const {
  nlohmann::ordered_json j;
  j["capacity"] = capacity();
  j["dims"] = {{"num_layers", dims_.kv.num_layers},
               {"num_heads", dims_.kv.num_heads},
               {"head_dim", dims_.kv.head_dim},
               {"block_size", dims_.block_size},
               {"bytes_per_element", dims_.bytes_per_element}};
  nlohmann::ordered_json tables = nlohmann::ordered_json::object();
  for (const auto& [id, seq] : sequences_) tables[id] = seq.blocks;
  j["tables"] = tables;
  j["refcounts"] = refcount_;
  j["fill"] = fill_;
  return j.dump();
}

}  // namespace memshare
