#include "memshare/simfilter.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "memshare/tensor.h"

namespace memshare {

SparseTokenVector::SparseTokenVector(std::span<const TokenId> tokens) {
  std::map<TokenId, std::uint32_t> counts;
  for (TokenId t : tokens) ++counts[t];
  entries_.assign(counts.begin(), counts.end());
  for (const auto& [_, c] : entries_) squared_norm_ += static_cast<std::uint64_t>(c) * c;
  norm_ = std::sqrt(static_cast<double>(squared_norm_));
}

std::uint32_t SparseTokenVector::count(TokenId token) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), token,
                                   [](const auto& e, TokenId t) { return e.first < t; });
  return it != entries_.end() && it->first == token ? it->second : 0;
}

SparseTokenVector encode_step(const StepRecord& step) { return SparseTokenVector(step.tokens); }

double cosine(const SparseTokenVector& a, const SparseTokenVector& b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("cosine: empty token vector");
  }
  std::uint64_t dot = 0;
  auto ia = a.entries().begin();
  auto ib = b.entries().begin();
  while (ia != a.entries().end() && ib != b.entries().end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += static_cast<std::uint64_t>(ia->second) * ib->second;
      ++ia;
      ++ib;
    }
  }
  const double denom = std::sqrt(static_cast<double>(a.squared_norm()) *
                                 static_cast<double>(b.squared_norm()));
  return std::min(1.0, static_cast<double>(dot) / denom);
}

void Thresholds::validate() const {
  if (!(step_threshold >= 0.0 && step_threshold <= 1.0)) {
    throw std::invalid_argument("Thresholds: step_threshold must be in [0, 1]");
  }
  if (!(block_distance_threshold >= 0.0)) {
    throw std::invalid_argument("Thresholds: block_distance_threshold must be >= 0");
  }
  if (top_k == 0) {
    throw std::invalid_argument("Thresholds: top_k must be >= 1");
  }
}

std::span<const float> BlockKVView::key_layer(std::size_t layer) const {
  return keys.subspan(layer * layer_stride, fill * shape.row_elems());
}

std::span<const float> BlockKVView::value_layer(std::size_t layer) const {
  return values.subspan(layer * layer_stride, fill * shape.row_elems());
}

BlockKVView block_view(const KVStates& kv, std::size_t block_index, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("block_view: block_size must be >= 1");
  const std::size_t first = block_index * block_size;
  if (first >= kv.num_tokens()) {
    throw std::out_of_range("block_view: block " + std::to_string(block_index) +
                            " beyond sequence end");
  }
  const std::size_t fill = std::min(block_size, kv.num_tokens() - first);
  const KVShape& s = kv.shape();
  const std::size_t layer_stride = kv.num_tokens() * s.row_elems();
  // Spans cover layer 0's rows through the last layer's rows of this block.
  const std::size_t start = first * s.row_elems();
  const std::size_t len = (s.num_layers - 1) * layer_stride + fill * s.row_elems();
  BlockKVView v;
  v.keys = std::span<const float>(kv.keys()).subspan(start, len);
  v.values = std::span<const float>(kv.values()).subspan(start, len);
  v.layer_stride = layer_stride;
  v.shape = s;
  v.block_size = block_size;
  v.fill = fill;
  return v;
}

double stage2_block_distance(const BlockKVView& b1, const BlockKVView& b2) {
  if (!(b1.shape == b2.shape) || b1.block_size != b2.block_size) {
    throw std::invalid_argument("stage2_block_distance: block shape mismatch");
  }
  if (b1.fill != b1.block_size || b2.fill != b2.block_size) {
    throw std::invalid_argument("stage2_block_distance: partially filled block");
  }
  const std::size_t layers = b1.shape.num_layers;
  const double norm = 2.0 * static_cast<double>(b1.block_size) *
                      static_cast<double>(b1.shape.num_heads);
  double total = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    const double dk = frobenius_distance(b1.key_layer(l), b2.key_layer(l));
    const double dv = frobenius_distance(b1.value_layer(l), b2.value_layer(l));
    total += (dk + dv) / norm;
  }
  return total / static_cast<double>(layers);
}

std::vector<CandidateMatch> stage1_candidates(const StepRecord& curr,
                                              std::span<const StepRecord> history,
                                              const Thresholds& th) {
  th.validate();
  std::vector<CandidateMatch> out;
  if (history.empty()) return out;
  const SparseTokenVector vc = encode_step(curr);
  for (const auto& cand : history) {
    const double c = cosine(vc, encode_step(cand));
    if (c >= th.step_threshold) out.push_back({curr.step_index, cand.step_index, c});
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateMatch& a, const CandidateMatch& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.cand_step < b.cand_step;
  });
  if (out.size() > th.top_k) out.resize(th.top_k);
  return out;
}

BlockRange full_blocks_of_step(const StepRecord& step, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("full_blocks_of_step: block_size must be >= 1");
  const std::size_t first = (step.token_offset + block_size - 1) / block_size;
  const std::size_t end = step.end_offset() / block_size;
  return {first, end > first ? end - first : 0};
}

std::vector<BlockMatch> find_reusable_blocks_for_step(const Trace& trace, const KVStates& kv,
                                                      const Thresholds& th,
                                                      std::size_t block_size,
                                                      std::size_t step_index) {
  th.validate();
  if (step_index >= trace.steps.size()) {
    throw std::out_of_range("find_reusable_blocks: step index out of range");
  }
  if (kv.num_tokens() < trace.total_tokens()) {
    throw std::invalid_argument("find_reusable_blocks: KV does not cover the trace");
  }
  const StepRecord& curr = trace.steps[step_index];
  const BlockRange target = full_blocks_of_step(curr, block_size);
  std::vector<BlockMatch> out;
  if (target.count == 0) return out;

  const auto history = std::span<const StepRecord>(trace.steps).first(step_index);
  const auto candidates = stage1_candidates(curr, history, th);

  std::vector<std::optional<BlockMatch>> best(target.count);
  for (const auto& cand : candidates) {
    const BlockRange source = full_blocks_of_step(trace.steps[cand.cand_step], block_size);
    const std::size_t pairs = std::min(target.count, source.count);
    for (std::size_t i = 0; i < pairs; ++i) {
      const std::size_t tb = target.first + i;
      const std::size_t sb = source.first + i;
      const double d = stage2_block_distance(block_view(kv, tb, block_size),
                                             block_view(kv, sb, block_size));
      if (d > th.block_distance_threshold) continue;
      auto& slot = best[i];
      if (!slot || d < slot->distance || (d == slot->distance && sb < slot->source_block)) {
        slot = BlockMatch{tb, sb, step_index, cand.cand_step, d};
      }
    }
  }
  for (auto& m : best) {
    if (m) out.push_back(*m);
  }
  return out;
}

std::vector<BlockMatch> find_reusable_blocks(const Trace& trace, const KVStates& kv,
                                             const Thresholds& th, std::size_t block_size) {
  if (trace.steps.empty()) return {};
  return find_reusable_blocks_for_step(trace, kv, th, block_size, trace.steps.size() - 1);
}

std::vector<BlockMatch> find_reusable_blocks_all(const Trace& trace, const KVStates& kv,
                                                 const Thresholds& th, std::size_t block_size) {
  std::vector<BlockMatch> out;
  for (std::size_t s = 1; s < trace.steps.size(); ++s) {
    auto m = find_reusable_blocks_for_step(trace, kv, th, block_size, s);
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

DistanceMatrix all_pairs_block_distance(const KVStates& kv, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("all_pairs_block_distance: block_size >= 1");
  const std::size_t n = kv.num_tokens() / block_size;
  if (n == 0) {
    throw std::invalid_argument("all_pairs_block_distance: no full block");
  }
  std::vector<BlockKVView> views;
  views.reserve(n);
  for (std::size_t i = 0; i < n; ++i) views.push_back(block_view(kv, i, block_size));
  DistanceMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = stage2_block_distance(views[i], views[j]);
      m.at(i, j) = d;
      m.at(j, i) = d;
    }
  }
  return m;
}

double calibrate_block_threshold(const KVStates& kv, std::size_t block_size, double quantile) {
  if (!(quantile >= 0.0 && quantile <= 1.0)) {
    throw std::invalid_argument("calibrate_block_threshold: quantile must be in [0, 1]");
  }
  const DistanceMatrix m = all_pairs_block_distance(kv, block_size);
  std::vector<double> d;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) d.push_back(m.at(i, j));
  }
  if (d.empty()) {
    throw std::invalid_argument("calibrate_block_threshold: need at least two full blocks");
  }
  std::sort(d.begin(), d.end());
  const double pos = quantile * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

std::vector<StepSimilarity> step_similarities(const Trace& trace) {
  std::vector<SparseTokenVector> enc;
  enc.reserve(trace.steps.size());
  for (const auto& s : trace.steps) enc.push_back(encode_step(s));
  std::vector<StepSimilarity> out;
  out.reserve(trace.steps.size());
  for (std::size_t i = 0; i < enc.size(); ++i) {
    StepSimilarity s{i, std::nullopt, 0.0};
    for (std::size_t j = 0; j < i; ++j) {
      const double c = cosine(enc[i], enc[j]);
      if (!s.best_match || c > s.cosine) {
        s.best_match = j;
        s.cosine = c;
      }
    }
    out.push_back(s);
  }
  return out;
}

double similarity_ratio(std::span<const StepSimilarity> sims, double threshold) {
  if (sims.empty()) throw std::invalid_argument("similarity_ratio: empty trace");
  std::size_t redundant = 0;
  for (const auto& s : sims) {
    if (s.best_match && s.cosine > threshold) ++redundant;
  }
  return static_cast<double>(redundant) / static_cast<double>(sims.size());
}

double similarity_ratio(const Trace& trace, double threshold) {
  const auto sims = step_similarities(trace);
  return similarity_ratio(sims, threshold);
}

}  // namespace memshare
