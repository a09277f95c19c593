#include "memshare/kvgen.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "memshare/rng.h"

namespace memshare {

namespace {

constexpr std::uint64_t kTraceTag = 0x7472616365ULL;      // "trace"
constexpr std::uint64_t kEmbedTag = 0x656d626564ULL;      // "embed"
constexpr std::uint64_t kProjTag = 0x70726f6aULL;         // "proj"
constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;      // "noise"

}  // namespace

std::size_t Trace::total_tokens() const {
  return steps.empty() ? 0 : steps.back().end_offset();
}

std::vector<TokenId> Trace::flat_tokens() const {
  std::vector<TokenId> out;
  out.reserve(total_tokens());
  for (const auto& s : steps) out.insert(out.end(), s.tokens.begin(), s.tokens.end());
  return out;
}

void Trace::validate() const {
  if (redundancy_labels.size() != steps.size()) {
    throw std::invalid_argument("Trace: labels/steps length mismatch");
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (s.step_index != i) {
      throw std::invalid_argument("Trace: step_index " + std::to_string(s.step_index) +
                                  " out of order (expected " + std::to_string(i) + ")");
    }
    if (s.tokens.empty()) {
      throw std::invalid_argument("Trace: step " + std::to_string(i) + " has no tokens");
    }
    if (s.token_offset != expected_offset) {
      throw std::invalid_argument("Trace: step " + std::to_string(i) +
                                  " token_offset is not contiguous");
    }
    expected_offset = s.end_offset();
    if (redundancy_labels[i] && *redundancy_labels[i] >= i) {
      throw std::invalid_argument("Trace: copy_of must point to an earlier step");
    }
  }
}

std::string render_step_text(std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out.push_back('w');
    out += std::to_string(tokens[i]);
  }
  return out;
}

std::vector<std::string> segment_steps(std::string_view raw_text, std::string_view delimiter) {
  if (delimiter.empty()) {
    throw std::invalid_argument("segment_steps: empty delimiter");
  }
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    const std::size_t hit = raw_text.find(delimiter, pos);
    const std::size_t end = hit == std::string_view::npos ? raw_text.size() : hit;
    if (end > pos) out.emplace_back(raw_text.substr(pos, end - pos));
    if (hit == std::string_view::npos) break;
    pos = hit + delimiter.size();
  }
  return out;
}

Trace generate_trace(const TraceConfig& cfg) {
  if (!(cfg.redundancy_prob >= 0.0 && cfg.redundancy_prob <= 1.0)) {
    throw std::invalid_argument("generate_trace: redundancy_prob must be in [0, 1]");
  }
  if (!(cfg.mutation_rate >= 0.0 && cfg.mutation_rate <= 1.0)) {
    throw std::invalid_argument("generate_trace: mutation_rate must be in [0, 1]");
  }
  if (cfg.vocab_size < 16) {
    throw std::invalid_argument("generate_trace: vocab_size must be >= 16");
  }
  if (cfg.num_steps == 0 || cfg.min_step_len == 0 || cfg.min_step_len > cfg.max_step_len) {
    throw std::invalid_argument("generate_trace: invalid step count or length range");
  }
  if (cfg.step_quantum == 0) {
    throw std::invalid_argument("generate_trace: step_quantum must be >= 1");
  }

  Trace trace;
  trace.seq_id = cfg.seq_id.empty() ? "s" + std::to_string(cfg.seed) : cfg.seq_id;
  trace.steps.reserve(cfg.num_steps);
  trace.redundancy_labels.reserve(cfg.num_steps);

  CounterRng rng(derive_key(cfg.seed, {kTraceTag}));
  std::size_t offset = 0;
  for (std::size_t s = 0; s < cfg.num_steps; ++s) {
    StepRecord step;
    step.seq_id = trace.seq_id;
    step.step_index = s;
    step.token_offset = offset;
    std::optional<std::size_t> label;

    // The draw is consumed for every step after the first so that p only
    // changes the outcome, never the stream alignment.
    const bool copy = s > 0 && rng.uniform() < cfg.redundancy_prob;
    if (copy) {
      const std::size_t src = rng.below(s);
      step.tokens = trace.steps[src].tokens;
      const auto n = static_cast<std::size_t>(
          std::llround(cfg.mutation_rate * static_cast<double>(step.tokens.size())));
      std::vector<std::size_t> idx(step.tokens.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[pick]);
        step.tokens[idx[i]] = static_cast<TokenId>(rng.below(cfg.vocab_size));
      }
      label = src;
    } else {
      std::size_t len = cfg.min_step_len + rng.below(cfg.max_step_len - cfg.min_step_len + 1);
      len = (len + cfg.step_quantum - 1) / cfg.step_quantum * cfg.step_quantum;
      step.tokens.resize(len);
      for (auto& t : step.tokens) t = static_cast<TokenId>(rng.below(cfg.vocab_size));
    }
    step.text = render_step_text(step.tokens);
    offset += step.tokens.size();
    trace.steps.push_back(std::move(step));
    trace.redundancy_labels.push_back(label);
  }
  return trace;
}

ProjectionSet::ProjectionSet(std::uint64_t seed, KVShape shape, std::size_t embed_dim)
    : seed_(seed), shape_(shape), embed_dim_(embed_dim) {
  if (shape.num_layers == 0 || shape.num_heads == 0 || shape.head_dim == 0 || embed_dim == 0) {
    throw std::invalid_argument("ProjectionSet: all dimensions must be positive");
  }
  const std::size_t per = embed_dim * shape.head_dim;
  weights_.resize(3 * shape.num_layers * shape.num_heads * per);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.head_dim));
  for (std::uint64_t role = 0; role < 3; ++role) {
    for (std::size_t l = 0; l < shape.num_layers; ++l) {
      for (std::size_t h = 0; h < shape.num_heads; ++h) {
        CounterRng rng(derive_key(seed, {kProjTag, role, l, h}));
        const std::size_t base = ((role * shape.num_layers + l) * shape.num_heads + h) * per;
        for (std::size_t i = 0; i < per; ++i) weights_[base + i] = rng.normal() * scale;
      }
    }
  }
}

std::span<const double> ProjectionSet::matrix(ProjectionRole role, std::size_t layer,
                                              std::size_t head) const {
  const std::size_t per = embed_dim_ * shape_.head_dim;
  const auto r = static_cast<std::size_t>(role);
  const std::size_t base = ((r * shape_.num_layers + layer) * shape_.num_heads + head) * per;
  return std::span<const double>(weights_).subspan(base, per);
}

Vec ProjectionSet::embedding(TokenId token) const {
  CounterRng rng(derive_key(seed_, {kEmbedTag, token}));
  Vec e(embed_dim_);
  double sq = 0.0;
  for (double& x : e) {
    x = rng.normal();
    sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : e) x *= inv;
  return e;
}

Vec ProjectionSet::project(ProjectionRole role, std::size_t layer, std::size_t head,
                           std::span<const double> x) const {
  if (x.size() != embed_dim_ || layer >= shape_.num_layers || head >= shape_.num_heads) {
    throw std::invalid_argument("ProjectionSet::project: bad arguments");
  }
  const auto w = matrix(role, layer, head);
  Vec out(shape_.head_dim, 0.0);
  for (std::size_t e = 0; e < embed_dim_; ++e) {
    const double xe = x[e];
    for (std::size_t d = 0; d < shape_.head_dim; ++d) out[d] += xe * w[e * shape_.head_dim + d];
  }
  return out;
}

KVStates::KVStates(KVShape shape, std::size_t num_tokens)
    : shape_(shape),
      num_tokens_(num_tokens),
      keys_(shape.token_elems() * num_tokens, 0.0f),
      values_(shape.token_elems() * num_tokens, 0.0f) {}

KVStates::KVStates(KVShape shape, std::size_t num_tokens, std::vector<float> keys,
                   std::vector<float> values)
    : shape_(shape), num_tokens_(num_tokens), keys_(std::move(keys)), values_(std::move(values)) {
  if (keys_.size() != shape.token_elems() * num_tokens ||
      values_.size() != shape.token_elems() * num_tokens) {
    throw std::invalid_argument("KVStates: payload size does not match shape");
  }
}

std::size_t KVStates::offset(std::size_t layer, std::size_t token, std::size_t head) const {
  if (layer >= shape_.num_layers || token >= num_tokens_ || head >= shape_.num_heads) {
    throw std::out_of_range("KVStates: index out of range");
  }
  return ((layer * num_tokens_ + token) * shape_.num_heads + head) * shape_.head_dim;
}

std::span<const float> KVStates::key(std::size_t layer, std::size_t token,
                                     std::size_t head) const {
  return std::span<const float>(keys_).subspan(offset(layer, token, head), shape_.head_dim);
}

std::span<const float> KVStates::value(std::size_t layer, std::size_t token,
                                       std::size_t head) const {
  return std::span<const float>(values_).subspan(offset(layer, token, head), shape_.head_dim);
}

std::span<float> KVStates::mutable_key(std::size_t layer, std::size_t token, std::size_t head) {
  return std::span<float>(keys_).subspan(offset(layer, token, head), shape_.head_dim);
}

std::span<float> KVStates::mutable_value(std::size_t layer, std::size_t token,
                                         std::size_t head) {
  return std::span<float>(values_).subspan(offset(layer, token, head), shape_.head_dim);
}

std::span<const float> KVStates::key_rows(std::size_t layer, std::size_t first,
                                          std::size_t count) const {
  if (count == 0 || first + count > num_tokens_) {
    throw std::out_of_range("KVStates::key_rows: token range out of bounds");
  }
  return std::span<const float>(keys_).subspan(offset(layer, first, 0),
                                               count * shape_.row_elems());
}

std::span<const float> KVStates::value_rows(std::size_t layer, std::size_t first,
                                            std::size_t count) const {
  if (count == 0 || first + count > num_tokens_) {
    throw std::out_of_range("KVStates::value_rows: token range out of bounds");
  }
  return std::span<const float>(values_).subspan(offset(layer, first, 0),
                                                 count * shape_.row_elems());
}

std::vector<float> KVStates::token_keys(std::size_t token) const {
  std::vector<float> out;
  out.reserve(shape_.token_elems());
  for (std::size_t l = 0; l < shape_.num_layers; ++l) {
    const auto row = key_rows(l, token, 1);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::vector<float> KVStates::token_values(std::size_t token) const {
  std::vector<float> out;
  out.reserve(shape_.token_elems());
  for (std::size_t l = 0; l < shape_.num_layers; ++l) {
    const auto row = value_rows(l, token, 1);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

KVStates kv_for_trace(const Trace& trace, const ProjectionSet& proj, double noise_scale,
                      std::uint64_t seed) {
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw std::invalid_argument("kv_for_trace: noise_scale must be finite and >= 0");
  }
  trace.validate();
  const KVShape shape = proj.shape();
  const auto tokens = trace.flat_tokens();
  KVStates kv(shape, tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Vec emb = proj.embedding(tokens[t]);
    for (std::size_t l = 0; l < shape.num_layers; ++l) {
      for (std::size_t h = 0; h < shape.num_heads; ++h) {
        const Vec k = proj.project(ProjectionRole::kKey, l, h, emb);
        const Vec v = proj.project(ProjectionRole::kValue, l, h, emb);
        CounterRng kn(derive_key(seed, {kNoiseTag, l, h, t, 1}));
        CounterRng vn(derive_key(seed, {kNoiseTag, l, h, t, 2}));
        auto kd = kv.mutable_key(l, t, h);
        auto vd = kv.mutable_value(l, t, h);
        for (std::size_t d = 0; d < shape.head_dim; ++d) {
          // Draw noise even at scale 0 so seeds line up across scales.
          const double nk = kn.normal();
          const double nv = vn.normal();
          kd[d] = static_cast<float>(k[d] + noise_scale * nk);
          vd[d] = static_cast<float>(v[d] + noise_scale * nv);
        }
      }
    }
  }
  return kv;
}

Vec query_for_token(const ProjectionSet& proj, TokenId token, std::size_t layer,
                    std::size_t head) {
  return proj.project(ProjectionRole::kQuery, layer, head, proj.embedding(token));
}

}  // namespace memshare
