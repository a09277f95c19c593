#include "memshare/kvgen.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "memshare/simfilter.h"

namespace memshare {
namespace {

TraceConfig small_config(std::uint64_t seed) {
  TraceConfig c;
  c.seed = seed;
  c.num_steps = 16;
  c.min_step_len = 16;
  c.max_step_len = 48;
  c.step_quantum = 16;
  return c;
}

TEST(GenerateTrace, ZeroProbabilityMeansNoLabels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TraceConfig c = small_config(seed);
    c.redundancy_prob = 0.0;
    const Trace t = generate_trace(c);
    for (const auto& l : t.redundancy_labels) EXPECT_FALSE(l.has_value());
  }
}

TEST(GenerateTrace, ForcedCopyingRepeatsStepZero) {
  TraceConfig c = small_config(3);
  c.num_steps = 5;
  c.redundancy_prob = 1.0;
  c.mutation_rate = 0.0;
  const Trace t = generate_trace(c);
  ASSERT_EQ(t.steps.size(), 5u);
  EXPECT_FALSE(t.redundancy_labels[0].has_value());
  for (std::size_t i = 1; i < 5; ++i) {
    ASSERT_TRUE(t.redundancy_labels[i].has_value());
    EXPECT_LT(*t.redundancy_labels[i], i);
    EXPECT_EQ(t.steps[i].tokens, t.steps[0].tokens);
  }
}

TEST(GenerateTrace, Deterministic) {
  const Trace a = generate_trace(small_config(42));
  const Trace b = generate_trace(small_config(42));
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].tokens, b.steps[i].tokens);
    EXPECT_EQ(a.steps[i].text, b.steps[i].text);
  }
  EXPECT_EQ(a.redundancy_labels, b.redundancy_labels);
  EXPECT_NE(generate_trace(small_config(43)).flat_tokens(), a.flat_tokens());
}

TEST(GenerateTrace, StructuralInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TraceConfig c = small_config(seed);
    c.mutation_rate = 0.25;
    const Trace t = generate_trace(c);
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(t.seq_id, "s" + std::to_string(seed));
    std::size_t offset = 0;
    for (const auto& s : t.steps) {
      EXPECT_FALSE(s.tokens.empty());
      EXPECT_EQ(s.token_offset, offset);
      EXPECT_EQ(s.token_offset % 16, 0u);
      EXPECT_EQ(s.text.find("\n\n"), std::string::npos);
      for (TokenId tok : s.tokens) EXPECT_LT(tok, c.vocab_size);
      offset = s.end_offset();
    }
    EXPECT_EQ(t.total_tokens(), offset);
  }
}

TEST(GenerateTrace, MutationResamplesExactCount) {
  TraceConfig c = small_config(8);
  c.redundancy_prob = 1.0;
  c.mutation_rate = 0.25;
  c.vocab_size = 1 << 20;  // resampled tokens essentially never collide
  const Trace t = generate_trace(c);
  for (std::size_t i = 1; i < t.steps.size(); ++i) {
    const auto& src = t.steps[*t.redundancy_labels[i]].tokens;
    const auto& dst = t.steps[i].tokens;
    ASSERT_EQ(src.size(), dst.size());
    std::size_t diff = 0;
    for (std::size_t k = 0; k < src.size(); ++k) diff += src[k] != dst[k];
    const auto expect = static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(src.size())));
    EXPECT_LE(diff, expect);
    EXPECT_GE(diff + 1, expect);
  }
}

TEST(GenerateTrace, InvalidConfigThrows) {
  TraceConfig c = small_config(0);
  c.redundancy_prob = 1.5;
  EXPECT_THROW(generate_trace(c), std::invalid_argument);
  c = small_config(0);
  c.mutation_rate = -0.1;
  EXPECT_THROW(generate_trace(c), std::invalid_argument);
  c = small_config(0);
  c.vocab_size = 15;
  EXPECT_THROW(generate_trace(c), std::invalid_argument);
  c = small_config(0);
  c.min_step_len = 10;
  c.max_step_len = 5;
  EXPECT_THROW(generate_trace(c), std::invalid_argument);
  c = small_config(0);
  c.num_steps = 0;
  EXPECT_THROW(generate_trace(c), std::invalid_argument);
}

TEST(SegmentSteps, Examples) {
  using V = std::vector<std::string>;
  EXPECT_EQ(segment_steps("a\n\nb\n\nc", "\n\n"), (V{"a", "b", "c"}));
  EXPECT_EQ(segment_steps("a", "\n\n"), (V{"a"}));
  EXPECT_EQ(segment_steps("a\n\n\n\nb", "\n\n"), (V{"a", "b"}));
  EXPECT_EQ(segment_steps("\n\nfirst\n\n", "\n\n"), (V{"first"}));
  EXPECT_TRUE(segment_steps("", "\n\n").empty());
  EXPECT_THROW(segment_steps("abc", ""), std::invalid_argument);
}

TEST(RenderStepText, RoundTripsThroughSegmentation) {
  const std::vector<TokenId> toks{5, 9, 12};
  EXPECT_EQ(render_step_text(toks), "w5 w9 w12");
  const std::string joined = render_step_text(toks) + "\n\n" + render_step_text(toks);
  EXPECT_EQ(segment_steps(joined, "\n\n").size(), 2u);
}

TEST(ProjectionSet, DeterministicAndUnitEmbeddings) {
  const KVShape shape{};
  const ProjectionSet a(9, shape, 16);
  const ProjectionSet b(9, shape, 16);
  const ProjectionSet c(10, shape, 16);
  for (TokenId t : {0u, 1u, 300u}) {
    const Vec e = a.embedding(t);
    EXPECT_EQ(e, b.embedding(t));
    EXPECT_NEAR(norm(e, NormKind::kL2), 1.0, 1e-12);
    EXPECT_NE(e, c.embedding(t));
  }
  const Vec x = a.embedding(4);
  EXPECT_EQ(a.project(ProjectionRole::kKey, 1, 1, x), b.project(ProjectionRole::kKey, 1, 1, x));
  EXPECT_NE(a.project(ProjectionRole::kKey, 1, 1, x), a.project(ProjectionRole::kValue, 1, 1, x));
  EXPECT_NE(a.project(ProjectionRole::kKey, 0, 1, x), a.project(ProjectionRole::kKey, 1, 1, x));
  EXPECT_THROW(ProjectionSet(0, KVShape{0, 2, 8}), std::invalid_argument);
}

TEST(KVForTrace, NoiseFreeDuplicatesAreExactlyEqual) {
  TraceConfig c = small_config(5);
  c.redundancy_prob = 1.0;
  const Trace t = generate_trace(c);
  const ProjectionSet proj(1, KVShape{});
  const KVStates kv = kv_for_trace(t, proj, 0.0, 5);
  EXPECT_EQ(kv.num_tokens(), t.total_tokens());
  const StepRecord& s0 = t.steps[0];
  const StepRecord& s1 = t.steps[1];
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t k = 0; k < s0.tokens.size(); ++k) {
        const auto a = kv.key(l, s0.token_offset + k, h);
        const auto b = kv.key(l, s1.token_offset + k, h);
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
        const auto va = kv.value(l, s0.token_offset + k, h);
        const auto vb = kv.value(l, s1.token_offset + k, h);
        EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
      }
    }
  }
  const BlockRange r0 = full_blocks_of_step(s0, 16);
  const BlockRange r1 = full_blocks_of_step(s1, 16);
  ASSERT_GE(r0.count, 1u);
  for (std::size_t i = 0; i < r0.count; ++i) {
    EXPECT_EQ(stage2_block_distance(block_view(kv, r0.first + i, 16),
                                    block_view(kv, r1.first + i, 16)),
              0.0);
  }
}

TEST(KVForTrace, NoiseIsDeterministicAndFinite) {
  const Trace t = generate_trace(small_config(6));
  const ProjectionSet proj(2, KVShape{});
  const KVStates a = kv_for_trace(t, proj, 0.3, 77);
  const KVStates b = kv_for_trace(t, proj, 0.3, 77);
  EXPECT_EQ(a.keys(), b.keys());
  EXPECT_EQ(a.values(), b.values());
  for (float x : a.keys()) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NE(kv_for_trace(t, proj, 0.3, 78).keys(), a.keys());
  EXPECT_THROW(kv_for_trace(t, proj, -0.1, 1), std::invalid_argument);
  EXPECT_THROW(kv_for_trace(t, proj, NAN, 1), std::invalid_argument);
}

// Mean stage-2 distance between planted copies and their sources.
double mean_copy_distance(std::uint64_t seed, double eta, double mutation) {
  TraceConfig c = small_config(seed);
  c.redundancy_prob = 0.5;
  c.mutation_rate = mutation;
  const Trace t = generate_trace(c);
  const ProjectionSet proj(seed, KVShape{});
  const KVStates kv = kv_for_trace(t, proj, eta, seed);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (!t.redundancy_labels[i]) continue;
    const BlockRange dst = full_blocks_of_step(t.steps[i], 16);
    const BlockRange src = full_blocks_of_step(t.steps[*t.redundancy_labels[i]], 16);
    for (std::size_t k = 0; k < std::min(dst.count, src.count); ++k) {
      sum += stage2_block_distance(block_view(kv, dst.first + k, 16),
                                   block_view(kv, src.first + k, 16));
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

TEST(KVForTraceProperty, CopyDistanceGrowsWithNoise) {
  double prev_total = 0.0;
  for (double eta : {0.0, 0.1, 0.2, 0.4}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) total += mean_copy_distance(seed, eta, 0.0);
    if (eta == 0.0) {
      EXPECT_EQ(total, 0.0);
    } else {
      EXPECT_GT(total, prev_total) << "eta " << eta;
    }
    prev_total = total;
  }
}

TEST(KVForTraceProperty, CopyDistanceGrowsWithMutation) {
  double prev_total = -1.0;
  for (double m : {0.0, 0.1, 0.3, 0.6}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) total += mean_copy_distance(seed, 0.05, m);
    EXPECT_GT(total, prev_total) << "mutation " << m;
    prev_total = total;
  }
}

TEST(KVStates, AccessorsAndBounds) {
  KVShape shape{2, 2, 3};
  KVStates kv(shape, 4);
  kv.mutable_key(1, 2, 1)[2] = 5.0f;
  EXPECT_EQ(kv.key(1, 2, 1)[2], 5.0f);
  const auto tk = kv.token_keys(2);
  ASSERT_EQ(tk.size(), shape.token_elems());
  EXPECT_EQ(tk[1 * shape.row_elems() + 1 * 3 + 2], 5.0f);
  EXPECT_THROW(kv.key(2, 0, 0), std::out_of_range);
  EXPECT_THROW(kv.key_rows(0, 3, 2), std::out_of_range);
  EXPECT_THROW(KVStates(shape, 2, std::vector<float>(5), std::vector<float>(5)),
               std::invalid_argument);
}

TEST(QueryForToken, DeterministicPerLayerHead) {
  const ProjectionSet proj(3, KVShape{});
  EXPECT_EQ(query_for_token(proj, 11, 0, 0), query_for_token(proj, 11, 0, 0));
  EXPECT_NE(query_for_token(proj, 11, 0, 0), query_for_token(proj, 11, 1, 0));
  EXPECT_EQ(query_for_token(proj, 11, 2, 1).size(), 8u);
}

}  // namespace
}  // namespace memshare
