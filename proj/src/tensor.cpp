#include "memshare/tensor.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace memshare {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument(std::string(what) + ": non-finite element");
    }
  }
}

template <typename T>
double frobenius_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("frobenius_distance: shape mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

void AttentionState::validate() const {
  if (query.empty()) {
    throw std::invalid_argument("AttentionState: empty query");
  }
  if (keys.empty()) {
    throw std::invalid_argument("AttentionState: no keys");
  }
  if (keys.size() != values.size()) {
    throw std::invalid_argument("AttentionState: keys/values length mismatch");
  }
  const std::size_t d = query.size();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].size() != d || values[i].size() != d) {
      throw std::invalid_argument("AttentionState: dimension mismatch at position " +
                                  std::to_string(i));
    }
  }
}

Vec softmax(std::span<const double> scores) {
  if (scores.empty()) {
    throw std::invalid_argument("softmax: empty input");
  }
  require_finite(scores, "softmax");
  const double peak = *std::max_element(scores.begin(), scores.end());
  Vec out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - peak);
    total += out[i];
  }
  for (double& w : out) w /= total;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vec attention_scores(const AttentionState& state) {
  state.validate();
  const double scale = 1.0 / std::sqrt(static_cast<double>(state.head_dim()));
  Vec scores(state.length());
  for (std::size_t i = 0; i < state.length(); ++i) {
    scores[i] = dot(state.query, state.keys[i]) * scale;
  }
  return scores;
}

Vec weighted_sum(std::span<const double> weights, const std::vector<Vec>& values) {
  if (weights.size() != values.size() || values.empty()) {
    throw std::invalid_argument("weighted_sum: weights/values mismatch");
  }
  Vec out(values.front().size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j].size() != out.size()) {
      throw std::invalid_argument("weighted_sum: ragged values");
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weights[j] * values[j][k];
  }
  return out;
}

Vec attention_output(const AttentionState& state) {
  const Vec weights = softmax(attention_scores(state));
  return weighted_sum(weights, state.values);
}

double norm(std::span<const double> v, NormKind kind) {
  if (v.empty()) {
    throw std::invalid_argument("norm: empty vector");
  }
  double acc = 0.0;
  switch (kind) {
    case NormKind::kL1:
      for (double x : v) acc += std::abs(x);
      return acc;
    case NormKind::kL2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case NormKind::kLinf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

Vec subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("subtract: dimension mismatch");
  }
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double frobenius_distance(std::span<const float> a, std::span<const float> b) {
  return frobenius_impl(a, b);
}

double frobenius_distance(std::span<const double> a, std::span<const double> b) {
  return frobenius_impl(a, b);
}

Vec to_vec(std::span<const float> v) { return Vec(v.begin(), v.end()); }

}  // namespace memshare
