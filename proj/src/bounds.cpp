#include "memshare/bounds.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "memshare/rng.h"

namespace memshare {

namespace {

void require_index(const AttentionState& state, std::size_t j) {
  if (j >= state.length()) {
    throw std::out_of_range("bound check: index " + std::to_string(j) + " out of range (t=" +
                            std::to_string(state.length()) + ")");
  }
}

void require_dim(const AttentionState& state, const Vec& v) {
  if (v.size() != state.head_dim()) {
    throw std::invalid_argument("bound check: perturbed vector has wrong dimension");
  }
}

double l2_diff(const Vec& a, const Vec& b) { return norm(subtract(a, b), NormKind::kL2); }

double ratio(double observed, double bound) {
  if (bound > 0.0) return observed / bound;
  return observed > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

Vec random_unit(CounterRng& rng, std::size_t d) {
  Vec u(d);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : u) {
      x = rng.normal();
      sq += x * x;
    }
  } while (sq == 0.0);
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : u) x *= inv;
  return u;
}

Vec random_gaussian(CounterRng& rng, std::size_t d, double scale) {
  Vec v(d);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

Vec add_scaled(const Vec& a, const Vec& dir, double s) {
  Vec out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * dir[i];
  return out;
}

}  // namespace

KeyBoundReport check_key_bound(const AttentionState& state, std::size_t j,
                               const Vec& perturbed_key, const BoundOptions& opt) {
  state.validate();
  require_index(state, j);
  require_dim(state, perturbed_key);
  AttentionState perturbed = state;
  perturbed.keys[j] = perturbed_key;

  const Vec s = attention_scores(state);
  const Vec sp = attention_scores(perturbed);
  const Vec a = softmax(s);
  const Vec ap = softmax(sp);

  KeyBoundReport r;
  r.epsilon = l2_diff(state.keys[j], perturbed_key);
  const double qn = norm(state.query, NormKind::kL2);
  r.score_bound = qn * r.epsilon / std::sqrt(static_cast<double>(state.head_dim()));
  r.weight_bound = r.score_bound;
  r.observed_score_delta = std::abs(s[j] - sp[j]);
  r.observed_weight_l1 = norm(subtract(a, ap), NormKind::kL1);
  r.pass = r.observed_score_delta <= opt.bound_scale * r.score_bound + opt.slack &&
           r.observed_weight_l1 <= opt.bound_scale * r.weight_bound + opt.slack;
  return r;
}

ValueBoundReport check_value_bound(const AttentionState& state,
                                   const std::vector<std::size_t>& indices,
                                   const std::vector<Vec>& perturbed_values,
                                   const BoundOptions& opt) {
  state.validate();
  if (indices.empty() || indices.size() != perturbed_values.size()) {
    throw std::invalid_argument("check_value_bound: need one perturbed value per index");
  }
  std::vector<bool> seen(state.length(), false);
  AttentionState perturbed = state;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require_index(state, indices[k]);
    require_dim(state, perturbed_values[k]);
    if (seen[indices[k]]) throw std::invalid_argument("check_value_bound: repeated index");
    seen[indices[k]] = true;
    perturbed.values[indices[k]] = perturbed_values[k];
  }
  const Vec a = softmax(attention_scores(state));
  const Vec o = weighted_sum(a, state.values);
  const Vec op = weighted_sum(a, perturbed.values);

  ValueBoundReport r;
  double mass = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const double dv = l2_diff(state.values[indices[k]], perturbed_values[k]);
    r.delta = std::max(r.delta, dv);
    r.weighted_bound += a[indices[k]] * dv;
    mass += a[indices[k]];
  }
  r.output_bound = r.delta * mass;
  r.observed_output_l2 = l2_diff(o, op);
  const double s = opt.bound_scale;
  r.pass = r.observed_output_l2 <= s * r.weighted_bound + opt.slack &&
           r.observed_output_l2 <= s * r.output_bound + opt.slack &&
           r.observed_output_l2 <= s * r.delta + opt.slack;
  return r;
}

BoundReport check_combined_bound(const AttentionState& state, std::size_t j,
                                 const Vec& perturbed_key, const Vec& perturbed_value,
                                 const BoundOptions& opt) {
  state.validate();
  require_index(state, j);
  require_dim(state, perturbed_key);
  require_dim(state, perturbed_value);

  BoundReport r;
  r.key = check_key_bound(state, j, perturbed_key, opt);
  r.value = check_value_bound(state, {j}, {perturbed_value}, opt);

  AttentionState value_only = state;  // o'
  value_only.values[j] = perturbed_value;
  AttentionState both = value_only;  // o''
  both.keys[j] = perturbed_key;

  const Vec a = softmax(attention_scores(state));
  const Vec a2 = softmax(attention_scores(both));
  const Vec o = weighted_sum(a, state.values);
  const Vec o1 = weighted_sum(a, value_only.values);
  const Vec o2 = weighted_sum(a2, both.values);

  r.observed_total_l2 = l2_diff(o, o2);
  const double first = l2_diff(o, o1);
  r.observed_attention_term = l2_diff(o1, o2);
  for (const auto& v : value_only.values) {
    r.max_perturbed_value_norm = std::max(r.max_perturbed_value_norm, norm(v, NormKind::kL2));
  }
  r.attention_term_bound = norm(subtract(a, a2), NormKind::kL1) * r.max_perturbed_value_norm;
  r.combined_bound = r.value.delta + r.key.weight_bound * r.max_perturbed_value_norm;
  r.triangle_holds = r.observed_total_l2 <= first + r.observed_attention_term + 1e-12;

  const double s = opt.bound_scale;
  r.all_pass = r.key.pass && r.value.pass && r.triangle_holds &&
               r.observed_attention_term <= s * r.attention_term_bound + opt.slack &&
               r.observed_total_l2 <= s * r.combined_bound + opt.slack;
  return r;
}

SubstitutionReport check_substitution(const AttentionState& original,
                                      const AttentionState& perturbed,
                                      const BoundOptions& opt) {
  original.validate();
  perturbed.validate();
  if (original.length() != perturbed.length() || original.head_dim() != perturbed.head_dim() ||
      original.query != perturbed.query) {
    throw std::invalid_argument("check_substitution: states differ in shape or query");
  }
  const double qn = norm(original.query, NormKind::kL2);
  const double sd = std::sqrt(static_cast<double>(original.head_dim()));
  double max_v = 0.0;
  for (const auto& v : perturbed.values) max_v = std::max(max_v, norm(v, NormKind::kL2));

  SubstitutionReport r;
  for (std::size_t i = 0; i < original.length(); ++i) {
    if (original.keys[i] == perturbed.keys[i] && original.values[i] == perturbed.values[i]) {
      continue;
    }
    ++r.changed_positions;
    const double eps = l2_diff(original.keys[i], perturbed.keys[i]);
    const double delta = l2_diff(original.values[i], perturbed.values[i]);
    r.summed_bound += delta + qn * eps / sd * max_v;
  }
  r.observed_l2 = l2_diff(attention_output(original), attention_output(perturbed));
  r.pass = r.observed_l2 <= opt.bound_scale * r.summed_bound + opt.slack;
  return r;
}

SweepResult sweep_report(const SweepConfig& cfg) {
  if (cfg.trials_per_cell == 0) {
    throw std::invalid_argument("sweep_report: trials must be >= 1");
  }
  if (cfg.epsilon_grid.empty() || cfg.delta_grid.empty() || cfg.head_dims.empty() ||
      cfg.lengths.empty()) {
    throw std::invalid_argument("sweep_report: grids must be nonempty");
  }
  for (double e : cfg.epsilon_grid) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw std::invalid_argument("sweep_report: bad epsilon");
  }
  for (double d : cfg.delta_grid) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("sweep_report: bad delta");
  }
  for (std::size_t d : cfg.head_dims) {
    if (d == 0) throw std::invalid_argument("sweep_report: head_dim must be >= 1");
  }
  for (std::size_t t : cfg.lengths) {
    if (t == 0) throw std::invalid_argument("sweep_report: t must be >= 1");
  }

  SweepResult out;
  for (std::size_t ei = 0; ei < cfg.epsilon_grid.size(); ++ei) {
    for (std::size_t di = 0; di < cfg.delta_grid.size(); ++di) {
      for (std::size_t ti = 0; ti < cfg.lengths.size(); ++ti) {
        for (std::size_t hi = 0; hi < cfg.head_dims.size(); ++hi) {
          const double eps = cfg.epsilon_grid[ei];
          const double delta = cfg.delta_grid[di];
          const std::size_t t = cfg.lengths[ti];
          const std::size_t d = cfg.head_dims[hi];
          SweepRow row{eps, delta, t, d, 0.0, 0.0, cfg.trials_per_cell, 0};
          const double scale = 1.0 / std::sqrt(static_cast<double>(d));

          for (std::size_t trial = 0; trial < cfg.trials_per_cell; ++trial) {
            CounterRng rng(derive_key(cfg.seed, {ei, di, ti, hi, trial}));
            AttentionState st;
            st.query = random_gaussian(rng, d, scale);
            for (std::size_t i = 0; i < t; ++i) {
              st.keys.push_back(random_gaussian(rng, d, scale));
              st.values.push_back(random_gaussian(rng, d, scale));
            }
            const std::size_t j = rng.below(t);
            const Vec kp = add_scaled(st.keys[j], random_unit(rng, d), eps);
            const Vec vp = add_scaled(st.values[j], random_unit(rng, d), delta);
            const BoundReport br = check_combined_bound(st, j, kp, vp, cfg.options);

            std::vector<std::size_t> idx;
            std::vector<Vec> pv;
            for (std::size_t i = 0; i < t; ++i) {
              if (rng.uniform() < 0.5) idx.push_back(i);
            }
            if (idx.empty()) idx.push_back(rng.below(t));
            for (std::size_t i : idx) pv.push_back(add_scaled(st.values[i], random_unit(rng, d), delta));
            const ValueBoundReport multi = check_value_bound(st, idx, pv, cfg.options);

            row.max_weight_ratio = std::max(
                row.max_weight_ratio, ratio(br.key.observed_weight_l1, br.key.weight_bound));
            row.max_output_ratio =
                std::max({row.max_output_ratio, ratio(br.observed_total_l2, br.combined_bound),
                          ratio(multi.observed_output_l2, multi.output_bound)});

            auto flag = [&](const char* check, double observed, double bound) {
              out.violations.push_back({eps, delta, t, d, trial, j, check, observed, bound});
              ++row.violations;
            };
            if (!br.key.pass) {
              flag("key", br.key.observed_weight_l1, br.key.weight_bound * cfg.options.bound_scale);
            }
            if (!br.value.pass) {
              flag("value", br.value.observed_output_l2,
                   br.value.weighted_bound * cfg.options.bound_scale);
            }
            if (!br.all_pass && br.key.pass && br.value.pass) {
              flag("combined", br.observed_total_l2, br.combined_bound * cfg.options.bound_scale);
            }
            if (!multi.pass) {
              flag("value-multi", multi.observed_output_l2,
                   multi.output_bound * cfg.options.bound_scale);
            }
            ++out.total_trials;
          }
          out.rows.push_back(row);
        }
      }
    }
  }
  return out;
}

}  // namespace memshare
