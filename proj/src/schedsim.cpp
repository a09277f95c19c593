#include "memshare/schedsim.h"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "memshare/rng.h"

namespace memshare {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Steps covering tokens [0, emitted), the last one truncated if needed.
Trace prefix_trace(const Trace& full, std::size_t emitted) {
  Trace p;
  p.seq_id = full.seq_id;
  for (std::size_t i = 0; i < full.steps.size(); ++i) {
    const StepRecord& s = full.steps[i];
    if (s.token_offset >= emitted) break;
    StepRecord step = s;
    if (s.end_offset() > emitted) {
      step.tokens.resize(emitted - s.token_offset);
      step.text = render_step_text(step.tokens);
    }
    p.steps.push_back(std::move(step));
    p.redundancy_labels.push_back(full.redundancy_labels[i]);
  }
  return p;
}

struct Live {
  Request req;
  std::size_t index = 0;        // position in the caller's request list
  std::size_t admit_order = 0;  // larger = younger
  std::size_t step = 0;         // step the cursor is currently in
};

class Simulator {
 public:
  Simulator(const SimConfig& cfg, const std::vector<Request>& requests)
      : cfg_(cfg), store_(cfg.block_budget, cfg.dims) {
    live_.reserve(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
      Live l;
      l.req = requests[i];
      l.req.state = RequestState::kWaiting;
      l.req.tokens_emitted = 0;
      l.index = i;
      live_.push_back(std::move(l));
    }
    waiting_.resize(live_.size());
    for (std::size_t i = 0; i < live_.size(); ++i) waiting_[i] = i;
    std::stable_sort(waiting_.begin(), waiting_.end(), [this](std::size_t a, std::size_t b) {
      const Request& ra = live_[a].req;
      const Request& rb = live_[b].req;
      if (ra.arrival_tick != rb.arrival_tick) return ra.arrival_tick < rb.arrival_tick;
      return ra.seq_id < rb.seq_id;
    });
    metrics_.tokens_per_request.assign(live_.size(), 0);
  }

  SimMetrics run() {
    std::size_t tick = 0;
    for (; tick < cfg_.max_ticks && metrics_.finished_requests < live_.size(); ++tick) {
      admit(tick);
      emit(tick);
      record(tick);
    }
    metrics_.ticks_elapsed = tick;
    metrics_.all_finished = metrics_.finished_requests == live_.size();
    if (tick > 0) {
      metrics_.throughput =
          static_cast<double>(metrics_.tokens_total) / static_cast<double>(tick);
      metrics_.mean_batch_size = batch_sum_ / static_cast<double>(tick);
    }
    metrics_.affected_ratio_final =
        finished_tokens_ ? static_cast<double>(finished_shared_) /
                               static_cast<double>(finished_tokens_)
                         : 0.0;
    return metrics_;
  }

 private:
  std::size_t block_size() const { return cfg_.dims.block_size; }

  void note_peak() {
    metrics_.peak_allocated_blocks =
        std::max(metrics_.peak_allocated_blocks, store_.allocated_blocks());
  }

  void admit(std::size_t tick) {
    std::size_t reserved = 0;
    for (std::size_t idx : running_) {
      reserved += store_.blocks_needed_for_append(live_[idx].req.seq_id);
    }
    const std::size_t free = store_.free_blocks() > reserved ? store_.free_blocks() - reserved : 0;

    std::vector<std::size_t> queue(swapped_.begin(), swapped_.end());
    for (std::size_t idx : waiting_) {
      if (live_[idx].req.arrival_tick <= tick) queue.push_back(idx);
    }
    std::vector<std::size_t> demands;
    demands.reserve(queue.size());
    for (std::size_t idx : queue) demands.push_back(next_block_demand(live_[idx].req, block_size()));
    const std::size_t n = admissible_prefix(free, demands);

    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = queue[k];
      Live& l = live_[idx];
      const bool was_swapped = l.req.state == RequestState::kSwapped;
      if (was_swapped) {
        swapped_.erase(std::find(swapped_.begin(), swapped_.end(), idx));
      } else {
        waiting_.erase(std::find(waiting_.begin(), waiting_.end(), idx));
      }
      l.req.state = RequestState::kRunning;
      l.admit_order = next_admit_++;
      store_.add_sequence(l.req.seq_id);
      running_.push_back(idx);
      if (was_swapped) replay(l);
    }
  }

  // Recompute semantics: rebuild the emitted prefix in fresh blocks, then
  // re-run the filter over everything that was rebuilt.
  void replay(Live& l) {
    const auto& kv = l.req.script->kv;
    for (std::size_t t = 0; t < l.req.tokens_emitted; ++t) {
      store_.append_token(l.req.seq_id, kv.token_keys(t), kv.token_values(t));
    }
    note_peak();
    if (cfg_.sharing_enabled && l.req.tokens_emitted > 0) {
      const Trace prefix = prefix_trace(l.req.script->trace, l.req.tokens_emitted);
      ++metrics_.filter_invocations;
      apply(l, find_reusable_blocks_all(prefix, kv, cfg_.thresholds, block_size()));
    }
  }

  void apply(const Live& l, const std::vector<BlockMatch>& matches) {
    for (const auto& m : matches) {
      const ShareResult r = store_.share_block({l.req.seq_id, m.target_block},
                                               {l.req.seq_id, m.source_block});
      if (r.remapped) ++metrics_.shares_applied;
      if (r.freed) ++metrics_.blocks_freed_by_sharing;
    }
  }

  void evaluate(Live& l) {
    const Trace prefix = prefix_trace(l.req.script->trace, l.req.tokens_emitted);
    ++metrics_.filter_invocations;
    apply(l, find_reusable_blocks(prefix, l.req.script->kv, cfg_.thresholds, block_size()));
  }

  void preempt_youngest() {
    auto it = std::max_element(running_.begin(), running_.end(),
                               [this](std::size_t a, std::size_t b) {
                                 return live_[a].admit_order < live_[b].admit_order;
                               });
    const std::size_t idx = *it;
    running_.erase(it);
    Live& l = live_[idx];
    store_.free_sequence(l.req.seq_id);
    l.req.state = RequestState::kSwapped;
    swapped_.push_back(idx);
    ++metrics_.preemptions;
  }

  void emit(std::size_t tick) {
    const std::vector<std::size_t> order = running_;
    std::size_t batch = 0;
    for (std::size_t idx : order) {
      Live& l = live_[idx];
      if (l.req.state != RequestState::kRunning) continue;  // preempted this tick
      while (l.req.state == RequestState::kRunning &&
             store_.blocks_needed_for_append(l.req.seq_id) > store_.free_blocks()) {
        preempt_youngest();
      }
      if (l.req.state != RequestState::kRunning) continue;

      const std::size_t pos = l.req.tokens_emitted;
      const auto& kv = l.req.script->kv;
      store_.append_token(l.req.seq_id, kv.token_keys(pos), kv.token_values(pos));
      note_peak();
      ++l.req.tokens_emitted;
      ++metrics_.tokens_total;
      ++metrics_.tokens_per_request[l.index];
      ++batch;

      const auto& steps = l.req.script->trace.steps;
      bool boundary = false;
      while (l.step < steps.size() && l.req.tokens_emitted >= steps[l.step].end_offset()) {
        boundary = true;
        ++l.step;
      }
      const bool periodic = cfg_.evaluator_period > 0 && (tick + 1) % cfg_.evaluator_period == 0;
      if (cfg_.sharing_enabled && (boundary || periodic)) evaluate(l);

      if (l.req.tokens_emitted == l.req.length()) finish(l);
    }
    batch_sum_ += static_cast<double>(batch);
  }

  void finish(Live& l) {
    finished_tokens_ += store_.num_tokens(l.req.seq_id);
    finished_shared_ += store_.shared_tokens(l.req.seq_id);
    store_.free_sequence(l.req.seq_id);
    running_.erase(std::find(running_.begin(), running_.end(), l.index));
    l.req.state = RequestState::kFinished;
    ++metrics_.finished_requests;
  }

  void record(std::size_t tick) {
    OccupancySample s;
    s.tick = tick;
    s.allocated = store_.allocated_blocks();
    s.running = running_.size();
    s.waiting = waiting_.size();
    s.swapped = swapped_.size();
    metrics_.occupancy.push_back(s);
  }

  const SimConfig& cfg_;
  BlockStore store_;
  std::vector<Live> live_;
  std::vector<std::size_t> waiting_;
  std::vector<std::size_t> swapped_;
  std::vector<std::size_t> running_;  // admission order
  std::size_t next_admit_ = 0;
  double batch_sum_ = 0.0;
  std::size_t finished_tokens_ = 0;
  std::size_t finished_shared_ = 0;
  SimMetrics metrics_;
};

}  // namespace

std::size_t next_block_demand(const Request& request, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("next_block_demand: block_size must be >= 1");
  if (request.state == RequestState::kSwapped) {
    return ceil_div(request.tokens_emitted + 1, block_size);
  }
  return 1;
}

std::size_t admissible_prefix(std::size_t free_blocks, std::span<const std::size_t> demands) {
  std::size_t used = 0;
  std::size_t n = 0;
  for (std::size_t d : demands) {
    if (used + d > free_blocks) break;
    used += d;
    ++n;
  }
  return n;
}

std::vector<Request> admissible_batch(std::size_t free_blocks,
                                      const std::vector<Request>& waiting,
                                      std::size_t block_size) {
  std::vector<std::size_t> demands;
  demands.reserve(waiting.size());
  for (const auto& r : waiting) demands.push_back(next_block_demand(r, block_size));
  const std::size_t n = admissible_prefix(free_blocks, demands);
  return {waiting.begin(), waiting.begin() + static_cast<std::ptrdiff_t>(n)};
}

SimMetrics run_simulation(const SimConfig& cfg, const std::vector<Request>& requests) {
  if (cfg.dims.block_size == 0) {
    throw std::invalid_argument("run_simulation: block_size must be >= 1");
  }
  if (cfg.sharing_enabled) cfg.thresholds.validate();
  std::set<std::string> ids;
  for (const auto& r : requests) {
    if (!r.script) throw std::invalid_argument("run_simulation: request without script");
    if (!ids.insert(r.seq_id).second) {
      throw std::invalid_argument("run_simulation: duplicate seq_id '" + r.seq_id + "'");
    }
    if (!(r.script->kv.shape() == cfg.dims.kv)) {
      throw std::invalid_argument("run_simulation: request '" + r.seq_id +
                                  "' KV shape differs from store dims");
    }
    if (r.script->kv.num_tokens() < r.length() || r.length() == 0) {
      throw std::invalid_argument("run_simulation: request '" + r.seq_id +
                                  "' has an empty or uncovered script");
    }
    const std::size_t need = ceil_div(r.length(), cfg.dims.block_size);
    if (need > cfg.block_budget) {
      throw std::invalid_argument("run_simulation: request '" + r.seq_id + "' needs " +
                                  std::to_string(need) + " blocks but budget is " +
                                  std::to_string(cfg.block_budget));
    }
  }
  if (cfg.block_budget == 0) {
    throw std::invalid_argument("run_simulation: block_budget must be >= 1");
  }
  Simulator sim(cfg, requests);
  return sim.run();
}

RunComparison compare_runs(const SimConfig& cfg, const std::vector<Request>& requests) {
  SimConfig base = cfg;
  base.sharing_enabled = false;
  SimConfig shared = cfg;
  shared.sharing_enabled = true;
  RunComparison out;
  out.baseline = run_simulation(base, requests);
  out.shared = run_simulation(shared, requests);
  out.throughput_gain = out.baseline.throughput > 0.0
                            ? out.shared.throughput / out.baseline.throughput - 1.0
                            : 0.0;
  return out;
}

std::vector<Request> make_requests(const WorkloadConfig& cfg) {
  const ProjectionSet proj(cfg.seed, cfg.shape, cfg.embed_dim);
  std::vector<Request> out;
  out.reserve(cfg.num_requests);
  for (std::size_t i = 0; i < cfg.num_requests; ++i) {
    TraceConfig tc = cfg.trace;
    tc.seed = derive_key(cfg.seed, {0x726571ULL, i});
    tc.seq_id = "r" + std::to_string(i);
    auto script = std::make_shared<RequestScript>();
    script->trace = generate_trace(tc);
    script->kv = kv_for_trace(script->trace, proj, cfg.noise_scale, tc.seed);
    Request r;
    r.seq_id = tc.seq_id;
    r.script = std::move(script);
    out.push_back(std::move(r));
  }
  return out;
}

double calibrate_workload_threshold(const WorkloadConfig& cfg, std::size_t block_size,
                                    double quantile) {
  const ProjectionSet proj(cfg.seed, cfg.shape, cfg.embed_dim);
  TraceConfig tc = cfg.trace;
  tc.seed = cfg.seed + 7919;
  tc.redundancy_prob = 0.0;
  tc.seq_id = "calibration";
  const Trace t = generate_trace(tc);
  const KVStates kv = kv_for_trace(t, proj, cfg.noise_scale, tc.seed);
  return calibrate_block_threshold(kv, block_size, quantile);
}

std::size_t unshared_blocks_for(const std::vector<Request>& requests, std::size_t block_size) {
  std::size_t total = 0;
  for (const auto& r : requests) total += ceil_div(r.length(), block_size);
  return total;
}

}  // namespace memshare
