#include "memshare/report.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace memshare {

namespace {

std::string fixed(double v, int digits = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

const char* tool_version() { return MEMSHARE_VERSION; }

ordered_json meta_json(const ReportMeta& meta) {
  ordered_json j;
  j["tool"] = "memshare";
  j["version"] = tool_version();
  j["command"] = meta.command;
  j["seed"] = meta.seed;
  j["config"] = meta.config;
  return j;
}

void write_meta_header(std::ostream& out, const ReportMeta& meta) {
  out << "# memshare " << tool_version() << ' ' << meta.command << '\n';
  out << "# seed: " << meta.seed << '\n';
  out << "# config: " << meta.config.dump() << '\n';
}

std::string strip_meta(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::string out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    out += line;
    out += '\n';
  }
  return out;
}

std::string format_threshold(double t) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), t);
  return std::string(buf, res.ptr);
}

void write_similarity_csv(std::ostream& out, std::span<const Trace> traces,
                          std::span<const double> thresholds) {
  out << "seq_id,step_index,best_match_index,cosine";
  for (double t : thresholds) out << ",redundant@" << format_threshold(t);
  out << '\n';
  for (const Trace& trace : traces) {
    for (const StepSimilarity& s : step_similarities(trace)) {
      out << trace.seq_id << ',' << s.step_index << ',';
      if (s.best_match) out << *s.best_match;
      out << ',' << fixed(s.cosine);
      for (double t : thresholds) out << ',' << (s.step_index > 0 && s.cosine > t ? 1 : 0);
      out << '\n';
    }
  }
}

void write_ratios_csv(std::ostream& out, std::span<const Trace> traces,
                      std::span<const double> thresholds) {
  out << "seq_id,num_steps";
  for (double t : thresholds) out << ",ratio@" << format_threshold(t);
  out << '\n';
  std::vector<double> sums(thresholds.size(), 0.0);
  std::size_t total_steps = 0;
  for (const Trace& trace : traces) {
    const auto sims = step_similarities(trace);
    out << trace.seq_id << ',' << trace.steps.size();
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      const double r = similarity_ratio(sims, thresholds[i]);
      sums[i] += r;
      out << ',' << fixed(r);
    }
    out << '\n';
    total_steps += trace.steps.size();
  }
  if (!traces.empty()) {
    out << "mean," << total_steps;
    for (double s : sums) out << ',' << fixed(s / static_cast<double>(traces.size()));
    out << '\n';
  }
}

void write_distance_csv(std::ostream& out, const DistanceMatrix& m) {
  out << "block";
  for (std::size_t j = 0; j < m.size(); ++j) out << ',' << j;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << i;
    for (std::size_t j = 0; j < m.size(); ++j) out << ',' << fixed(m.at(i, j), 8);
    out << '\n';
  }
}

void write_matches_csv(std::ostream& out, std::span<const BlockMatch> matches) {
  out << "target_block,source_block,target_step,source_step,distance\n";
  for (const BlockMatch& m : matches) {
    out << m.target_block << ',' << m.source_block << ',' << m.target_step << ','
        << m.source_step << ',' << fixed(m.distance, 8) << '\n';
  }
}

ordered_json metrics_json(const SimMetrics& m) {
  ordered_json j;
  j["ticks_elapsed"] = m.ticks_elapsed;
  j["tokens_total"] = m.tokens_total;
  j["throughput"] = m.throughput;
  j["peak_allocated_blocks"] = m.peak_allocated_blocks;
  j["mean_batch_size"] = m.mean_batch_size;
  j["affected_ratio_final"] = m.affected_ratio_final;
  j["shares_applied"] = m.shares_applied;
  j["blocks_freed_by_sharing"] = m.blocks_freed_by_sharing;
  j["filter_invocations"] = m.filter_invocations;
  j["preemptions"] = m.preemptions;
  j["finished_requests"] = m.finished_requests;
  j["all_finished"] = m.all_finished;
  j["tokens_per_request"] = m.tokens_per_request;
  return j;
}

void write_occupancy_csv(std::ostream& out, const SimMetrics& m) {
  out << "tick,allocated,running,waiting,swapped\n";
  for (const OccupancySample& s : m.occupancy) {
    out << s.tick << ',' << s.allocated << ',' << s.running << ',' << s.waiting << ','
        << s.swapped << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "epsilon,delta,t,d_h,max_weight_ratio,max_output_ratio,trials\n";
  for (const SweepRow& row : r.rows) {
    out << format_threshold(row.epsilon) << ',' << format_threshold(row.delta) << ',' << row.t
        << ',' << row.head_dim << ',' << fixed(row.max_weight_ratio, 9) << ','
        << fixed(row.max_output_ratio, 9) << ',' << row.trials << '\n';
  }
}

}  // namespace memshare
