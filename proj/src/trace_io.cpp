#include "memshare/trace_io.h"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "json.hpp"

namespace memshare {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'S', 'K', 'V'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw FormatError("MSKV1: truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32s(std::ostream& out, const std::vector<float>& data) {
  std::vector<unsigned char> buf(data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> get_f32s(std::istream& in, std::size_t count) {
  std::vector<unsigned char> buf(count * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw FormatError("MSKV1: truncated payload");
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

FormatError::FormatError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

void write_trace_jsonl(std::ostream& out, const Trace& trace) {
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    nlohmann::ordered_json j;
    j["seq_id"] = s.seq_id;
    j["step_index"] = s.step_index;
    j["text"] = s.text;
    j["tokens"] = s.tokens;
    j["token_offset"] = s.token_offset;
    if (i < trace.redundancy_labels.size() && trace.redundancy_labels[i]) {
      j["copy_of"] = *trace.redundancy_labels[i];
    } else {
      j["copy_of"] = nullptr;
    }
    out << j.dump() << '\n';
  }
}

std::vector<Trace> read_trace_jsonl(std::istream& in) {
  std::vector<Trace> traces;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    StepRecord step;
    std::optional<std::size_t> copy_of;
    try {
      const auto j = nlohmann::json::parse(line);
      step.seq_id = j.at("seq_id").get<std::string>();
      step.step_index = j.at("step_index").get<std::size_t>();
      step.text = j.at("text").get<std::string>();
      step.tokens = j.at("tokens").get<std::vector<TokenId>>();
      step.token_offset = j.at("token_offset").get<std::size_t>();
      if (j.contains("copy_of") && !j.at("copy_of").is_null()) {
        copy_of = j.at("copy_of").get<std::size_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed trace record: ") + e.what(), lineno);
    }
    if (step.tokens.empty()) throw FormatError("step has no tokens", lineno);
    auto [it, inserted] = index.try_emplace(step.seq_id, traces.size());
    if (inserted) {
      traces.emplace_back();
      traces.back().seq_id = step.seq_id;
    }
    Trace& t = traces[it->second];
    if (step.step_index != t.steps.size()) {
      throw FormatError("step_index " + std::to_string(step.step_index) + " out of order", lineno);
    }
    const std::size_t expected = t.total_tokens();
    if (step.token_offset != expected) {
      throw FormatError("token_offset " + std::to_string(step.token_offset) + " expected " +
                            std::to_string(expected),
                        lineno);
    }
    if (copy_of && *copy_of >= step.step_index) {
      throw FormatError("copy_of must reference an earlier step", lineno);
    }
    t.steps.push_back(std::move(step));
    t.redundancy_labels.push_back(copy_of);
  }
  return traces;
}

std::vector<Trace> read_trace_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open trace file: " + path.string());
  return read_trace_jsonl(in);
}

void write_mskv(std::ostream& out, const KVStates& kv) {
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(kVersion));
  const auto& s = kv.shape();
  put_u32(out, static_cast<std::uint32_t>(s.num_layers));
  put_u32(out, static_cast<std::uint32_t>(s.num_heads));
  put_u32(out, static_cast<std::uint32_t>(s.head_dim));
  put_u32(out, static_cast<std::uint32_t>(kv.num_tokens()));
  put_f32s(out, kv.keys());
  put_f32s(out, kv.values());
}

KVStates read_mskv(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("MSKV1: bad magic");
  }
  const int version = in.get();
  if (version != kVersion) {
    throw FormatError("MSKV1: unsupported version " + std::to_string(version));
  }
  KVShape shape;
  shape.num_layers = get_u32(in);
  shape.num_heads = get_u32(in);
  shape.head_dim = get_u32(in);
  const std::size_t tokens = get_u32(in);
  if (shape.num_layers == 0 || shape.num_heads == 0 || shape.head_dim == 0) {
    throw FormatError("MSKV1: zero dimension in header");
  }
  const std::size_t count = shape.token_elems() * tokens;
  auto keys = get_f32s(in, count);
  auto values = get_f32s(in, count);
  return KVStates(shape, tokens, std::move(keys), std::move(values));
}

KVStates read_mskv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open KV dump: " + path.string());
  return read_mskv(in);
}

}  // namespace memshare
