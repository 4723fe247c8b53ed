// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "zmix/errors.hpp"
#include "zmix/sampler.hpp"
#include "zmix/zswitch.hpp"

namespace zmix {

namespace detail {

// Shortest round-trip serialization; from_chars recovers the exact bits.
inline void append_number(std::string& out, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

inline void append_number(std::string& out, long v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

inline void append_number(std::string& out, int v) { append_number(out, static_cast<long>(v)); }

class FieldReader {
 public:
  FieldReader(std::string_view line, const std::string& context)
      : line_(line), pos_(0), context_(context) {}

  template <typename T>
  T next() {
    if (pos_ > line_.size()) throw DataError(context_ + ": truncated record");
    size_t end = line_.find('\t', pos_);
    if (end == std::string_view::npos) end = line_.size();
    T value{};
    auto [p, ec] = std::from_chars(line_.data() + pos_, line_.data() + end, value);
    if (ec != std::errc() || p != line_.data() + end)
      throw DataError(context_ + ": bad field '" + std::string(line_.substr(pos_, end - pos_)) + "'");
    pos_ = end + 1;
    return value;
  }

  bool done() const { return pos_ > line_.size(); }

 private:
  std::string_view line_;
  size_t pos_;
  std::string context_;
};

inline void write_state_fields(std::string& row, const ChainState& s) {
  for (double w : s.weights) {
    row.push_back('\t');
    append_number(row, w);
  }
  for (double m : s.means) {
    row.push_back('\t');
    append_number(row, m);
  }
  for (double v : s.variances) {
    row.push_back('\t');
    append_number(row, v);
  }
  for (int z : s.allocations) {
    row.push_back('\t');
    append_number(row, z);
  }
}

inline ChainState read_state_fields(FieldReader& r, int K, int n) {
  ChainState s;
  s.weights.resize(K);
  s.means.resize(K);
  s.variances.resize(K);
  s.allocations.resize(n);
  for (int k = 0; k < K; ++k) s.weights[k] = r.next<double>();
  for (int k = 0; k < K; ++k) s.means[k] = r.next<double>();
  for (int k = 0; k < K; ++k) s.variances[k] = r.next<double>();
  for (int i = 0; i < n; ++i) s.allocations[i] = r.next<int>();
  return s;
}

}  // namespace detail

inline nlohmann::json ladder_to_json(const TemperingLadder& l) { return nlohmann::json(l.alphas); }

/// Persist a trace as `<stem>.trace.tsv` (one record per retained iteration:
/// iteration index, weights, means, variances, allocations) plus a
/// `<stem>.meta.json` sidecar carrying the config echo, ladder, seed, data
/// checksum, per-chain alive counts and swap diagnostics.
inline void save_trace(const PosteriorTrace& trace, const std::string& stem) {
  {
    std::ofstream out(stem + ".trace.tsv");
    if (!out) throw DataError("cannot write trace file: " + stem + ".trace.tsv");
    std::string row;
    for (size_t t = 0; t < trace.target_samples.size(); ++t) {
      row.clear();
      detail::append_number(row, trace.config.burn_in + static_cast<long>(t) + 1);
      detail::write_state_fields(row, trace.target_samples[t]);
      row.push_back('\n');
      out << row;
    }
    if (!out) throw DataError("write failed: " + stem + ".trace.tsv");
  }
  nlohmann::json meta;
  meta["format"] = "zmix-trace-v1";
  meta["dataset_name"] = trace.dataset_name;
  meta["data_checksum"] = trace.data_checksum;
  meta["n"] = trace.n;
  meta["config"] = {{"K", trace.config.K},
                    {"iterations", trace.config.iterations},
                    {"burn_in", trace.config.burn_in},
                    {"swap_prob", trace.config.swap_prob},
                    {"seed", trace.config.seed},
                    {"warm_sweeps", trace.config.warm_sweeps},
                    {"store_all_chains", trace.config.store_all_chains},
                    {"check_states", trace.config.check_states},
                    {"ladder", ladder_to_json(trace.config.ladder)}};
  meta["hyper"] = {{"K", trace.hyper.K}, {"alpha", trace.hyper.alpha}, {"a", trace.hyper.a},
                   {"b", trace.hyper.b}, {"l", trace.hyper.l},         {"tau", trace.hyper.tau}};
  meta["alive_counts"] = trace.alive_counts;
  nlohmann::json swaps = nlohmann::json::array();
  for (const auto& s : trace.swap_stats)
    swaps.push_back({{"attempts", s.attempts}, {"accepts", s.accepts}});
  meta["swap_stats"] = swaps;
  std::ofstream mout(stem + ".meta.json");
  if (!mout) throw DataError("cannot write trace metadata: " + stem + ".meta.json");
  mout << meta.dump(2) << "\n";
  if (!mout) throw DataError("write failed: " + stem + ".meta.json");
}

inline PosteriorTrace load_trace(const std::string& stem) {
  nlohmann::json meta;
  {
    std::ifstream min(stem + ".meta.json");
    if (!min) throw DataError("cannot open trace metadata: " + stem + ".meta.json");
    try {
      min >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad trace metadata " + stem + ".meta.json: " + e.what());
    }
  }
  PosteriorTrace trace;
  try {
    if (meta.at("format").get<std::string>() != "zmix-trace-v1")
      throw DataError("unknown trace format in " + stem + ".meta.json");
    trace.dataset_name = meta.at("dataset_name").get<std::string>();
    trace.data_checksum = meta.at("data_checksum").get<std::uint64_t>();
    trace.n = meta.at("n").get<int>();
    const auto& c = meta.at("config");
    trace.config.K = c.at("K").get<int>();
    trace.config.iterations = c.at("iterations").get<long>();
    trace.config.burn_in = c.at("burn_in").get<long>();
    trace.config.swap_prob = c.at("swap_prob").get<double>();
    trace.config.seed = c.at("seed").get<std::uint64_t>();
    trace.config.warm_sweeps = c.at("warm_sweeps").get<long>();
    trace.config.store_all_chains = c.at("store_all_chains").get<bool>();
    trace.config.check_states = c.at("check_states").get<bool>();
    trace.config.ladder.alphas = c.at("ladder").get<std::vector<double>>();
    const auto& h = meta.at("hyper");
    trace.hyper.K = h.at("K").get<int>();
    trace.hyper.alpha = h.at("alpha").get<double>();
    trace.hyper.a = h.at("a").get<double>();
    trace.hyper.b = h.at("b").get<double>();
    trace.hyper.l = h.at("l").get<double>();
    trace.hyper.tau = h.at("tau").get<double>();
    trace.alive_counts = meta.at("alive_counts").get<std::vector<std::vector<int>>>();
    for (const auto& s : meta.at("swap_stats")) {
      SwapStats st;
      st.attempts = s.at("attempts").get<long>();
      st.accepts = s.at("accepts").get<long>();
      trace.swap_stats.push_back(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad trace metadata " + stem + ".meta.json: " + e.what());
  }

  std::ifstream in(stem + ".trace.tsv");
  if (!in) throw DataError("cannot open trace file: " + stem + ".trace.tsv");
  const int K = trace.config.K;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    detail::FieldReader r(line, stem + ".trace.tsv:" + std::to_string(lineno));
    r.next<long>();  // iteration index, implied by position
    trace.target_samples.push_back(detail::read_state_fields(r, K, trace.n));
  }
  if (trace.target_samples.empty())
    throw DataError("trace file has no records: " + stem + ".trace.tsv");
  if (static_cast<long>(trace.target_samples.size()) != trace.config.retained())
    throw DataError("trace record count does not match config in " + stem);
  return trace;
}

/// Relabeled sub-traces persist in the trace record format plus the applied
/// permutation per iteration: `<stem>.k<k0>.relabeled.tsv` and a matching
/// meta sidecar.
inline void save_relabeled_cell(const RelabeledCell& cell, int K, int n,
                                const std::string& stem) {
  const std::string base = stem + ".k" + std::to_string(cell.k0) + ".relabeled";
  {
    std::ofstream out(base + ".tsv");
    if (!out) throw DataError("cannot write relabeled trace: " + base + ".tsv");
    std::string row;
    for (size_t i = 0; i < cell.states.size(); ++i) {
      row.clear();
      detail::append_number(row, cell.iterations[i]);
      detail::write_state_fields(row, cell.states[i]);
      for (int p : cell.permutations[i]) {
        row.push_back('\t');
        detail::append_number(row, p);
      }
      row.push_back('\n');
      out << row;
    }
    if (!out) throw DataError("write failed: " + base + ".tsv");
  }
  nlohmann::json meta;
  meta["format"] = "zmix-relabeled-v1";
  meta["k0"] = cell.k0;
  meta["m"] = cell.m;
  meta["reference_iteration"] = cell.reference_iteration;
  meta["phase_two_invocations"] = cell.phase_two_invocations;
  meta["K"] = K;
  meta["n"] = n;
  meta["records"] = cell.states.size();
  std::ofstream mout(base + ".meta.json");
  if (!mout) throw DataError("cannot write relabeled metadata: " + base + ".meta.json");
  mout << meta.dump(2) << "\n";
}

inline RelabeledCell load_relabeled_cell(const std::string& stem, int k0) {
  const std::string base = stem + ".k" + std::to_string(k0) + ".relabeled";
  nlohmann::json meta;
  {
    std::ifstream min(base + ".meta.json");
    if (!min) throw DataError("cannot open relabeled metadata: " + base + ".meta.json");
    try {
      min >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad relabeled metadata " + base + ".meta.json: " + e.what());
    }
  }
  RelabeledCell cell;
  int K, n;
  try {
    if (meta.at("format").get<std::string>() != "zmix-relabeled-v1")
      throw DataError("unknown relabeled format in " + base + ".meta.json");
    cell.k0 = meta.at("k0").get<int>();
    cell.m = meta.at("m").get<double>();
    cell.reference_iteration = meta.at("reference_iteration").get<long>();
    cell.phase_two_invocations = meta.at("phase_two_invocations").get<long>();
    K = meta.at("K").get<int>();
    n = meta.at("n").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad relabeled metadata " + base + ".meta.json: " + e.what());
  }
  std::ifstream in(base + ".tsv");
  if (!in) throw DataError("cannot open relabeled trace: " + base + ".tsv");
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    detail::FieldReader r(line, base + ".tsv:" + std::to_string(lineno));
    cell.iterations.push_back(r.next<long>());
    cell.states.push_back(detail::read_state_fields(r, K, n));
    std::vector<int> perm(K);
    for (int k = 0; k < K; ++k) perm[k] = r.next<int>();
    cell.permutations.push_back(std::move(perm));
  }
  if (cell.states.empty()) throw DataError("relabeled trace has no records: " + base + ".tsv");
  return cell;
}

}  // namespace zmix
