// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "zmix/errors.hpp"

namespace zmix {

/// Univariate observations, optionally with ground-truth component labels.
struct Dataset {
  std::vector<double> values;
  std::vector<int> true_labels;  // empty when unknown; else same length as values
  std::string name;

  int size() const { return static_cast<int>(values.size()); }
  bool has_labels() const { return !true_labels.empty(); }

  void validate() const {
    if (values.empty()) throw DataError("dataset '" + name + "' is empty");
    for (double v : values)
      if (!std::isfinite(v)) throw DataError("dataset '" + name + "' contains a non-finite value");
    if (!true_labels.empty() && true_labels.size() != values.size())
      throw DataError("dataset '" + name + "': label column length does not match values");
  }

  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }

  // Population variance (divisor n).
  double variance() const {
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return s / static_cast<double>(values.size());
  }

  // FNV-1a over the canonical text serialization; pins bundled data and ties
  // traces to the dataset they were fitted on.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto feed = [&h](const char* p, size_t len) {
      for (size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001B3ULL;
      }
    };
    char buf[64];
    for (size_t i = 0; i < values.size(); ++i) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), values[i]);
      feed(buf, static_cast<size_t>(end - buf));
      if (!true_labels.empty()) {
        feed("\t", 1);
        auto [lend, lec] = std::to_chars(buf, buf + sizeof(buf), true_labels[i]);
        feed(buf, static_cast<size_t>(lend - buf));
      }
      feed("\n", 1);
    }
    return h;
  }
};

namespace detail {

inline bool parse_double(const std::string& tok, double& out) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline bool parse_int(const std::string& tok, int& out) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// One numeric value per line, optional whitespace-delimited second column
// holding an integer label. Blank lines are skipped; anything else that does
// not parse is rejected with its line number.
inline Dataset load_dataset(const std::string& path, const std::string& name = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  Dataset ds;
  ds.name = name.empty() ? path : name;
  std::string line;
  long lineno = 0;
  bool saw_labels = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::istringstream ls(t);
    std::string tok1, tok2, extra;
    ls >> tok1;
    const bool has2 = static_cast<bool>(ls >> tok2);
    if (ls >> extra)
      throw DataError(path + ":" + std::to_string(lineno) + ": too many columns");
    double v;
    if (!detail::parse_double(tok1, v) || !std::isfinite(v))
      throw DataError(path + ":" + std::to_string(lineno) + ": not a numeric value: '" + tok1 + "'");
    if (has2) {
      int lab;
      if (!detail::parse_int(tok2, lab))
        throw DataError(path + ":" + std::to_string(lineno) + ": not an integer label: '" + tok2 + "'");
      if (!saw_labels && !ds.values.empty())
        throw DataError(path + ":" + std::to_string(lineno) + ": label column starts mid-file");
      saw_labels = true;
      ds.true_labels.push_back(lab);
    } else if (saw_labels) {
      throw DataError(path + ":" + std::to_string(lineno) + ": label column ends mid-file");
    }
    ds.values.push_back(v);
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  char buf[64];
  for (size_t i = 0; i < ds.values.size(); ++i) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ds.values[i]);
    out.write(buf, end - buf);
    if (!ds.true_labels.empty()) {
      out.put('\t');
      auto [lend, lec] = std::to_chars(buf, buf + sizeof(buf), ds.true_labels[i]);
      out.write(buf, lend - buf);
    }
    out.put('\n');
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace zmix
