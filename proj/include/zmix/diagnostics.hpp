// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zmix/dataset.hpp"
#include "zmix/errors.hpp"
#include "zmix/kde.hpp"
#include "zmix/rng.hpp"
#include "zmix/zswitch.hpp"

namespace zmix {

inline constexpr long kDefaultReplicates = 10000;
// Pooled predictive values are kept exactly up to this many draws; beyond it
// quantiles come from a fixed 2^16-bin histogram filled in a second pass.
inline constexpr long kMaxPooledValues = 1L << 24;

struct ParamSummary {
  double estimate = 0, lo = 0, hi = 0;
};

struct ComponentSummary {
  ParamSummary weight, mean, variance;
};

/// Share of retained iterations per candidate configuration.
inline std::map<int, double> configuration_probabilities(
    const std::map<int, std::vector<long>>& partition) {
  if (partition.empty()) throw DataError("configuration_probabilities: empty partition");
  long total = 0;
  for (const auto& [k0, cell] : partition) total += static_cast<long>(cell.size());
  std::map<int, double> probs;
  for (const auto& [k0, cell] : partition)
    probs[k0] = static_cast<double>(cell.size()) / static_cast<double>(total);
  return probs;
}

namespace detail {

inline ParamSummary summarize_series(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  ParamSummary s;
  s.estimate = std::accumulate(scratch.begin(), scratch.end(), 0.0) /
               static_cast<double>(scratch.size());
  s.lo = quantile_sorted(scratch, 0.025);
  s.hi = quantile_sorted(scratch, 0.975);
  return s;
}

}  // namespace detail

/// Posterior mean and equal-tailed 95% interval for every alive component's
/// weight, mean and variance, in trace label order 1..k0.
inline std::vector<ComponentSummary> posterior_summaries(const RelabeledCell& cell) {
  if (cell.states.size() < 2) throw DataError("posterior_summaries: need at least 2 samples");
  std::vector<ComponentSummary> out(cell.k0);
  std::vector<double> scratch(cell.states.size());
  for (int k = 0; k < cell.k0; ++k) {
    for (size_t t = 0; t < cell.states.size(); ++t) scratch[t] = cell.states[t].weights[k];
    out[k].weight = detail::summarize_series(scratch);
    for (size_t t = 0; t < cell.states.size(); ++t) scratch[t] = cell.states[t].means[k];
    out[k].mean = detail::summarize_series(scratch);
    for (size_t t = 0; t < cell.states.size(); ++t) scratch[t] = cell.states[t].variances[k];
    out[k].variance = detail::summarize_series(scratch);
  }
  return out;
}

/// Fraction of retained iterations assigning each observation to each alive
/// component; rows sum to one.
inline std::vector<std::vector<double>> allocation_probabilities(const RelabeledCell& cell,
                                                                 int n) {
  if (cell.states.empty()) throw DataError("allocation_probabilities: empty cell");
  std::vector<std::vector<double>> probs(n, std::vector<double>(cell.k0, 0.0));
  for (const auto& s : cell.states)
    for (int i = 0; i < n; ++i) {
      const int z = s.allocations[i];
      if (z >= 1 && z <= cell.k0) probs[i][z - 1] += 1.0;
    }
  const double inv = 1.0 / static_cast<double>(cell.states.size());
  for (auto& row : probs)
    for (double& p : row) p *= inv;
  return probs;
}

namespace detail {

// Canonical 1..K0 encoding of arbitrary integer truth labels.
inline std::vector<int> canonical_labels(std::span<const int> labels, int& K0) {
  std::vector<int> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  K0 = static_cast<int>(distinct.size());
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    out[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), labels[i]) -
                              distinct.begin()) +
             1;
  return out;
}

inline std::vector<int> argmax_assignment(const std::vector<std::vector<double>>& alloc_probs) {
  std::vector<int> out(alloc_probs.size());
  for (size_t i = 0; i < alloc_probs.size(); ++i) {
    int best = 0;
    for (size_t k = 1; k < alloc_probs[i].size(); ++k)
      if (alloc_probs[i][k] > alloc_probs[i][best]) best = static_cast<int>(k);
    out[i] = best + 1;  // ties hold the smaller label through strict >
  }
  return out;
}

// Best bijection estimated label -> true label by exhaustive search (k0 <= 8).
inline std::pair<double, std::vector<int>> best_bijection(
    const std::vector<int>& assigned, const std::vector<int>& truth, int k0) {
  std::vector<std::vector<long>> confusion(k0, std::vector<long>(k0, 0));
  for (size_t i = 0; i < assigned.size(); ++i) ++confusion[assigned[i] - 1][truth[i] - 1];
  std::vector<int> perm(k0);
  std::iota(perm.begin(), perm.end(), 1);
  std::vector<int> best_perm = perm;
  long best = -1;
  do {
    long hits = 0;
    for (int e = 0; e < k0; ++e) hits += confusion[e][perm[e] - 1];
    if (hits > best) {
      best = hits;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {100.0 * static_cast<double>(best) / static_cast<double>(assigned.size()), best_perm};
}

}  // namespace detail

/// Percentage of observations whose modal allocation matches the truth under
/// the best label bijection. Not applicable when the configuration size
/// differs from the true component count.
inline std::optional<double> classification_accuracy(
    const std::vector<std::vector<double>>& alloc_probs, std::span<const int> true_labels) {
  if (alloc_probs.empty() || true_labels.size() != alloc_probs.size())
    throw DataError("classification_accuracy: labels do not match allocation matrix");
  const int k0 = static_cast<int>(alloc_probs[0].size());
  int K0 = 0;
  const auto truth = detail::canonical_labels(true_labels, K0);
  if (K0 != k0) return std::nullopt;
  if (k0 > 8) throw ConfigError("classification_accuracy: bijection search capped at k0 <= 8");
  const auto assigned = detail::argmax_assignment(alloc_probs);
  return detail::best_bijection(assigned, truth, k0).first;
}

struct TrueMixture {
  std::vector<double> weights, means, variances;
};

/// Mean absolute and squared error of the posterior-mean estimates against
/// the true parameters, pooled over the matched components and all three
/// parameter families. Component matching reuses the classification
/// bijection.
inline std::optional<std::pair<double, double>> parameter_errors(
    const std::vector<ComponentSummary>& summaries,
    const std::vector<std::vector<double>>& alloc_probs, std::span<const int> true_labels,
    const TrueMixture& truth) {
  const int k0 = static_cast<int>(summaries.size());
  int K0 = 0;
  const auto canon = detail::canonical_labels(true_labels, K0);
  if (K0 != k0 || static_cast<int>(truth.weights.size()) != k0) return std::nullopt;
  const auto assigned = detail::argmax_assignment(alloc_probs);
  const auto [pct, perm] = detail::best_bijection(assigned, canon, k0);
  double abs_sum = 0.0, sq_sum = 0.0;
  for (int e = 0; e < k0; ++e) {
    const int t = perm[e] - 1;
    const double dw = summaries[e].weight.estimate - truth.weights[t];
    const double dm = summaries[e].mean.estimate - truth.means[t];
    const double dv = summaries[e].variance.estimate - truth.variances[t];
    abs_sum += std::abs(dw) + std::abs(dm) + std::abs(dv);
    sq_sum += dw * dw + dm * dm + dv * dv;
  }
  const double terms = 3.0 * k0;
  return std::make_pair(abs_sum / terms, sq_sum / terms);
}

/// Fixed-range histogram used for pooled predictive quantiles when the draw
/// count is too large to keep exactly.
class FixedHistogram {
 public:
  FixedHistogram() = default;
  FixedHistogram(double lo, double hi, int bins = 1 << 16) : lo_(lo), hi_(hi) {
    if (!(hi > lo)) hi_ = lo + 1.0;
    counts_.assign(bins, 0);
    width_ = (hi_ - lo_) / static_cast<double>(bins);
  }

  void add(double x) {
    int b = static_cast<int>((x - lo_) / width_);
    b = std::clamp(b, 0, static_cast<int>(counts_.size()) - 1);
    ++counts_[b];
    ++total_;
  }

  void merge(const FixedHistogram& other) {
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    total_ += other.total_;
  }

  double quantile(double p) const {
    if (total_ == 0) throw DataError("histogram quantile with no data");
    const double target = p * static_cast<double>(total_);
    double cum = 0.0;
    for (size_t b = 0; b < counts_.size(); ++b) {
      const double next = cum + static_cast<double>(counts_[b]);
      if (next >= target) {
        const double frac =
            counts_[b] == 0 ? 0.0 : (target - cum) / static_cast<double>(counts_[b]);
        return lo_ + (static_cast<double>(b) + frac) * width_;
      }
      cum = next;
    }
    return hi_;
  }

  // Piecewise-constant density on a coarser grid.
  DensityGrid density(int gridsize = 512) const {
    DensityGrid g;
    g.x.resize(gridsize);
    g.density.assign(gridsize, 0.0);
    const int per = std::max(1, static_cast<int>(counts_.size()) / gridsize);
    const double cell = width_ * per;
    for (int i = 0; i < gridsize; ++i) {
      long c = 0;
      for (int j = i * per; j < std::min((i + 1) * per, static_cast<int>(counts_.size())); ++j)
        c += counts_[j];
      g.x[i] = lo_ + (static_cast<double>(i) + 0.5) * cell;
      g.density[i] = static_cast<double>(c) / (static_cast<double>(total_) * cell);
    }
    return g;
  }

  long total() const { return total_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  bool empty() const { return counts_.empty(); }

 private:
  double lo_ = 0, hi_ = 1, width_ = 1;
  std::vector<long> counts_;
  long total_ = 0;
};

/// Streamed posterior predictive replicates: per-replicate extremes and
/// sorted-difference error sums, pooled draws (exact up to kMaxPooledValues,
/// histogram beyond), and pooled moments.
struct PredictiveReplicates {
  long R = 0;
  int n = 0;
  std::vector<double> rep_min, rep_max;
  std::vector<double> abs_err_sum, sq_err_sum;  // vs the sorted observed data
  std::vector<double> pooled;                   // sorted; empty when histogram path used
  FixedHistogram hist;
  double pooled_mean = 0, pooled_var = 0;
};

namespace detail {

inline void draw_replicate(const ChainState& s, int n, std::mt19937_64& rng,
                           std::vector<double>& out) {
  const int K = s.k();
  std::vector<double> cum(K);
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    acc += s.weights[k];
    cum[k] = acc;
  }
  out.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(rng) * acc;
    int k = K - 1;
    for (int j = 0; j < K; ++j)
      if (u < cum[j]) {
        k = j;
        break;
      }
    out[i] = s.means[k] + std::sqrt(s.variances[k]) * normal_draw(rng);
  }
}

}  // namespace detail

/// Generate R predictive datasets of size n by resampling retained
/// iterations. Each replicate consumes its own derived stream, so the result
/// is independent of parallel scheduling.
inline PredictiveReplicates generate_replicates(const RelabeledCell& cell, const Dataset& data,
                                                long R, std::uint64_t seed) {
  if (R < 1) throw ConfigError("generate_replicates: R must be >= 1");
  if (cell.states.empty()) throw DataError("generate_replicates: empty cell");
  const int n = data.size();
  PredictiveReplicates reps;
  reps.R = R;
  reps.n = n;
  reps.rep_min.resize(R);
  reps.rep_max.resize(R);
  reps.abs_err_sum.resize(R);
  reps.sq_err_sum.resize(R);

  std::vector<double> sorted_data(data.values);
  std::sort(sorted_data.begin(), sorted_data.end());
  const long total = R * static_cast<long>(n);
  const bool exact = total <= kMaxPooledValues;
  if (exact) reps.pooled.resize(total);

  const long iters = static_cast<long>(cell.states.size());
  std::vector<double> rep_sum(R), rep_sumsq(R);

#pragma omp parallel for schedule(static)
  for (long r = 0; r < R; ++r) {
    auto rng = derive_stream(seed, StreamPurpose::predictive, static_cast<std::uint64_t>(r));
    const long pick = std::min(static_cast<long>(uniform01(rng) * iters), iters - 1);
    std::vector<double> rep;
    detail::draw_replicate(cell.states[pick], n, rng, rep);
    double lo = rep[0], hi = rep[0], s1 = 0.0, s2 = 0.0;
    for (double v : rep) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      s1 += v;
      s2 += v * v;
    }
    reps.rep_min[r] = lo;
    reps.rep_max[r] = hi;
    rep_sum[r] = s1;
    rep_sumsq[r] = s2;
    if (exact) std::copy(rep.begin(), rep.end(), reps.pooled.begin() + r * n);
    std::sort(rep.begin(), rep.end());
    double ae = 0.0, se = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = std::abs(sorted_data[i] - rep[i]);
      ae += d;
      se += d * d;
    }
    reps.abs_err_sum[r] = ae;
    reps.sq_err_sum[r] = se;
  }

  // serial reduction keeps the moments bit-identical across thread counts
  double sum = 0.0, sumsq = 0.0;
  for (long r = 0; r < R; ++r) {
    sum += rep_sum[r];
    sumsq += rep_sumsq[r];
  }
  const double tot = static_cast<double>(total);
  reps.pooled_mean = sum / tot;
  reps.pooled_var = std::max(sumsq / tot - reps.pooled_mean * reps.pooled_mean, 0.0);

  if (exact) {
    std::sort(reps.pooled.begin(), reps.pooled.end());
  } else {
    // Second pass over the same streams into a fixed-range histogram.
    double glo = reps.rep_min[0], ghi = reps.rep_max[0];
    for (long r = 0; r < R; ++r) {
      glo = std::min(glo, reps.rep_min[r]);
      ghi = std::max(ghi, reps.rep_max[r]);
    }
    reps.hist = FixedHistogram(glo, ghi);
#pragma omp parallel
    {
      FixedHistogram local(glo, ghi);
#pragma omp for schedule(static) nowait
      for (long r = 0; r < R; ++r) {
        auto rng = derive_stream(seed, StreamPurpose::predictive, static_cast<std::uint64_t>(r));
        const long pick = std::min(static_cast<long>(uniform01(rng) * iters), iters - 1);
        std::vector<double> rep;
        detail::draw_replicate(cell.states[pick], n, rng, rep);
        for (double v : rep) local.add(v);
      }
#pragma omp critical
      reps.hist.merge(local);
    }
  }
  return reps;
}

/// Posterior predictive p-values for the extremes: the chance a replicate
/// minimum (maximum) falls below the observed one, strict inequality.
inline std::pair<double, double> bayes_pvalues(const PredictiveReplicates& reps,
                                               const Dataset& data) {
  if (reps.R < 1) throw DataError("bayes_pvalues: no replicates");
  const double obs_min = *std::min_element(data.values.begin(), data.values.end());
  const double obs_max = *std::max_element(data.values.begin(), data.values.end());
  long below_min = 0, below_max = 0;
  for (long r = 0; r < reps.R; ++r) {
    below_min += reps.rep_min[r] < obs_min;
    below_max += reps.rep_max[r] < obs_max;
  }
  return {static_cast<double>(below_min) / static_cast<double>(reps.R),
          static_cast<double>(below_max) / static_cast<double>(reps.R)};
}

inline std::pair<double, double> predictive_central_interval(const PredictiveReplicates& reps) {
  if (!reps.pooled.empty())
    return {quantile_sorted(reps.pooled, 0.025), quantile_sorted(reps.pooled, 0.975)};
  if (reps.hist.empty()) throw DataError("predictive interval: no pooled draws");
  return {reps.hist.quantile(0.025), reps.hist.quantile(0.975)};
}

/// Fraction of observations strictly inside the pooled predictive 95%
/// interval; a well calibrated fit sits near 0.95.
inline double concordance(const PredictiveReplicates& reps, const Dataset& data) {
  const auto [lo, hi] = predictive_central_interval(reps);
  long inside = 0;
  for (double y : data.values) inside += (y > lo && y < hi);
  return static_cast<double>(inside) / static_cast<double>(data.size());
}

/// Prediction errors: per replicate the sum over order statistics of
/// |y_(i) - y^rep_(i)| (and squared), averaged over replicates.
inline std::pair<double, double> prediction_errors(const PredictiveReplicates& reps,
                                                   const Dataset& data) {
  if (reps.R < 1) throw DataError("prediction_errors: no replicates");
  if (reps.n != data.size()) throw DataError("prediction_errors: replicate size != n");
  double mape = 0.0, mspe = 0.0;
  for (long r = 0; r < reps.R; ++r) {
    mape += reps.abs_err_sum[r];
    mspe += reps.sq_err_sum[r];
  }
  return {mape / static_cast<double>(reps.R), mspe / static_cast<double>(reps.R)};
}

/// Everything reported for one candidate configuration. Components are held
/// in display order (descending posterior-mean weight); display_order maps
/// back to trace labels.
struct ConfigurationReport {
  int k0 = 0;
  double prob = 0;
  long count = 0;
  std::vector<ComponentSummary> params;          // display order
  std::vector<int> display_order;                // display row -> trace label
  std::vector<std::vector<double>> alloc_probs;  // n x k0, columns in display order
  std::optional<double> classification_pct;
  std::optional<double> mae, mse;
  double pmin = 0, pmax = 0, concordance = 0, mape = 0, mspe = 0;
};

inline ConfigurationReport build_configuration_report(
    const RelabeledCell& cell, const Dataset& data, double prob,
    const PredictiveReplicates& reps, const std::optional<TrueMixture>& truth = std::nullopt) {
  ConfigurationReport rep;
  rep.k0 = cell.k0;
  rep.prob = prob;
  rep.count = static_cast<long>(cell.states.size());

  const auto raw_params = posterior_summaries(cell);
  const auto raw_alloc = allocation_probabilities(cell, data.size());

  rep.display_order.resize(cell.k0);
  std::iota(rep.display_order.begin(), rep.display_order.end(), 1);
  std::stable_sort(rep.display_order.begin(), rep.display_order.end(), [&](int a, int b) {
    return raw_params[a - 1].weight.estimate > raw_params[b - 1].weight.estimate;
  });
  for (int r = 0; r < cell.k0; ++r) rep.params.push_back(raw_params[rep.display_order[r] - 1]);
  rep.alloc_probs.assign(data.size(), std::vector<double>(cell.k0, 0.0));
  for (int i = 0; i < data.size(); ++i)
    for (int r = 0; r < cell.k0; ++r)
      rep.alloc_probs[i][r] = raw_alloc[i][rep.display_order[r] - 1];

  if (data.has_labels()) {
    rep.classification_pct = classification_accuracy(rep.alloc_probs, data.true_labels);
    if (truth) {
      const auto errs = parameter_errors(rep.params, rep.alloc_probs, data.true_labels, *truth);
      if (errs) {
        rep.mae = errs->first;
        rep.mse = errs->second;
      }
    }
  }

  const auto [pmin, pmax] = bayes_pvalues(reps, data);
  rep.pmin = pmin;
  rep.pmax = pmax;
  rep.concordance = concordance(reps, data);
  const auto [mape, mspe] = prediction_errors(reps, data);
  rep.mape = mape;
  rep.mspe = mspe;
  return rep;
}

// ---- emission ----

namespace detail {

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << body;
  if (!out) throw DataError("write failed: " + path);
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace detail

/// Three delimited files per configuration: parameter posterior density
/// grids, the allocation-probability matrix, and the observed-vs-predictive
/// density overlay. Numbers are written in shortest round-trip form.
inline void emit_plot_data(const ConfigurationReport& rep, const RelabeledCell& cell,
                           const PredictiveReplicates& reps, const Dataset& data,
                           const std::string& stem) {
  const std::string tag = ".k" + std::to_string(rep.k0);
  {
    std::string body = "series\tx\tdensity\n";
    const size_t T = cell.states.size();
    std::vector<double> series(T);
    for (int r = 0; r < rep.k0; ++r) {
      const int k = rep.display_order[r] - 1;
      const std::string suffix = std::to_string(r + 1);
      const char* names[3] = {"weight_", "mean_", "variance_"};
      for (int p = 0; p < 3; ++p) {
        for (size_t t = 0; t < T; ++t)
          series[t] = p == 0   ? cell.states[t].weights[k]
                      : p == 1 ? cell.states[t].means[k]
                               : cell.states[t].variances[k];
        const auto grid = kde_grid(series);
        for (size_t i = 0; i < grid.x.size(); ++i)
          body += names[p] + suffix + "\t" + detail::fmt_double(grid.x[i]) + "\t" +
                  detail::fmt_double(grid.density[i]) + "\n";
      }
    }
    detail::write_text_file(stem + tag + ".param_density.tsv", body);
  }
  {
    std::string body = "obs";
    for (int r = 0; r < rep.k0; ++r) body += "\tp" + std::to_string(r + 1);
    body += "\n";
    for (size_t i = 0; i < rep.alloc_probs.size(); ++i) {
      body += std::to_string(i + 1);
      for (double p : rep.alloc_probs[i]) body += "\t" + detail::fmt_double(p);
      body += "\n";
    }
    detail::write_text_file(stem + tag + ".allocations.tsv", body);
  }
  {
    // shared grid across both densities
    DensityGrid pred;
    if (!reps.pooled.empty()) {
      pred = kde_grid(reps.pooled, 512);
    } else {
      pred = reps.hist.density(512);
    }
    const auto data_grid = kde_grid(data.values, 512);
    std::string body = "x\tdata_density\tpredictive_density\n";
    const double lo = std::min(pred.x.front(), data_grid.x.front());
    const double hi = std::max(pred.x.back(), data_grid.x.back());
    auto interp = [](const DensityGrid& g, double x) {
      if (x <= g.x.front() || x >= g.x.back()) return 0.0;
      const double step = g.x[1] - g.x[0];
      const size_t i = std::min(static_cast<size_t>((x - g.x.front()) / step),
                                g.x.size() - 2);
      const double f = (x - g.x[i]) / step;
      return g.density[i] + f * (g.density[i + 1] - g.density[i]);
    };
    for (int i = 0; i < 512; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / 511.0;
      body += detail::fmt_double(x) + "\t" + detail::fmt_double(interp(data_grid, x)) + "\t" +
              detail::fmt_double(interp(pred, x)) + "\n";
    }
    detail::write_text_file(stem + tag + ".predictive.tsv", body);
  }
}

}  // namespace zmix
