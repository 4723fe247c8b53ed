// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zmix/errors.hpp"
#include "zmix/kde.hpp"
#include "zmix/model.hpp"
#include "zmix/sampler.hpp"

namespace zmix {

inline constexpr double kDefaultZswitchM = 0.25;
inline constexpr long kDefaultFactorialCap = 720;  // 6!
// Two alive components whose weight, mean and variance all agree within this
// relative tolerance count as identical (merged); relabeling refuses them.
inline constexpr double kIdenticalTol = 1e-10;

/// MAP anchor for one k0 cell, relabeled so its alive components are 1..k0.
struct ReferenceLabeling {
  int k0 = 0;
  long source_iteration = -1;  // index into the retained trace
  std::vector<int> z0;
  std::vector<double> weights, means, variances;
};

struct ContingencyTable {
  int k0 = 0;
  std::vector<int> row_labels;       // alive labels of the current iteration, ascending
  std::vector<long> row_counts;      // n_r^(t)
  std::vector<std::vector<long>> m;  // k0 x k0 joint counts vs reference labels 1..k0
};

struct CandidateSets {
  double m = kDefaultZswitchM;
  std::vector<std::vector<int>> sets;  // I^r, ascending reference labels
};

/// Relabeled sub-trace for one k0, with the applied permutation per
/// iteration kept for audit.
struct RelabeledCell {
  int k0 = 0;
  double m = kDefaultZswitchM;
  long reference_iteration = -1;
  std::vector<long> iterations;                // retained-trace indices
  std::vector<ChainState> states;              // relabeled states
  std::vector<std::vector<int>> permutations;  // perm[old-1] = new, over labels 1..K
  long phase_two_invocations = 0;
};

namespace detail {

inline std::vector<int> alive_labels(std::span<const int> allocations, int K) {
  std::vector<char> seen(K, 0);
  for (int z : allocations) seen[z - 1] = 1;
  std::vector<int> labels;
  for (int k = 0; k < K; ++k)
    if (seen[k]) labels.push_back(k + 1);
  return labels;
}

// Full label permutation over 1..K sending alive label row_labels[r] to
// assignment[r]; empty labels fill k0+1..K in ascending original order.
inline std::vector<int> full_permutation(const std::vector<int>& row_labels,
                                         const std::vector<int>& assignment, int K) {
  const int k0 = static_cast<int>(row_labels.size());
  std::vector<int> perm(K, 0);
  for (int r = 0; r < k0; ++r) perm[row_labels[r] - 1] = assignment[r];
  int next = k0 + 1;
  for (int k = 0; k < K; ++k)
    if (perm[k] == 0) perm[k] = next++;
  return perm;
}

inline ChainState apply_permutation(const ChainState& s, const std::vector<int>& perm) {
  const int K = s.k();
  ChainState out;
  out.weights.resize(K);
  out.means.resize(K);
  out.variances.resize(K);
  out.allocations.resize(s.allocations.size());
  for (int k = 0; k < K; ++k) {
    const int nk = perm[k] - 1;
    out.weights[nk] = s.weights[k];
    out.means[nk] = s.means[k];
    out.variances[nk] = s.variances[k];
  }
  for (size_t i = 0; i < s.allocations.size(); ++i)
    out.allocations[i] = perm[s.allocations[i] - 1];
  return out;
}

inline bool relatively_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace detail

/// Split retained iterations by their alive-component count.
inline std::map<int, std::vector<long>> partition_by_k0(const PosteriorTrace& trace) {
  if (trace.target_samples.empty()) throw DataError("partition_by_k0: empty trace");
  std::map<int, std::vector<long>> cells;
  for (size_t t = 0; t < trace.target_samples.size(); ++t) {
    const int k0 = count_alive(trace.target_samples[t].allocations, trace.config.K);
    cells[k0].push_back(static_cast<long>(t));
  }
  return cells;
}

/// MAP iteration of one cell, ties toward the earliest, relabeled so the
/// alive components occupy 1..k0 in ascending original label order.
inline ReferenceLabeling select_reference(const PosteriorTrace& trace,
                                          const std::vector<long>& cell, const Dataset& data,
                                          const Hyperparams& hyper) {
  if (cell.empty()) throw DataError("select_reference: empty cell");
  long best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (long t : cell) {
    const double score = log_unnormalized_posterior(data, trace.target_samples[t], hyper);
    if (score > best_score) {
      best_score = score;
      best = t;
    }
  }
  const ChainState& raw = trace.target_samples[best];
  const auto alive = detail::alive_labels(raw.allocations, raw.k());
  std::vector<int> identity(alive.size());
  for (size_t r = 0; r < alive.size(); ++r) identity[r] = static_cast<int>(r) + 1;
  const auto perm = detail::full_permutation(alive, identity, raw.k());
  const ChainState canon = detail::apply_permutation(raw, perm);

  ReferenceLabeling ref;
  ref.k0 = static_cast<int>(alive.size());
  ref.source_iteration = best;
  ref.z0 = canon.allocations;
  ref.weights = canon.weights;
  ref.means = canon.means;
  ref.variances = canon.variances;
  return ref;
}

/// Joint count table of current vs reference allocations over the k0 alive
/// groups of each.
inline ContingencyTable build_contingency(std::span<const int> zt, std::span<const int> z0,
                                          int k0) {
  if (zt.size() != z0.size())
    throw std::logic_error("build_contingency: allocation vectors differ in length");
  int maxlab = 0;
  for (int z : zt) maxlab = std::max(maxlab, z);
  const auto rows = detail::alive_labels(zt, maxlab);
  if (static_cast<int>(rows.size()) != k0)
    throw std::logic_error("build_contingency: iteration has " + std::to_string(rows.size()) +
                           " alive labels, expected " + std::to_string(k0));
  std::vector<int> row_of(maxlab + 1, -1);
  for (size_t r = 0; r < rows.size(); ++r) row_of[rows[r]] = static_cast<int>(r);

  ContingencyTable tab;
  tab.k0 = k0;
  tab.row_labels = rows;
  tab.row_counts.assign(k0, 0);
  tab.m.assign(k0, std::vector<long>(k0, 0));
  for (size_t i = 0; i < zt.size(); ++i) {
    const int r = row_of[zt[i]];
    const int c = z0[i];
    if (c < 1 || c > k0)
      throw std::logic_error("build_contingency: reference label out of 1..k0");
    ++tab.m[r][c - 1];
    ++tab.row_counts[r];
  }
  return tab;
}

/// Reference groups sharing more than proportion m of each row's members.
inline CandidateSets candidate_sets(const ContingencyTable& tab, double m) {
  if (!(m > 0.0 && m < 1.0)) throw ConfigError("candidate threshold m must be in (0,1)");
  CandidateSets cs;
  cs.m = m;
  cs.sets.resize(tab.k0);
  for (int r = 0; r < tab.k0; ++r)
    for (int c = 0; c < tab.k0; ++c)
      if (static_cast<double>(tab.m[r][c]) / static_cast<double>(tab.row_counts[r]) > m)
        cs.sets[r].push_back(c + 1);
  return cs;
}

namespace detail {

struct PhaseTwoProblem {
  // current iteration, indexed by row r
  std::vector<double> cur_w, cur_mu, cur_sigma;
  // reference, indexed by reference label - 1
  std::vector<double> ref_w, ref_mu, ref_sigma;
};

inline double guarded_term(double ref, double cur) {
  const double diff = std::abs(ref - cur);
  return std::abs(ref) < 1e-8 ? diff : diff / std::abs(ref);
}

inline double assignment_loss(const PhaseTwoProblem& p, const std::vector<int>& v) {
  double loss = 0.0;
  for (size_t r = 0; r < v.size(); ++r) {
    const int c = v[r] - 1;
    loss += guarded_term(p.ref_w[c], p.cur_w[r]);
    loss += guarded_term(p.ref_mu[c], p.cur_mu[r]);
    loss += guarded_term(p.ref_sigma[c], p.cur_sigma[r]);
  }
  return loss;
}

// Depth-first search in lexicographic order over the candidate Cartesian
// product, restricted to injective assignments. The first minimum found wins
// ties, which is exactly the lexicographic tie-break.
inline bool phase_two_search(const PhaseTwoProblem& p, const std::vector<std::vector<int>>& sets,
                             std::vector<int>& best, double& best_loss) {
  const int k0 = static_cast<int>(sets.size());
  std::vector<int> v(k0, 0);
  std::vector<char> used(k0 + 1, 0);
  bool found = false;
  best_loss = std::numeric_limits<double>::infinity();

  auto rec = [&](auto&& self, int r) -> void {
    if (r == k0) {
      const double loss = assignment_loss(p, v);
      if (loss < best_loss) {
        best_loss = loss;
        best = v;
        found = true;
      }
      return;
    }
    for (int c : sets[r]) {
      if (used[c]) continue;
      used[c] = 1;
      v[r] = c;
      self(self, r + 1);
      used[c] = 0;
    }
  };
  rec(rec, 0);
  return found;
}

}  // namespace detail

/// Loss-minimizing injective assignment of reference labels to the current
/// alive rows, searched within the candidate sets. Throws RelabelError when
/// the candidate workload exceeds the cap or no injective assignment exists.
inline std::vector<int> phase_two_minimize(const CandidateSets& candidates,
                                           const detail::PhaseTwoProblem& problem,
                                           long factorial_cap = kDefaultFactorialCap) {
  long workload = 1;
  for (const auto& s : candidates.sets) {
    if (s.empty())
      throw RelabelError("phase two: a component shares no reference group above m");
    workload *= static_cast<long>(s.size());
    if (workload > factorial_cap)
      throw RelabelError(
          "phase two: candidate workload " + std::to_string(workload) + " exceeds the cap of " +
          std::to_string(factorial_cap) + "; raise m to prune candidates");
  }
  std::vector<int> best;
  double best_loss;
  if (!detail::phase_two_search(problem, candidates.sets, best, best_loss))
    throw RelabelError("phase two: no injective assignment within the candidate sets");
  return best;
}

namespace detail {

inline PhaseTwoProblem make_problem(const ChainState& state, const std::vector<int>& row_labels,
                                    const ReferenceLabeling& ref) {
  PhaseTwoProblem p;
  const int k0 = static_cast<int>(row_labels.size());
  p.cur_w.resize(k0);
  p.cur_mu.resize(k0);
  p.cur_sigma.resize(k0);
  for (int r = 0; r < k0; ++r) {
    const int k = row_labels[r] - 1;
    p.cur_w[r] = state.weights[k];
    p.cur_mu[r] = state.means[k];
    p.cur_sigma[r] = std::sqrt(state.variances[k]);
  }
  p.ref_w.resize(k0);
  p.ref_mu.resize(k0);
  p.ref_sigma.resize(k0);
  for (int c = 0; c < k0; ++c) {
    p.ref_w[c] = ref.weights[c];
    p.ref_mu[c] = ref.means[c];
    p.ref_sigma[c] = std::sqrt(ref.variances[c]);
  }
  return p;
}

// Equation-14 thresholding, falling back to progressively halved m (this
// iteration only) and finally to a search over every permutation when the
// candidates admit no injective assignment.
inline std::vector<int> resolve_assignment(const ContingencyTable& tab, const ChainState& state,
                                           const ReferenceLabeling& ref, double m,
                                           long factorial_cap, long& phase_two_count) {
  const int k0 = tab.k0;
  const auto cands = candidate_sets(tab, m);
  long total = 0;
  bool all_singleton = true;
  for (const auto& s : cands.sets) {
    total += static_cast<long>(s.size());
    all_singleton = all_singleton && s.size() == 1;
  }
  if (total == k0 && all_singleton) {
    std::vector<char> used(k0 + 1, 0);
    bool injective = true;
    std::vector<int> v(k0);
    for (int r = 0; r < k0; ++r) {
      v[r] = cands.sets[r][0];
      if (used[v[r]]) injective = false;
      used[v[r]] = 1;
    }
    if (injective) return v;  // phase one
  }

  ++phase_two_count;
  const auto problem = make_problem(state, tab.row_labels, ref);
  double try_m = m;
  for (int attempt = 0; attempt < 24; ++attempt) {
    try {
      return phase_two_minimize(candidate_sets(tab, try_m), problem, factorial_cap);
    } catch (const RelabelError&) {
      try_m *= 0.5;
      if (try_m < 1e-7) break;
    }
  }
  // Last resort: all k0! permutations, still under the workload cap.
  long fact = 1;
  for (int i = 2; i <= k0; ++i) fact *= i;
  if (fact > factorial_cap)
    throw RelabelError("relabeling needs " + std::to_string(fact) +
                       " permutations, above the cap; raise m");
  CandidateSets full;
  full.m = 0.0;
  full.sets.assign(k0, {});
  for (int r = 0; r < k0; ++r)
    for (int c = 1; c <= k0; ++c) full.sets[r].push_back(c);
  std::vector<int> best;
  double best_loss;
  if (!phase_two_search(problem, full.sets, best, best_loss))
    throw RelabelError("relabeling failed: no permutation available");
  return best;
}

inline void refuse_identical_components(const ChainState& state,
                                        const std::vector<int>& alive, long iteration) {
  for (size_t i = 0; i < alive.size(); ++i) {
    for (size_t j = i + 1; j < alive.size(); ++j) {
      const int a = alive[i] - 1, b = alive[j] - 1;
      if (relatively_equal(state.weights[a], state.weights[b], kIdenticalTol) &&
          relatively_equal(state.means[a], state.means[b], kIdenticalTol) &&
          relatively_equal(state.variances[a], state.variances[b], kIdenticalTol))
        throw RelabelError("iteration " + std::to_string(iteration) + ": alive components " +
                           std::to_string(a + 1) + " and " + std::to_string(b + 1) +
                           " are numerically identical (merged); relabeling is undefined "
                           "on posteriors with identical components");
    }
  }
}

}  // namespace detail

/// Two-phase relabeling of the whole target trace: per k0 cell, contingency
/// matching against the MAP reference, with the loss-minimizing permutation
/// as fallback. Returns one relabeled sub-trace per k0.
inline std::map<int, RelabeledCell> zswitch(const PosteriorTrace& trace, const Dataset& data,
                                            const Hyperparams& hyper,
                                            double m = kDefaultZswitchM,
                                            long factorial_cap = kDefaultFactorialCap) {
  if (!(m > 0.0 && m < 1.0)) throw ConfigError("zswitch: m must be in (0,1)");
  const auto cells = partition_by_k0(trace);
  const int K = trace.config.K;
  std::map<int, RelabeledCell> out;
  for (const auto& [k0, iterations] : cells) {
    for (long t : iterations) {
      const auto& s = trace.target_samples[t];
      detail::refuse_identical_components(s, detail::alive_labels(s.allocations, K), t);
    }
    RelabeledCell cell;
    cell.k0 = k0;
    cell.m = m;
    const auto ref = select_reference(trace, iterations, data, hyper);
    cell.reference_iteration = ref.source_iteration;
    cell.iterations = iterations;
    cell.states.reserve(iterations.size());
    cell.permutations.reserve(iterations.size());
    for (long t : iterations) {
      const ChainState& s = trace.target_samples[t];
      const auto tab = build_contingency(s.allocations, ref.z0, k0);
      const auto assignment =
          detail::resolve_assignment(tab, s, ref, m, factorial_cap, cell.phase_two_invocations);
      const auto perm = detail::full_permutation(tab.row_labels, assignment, K);
      cell.states.push_back(detail::apply_permutation(s, perm));
      cell.permutations.push_back(perm);
    }
    out.emplace(k0, std::move(cell));
  }
  return out;
}

/// Mode counts of every relabeled parameter series, with the density grids
/// used to judge them.
struct SeriesModes {
  std::string name;
  int modes = 0;
  DensityGrid grid;
};

struct UnimodalityReport {
  std::vector<SeriesModes> series;

  bool all_unimodal() const {
    for (const auto& s : series)
      if (s.modes != 1) return false;
    return true;
  }
};

inline UnimodalityReport unimodality_report(const RelabeledCell& cell) {
  if (cell.states.size() < 100)
    throw DataError("unimodality_report: need at least 100 retained samples");
  UnimodalityReport rep;
  const size_t n = cell.states.size();
  std::vector<double> series(n);
  for (int k = 0; k < cell.k0; ++k) {
    const std::string suffix = std::to_string(k + 1);
    for (size_t t = 0; t < n; ++t) series[t] = cell.states[t].weights[k];
    rep.series.push_back({"weight_" + suffix, 0, kde_grid(series)});
    for (size_t t = 0; t < n; ++t) series[t] = cell.states[t].means[k];
    rep.series.push_back({"mean_" + suffix, 0, kde_grid(series)});
    for (size_t t = 0; t < n; ++t) series[t] = cell.states[t].variances[k];
    rep.series.push_back({"variance_" + suffix, 0, kde_grid(series)});
  }
  for (auto& s : rep.series) s.modes = count_modes(s.grid);
  return rep;
}

}  // namespace zmix
