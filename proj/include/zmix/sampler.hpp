// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zmix/dataset.hpp"
#include "zmix/errors.hpp"
#include "zmix/model.hpp"
#include "zmix/rng.hpp"

namespace zmix {

/// Descending Dirichlet hyperparameters, one per chain. The last (smallest)
/// entry drives the target chain.
struct TemperingLadder {
  std::vector<double> alphas;

  int chains() const { return static_cast<int>(alphas.size()); }
  double target_alpha() const { return alphas.back(); }

  void validate() const {
    if (alphas.empty()) throw ConfigError("ladder must contain at least one alpha");
    for (double a : alphas)
      if (!(a > 0.0)) throw ConfigError("ladder alphas must be > 0");
    for (size_t i = 1; i < alphas.size(); ++i)
      if (!(alphas[i] < alphas[i - 1]))
        throw ConfigError("ladder alphas must be strictly decreasing");
  }

  static TemperingLadder explicit_ladder(std::vector<double> alphas) {
    TemperingLadder l{std::move(alphas)};
    l.validate();
    return l;
  }

  // Wide ladder for the first exploratory pass: integer steps down to the
  // d/2 = 1 boundary, then powers of one half down to 0.5^50 (0.5^7 is not
  // part of the sequence).
  static TemperingLadder exploratory() {
    std::vector<double> a = {30.0, 20.0, 10.0, 5.0, 3.0, 1.0};
    for (int e : {1, 2, 3, 4, 5, 6, 8, 9, 10, 15, 20, 30, 35, 40, 45, 50})
      a.push_back(std::ldexp(1.0, -e));
    return TemperingLadder{std::move(a)};
  }

  // Shorter ladder adopted after exploration; same sequence truncated at
  // 0.5^30.
  static TemperingLadder refined() {
    std::vector<double> a = {30.0, 20.0, 10.0, 5.0, 3.0, 1.0};
    for (int e : {1, 2, 3, 4, 5, 6, 8, 9, 10, 15, 20, 30})
      a.push_back(std::ldexp(1.0, -e));
    return TemperingLadder{std::move(a)};
  }
};

struct RunConfig {
  int K = 10;
  long iterations = 50000;
  long burn_in = 30000;
  double swap_prob = 0.5;  // probability a tempering move is attempted per iteration
  std::uint64_t seed = 1;
  long warm_sweeps = 50;  // cascade warm start, see zmix_run
  bool store_all_chains = false;
  bool check_states = false;  // validate every chain state each iteration (always on in debug builds)
  TemperingLadder ladder = TemperingLadder::refined();

  long retained() const { return iterations - burn_in; }

  void validate() const {
    if (K < 1) throw ConfigError("RunConfig: K must be >= 1");
    if (iterations < 1) throw ConfigError("RunConfig: iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations)
      throw ConfigError("RunConfig: burn_in must be in [0, iterations)");
    if (!(swap_prob >= 0.0 && swap_prob <= 1.0))
      throw ConfigError("RunConfig: swap_prob must be in [0,1]");
    if (warm_sweeps < 0) throw ConfigError("RunConfig: warm_sweeps must be >= 0");
    ladder.validate();
  }
};

struct SwapStats {
  long attempts = 0;
  long accepts = 0;
};

/// Retained output of one run: full target-chain states, per-chain alive
/// counts, swap diagnostics, and an echo of everything needed to rerun.
struct PosteriorTrace {
  RunConfig config;
  Hyperparams hyper;  // alpha set to the target chain's value
  std::string dataset_name;
  std::uint64_t data_checksum = 0;
  int n = 0;

  std::vector<ChainState> target_samples;
  std::vector<std::vector<int>> alive_counts;  // [chain][retained iteration]
  std::vector<SwapStats> swap_stats;           // adjacent pairs, size J-1
  std::vector<std::vector<ChainState>> all_chain_samples;  // only if store_all_chains
};

// Log acceptance ratio for exchanging weight vectors wa (chain with alpha_a)
// and wb (chain with alpha_b): the four prior densities on the weights; the
// likelihood and parameter priors cancel because only alpha differs.
inline double swap_log_accept(std::span<const double> wa, std::span<const double> wb,
                              double alpha_a, double alpha_b) {
  const int K = static_cast<int>(wa.size());
  return dirichlet_log_density(wb, alpha_a, K) + dirichlet_log_density(wa, alpha_b, K) -
         dirichlet_log_density(wa, alpha_a, K) - dirichlet_log_density(wb, alpha_b, K);
}

// Weights below this log threshold (1e-12) count as boundary zeros in the
// exchange ratio: their (alpha - 1) log pi terms are dropped. Emptied
// components in a chain with hyperparameter alpha carry log weights near
// -1/alpha of whichever chain drew them, so keeping those terms freezes the
// small-alpha rungs entirely (no state ever travels to the target), while
// pinning them to any fixed floor biases every exchange toward the state
// with more dead components, which then collect in the target chain.
// Dropping the underflowed terms makes the dead-component bookkeeping cancel
// between the two states: exchanges are decided by the representable part of
// the simplex, and chains with alpha >= 1 (where nothing underflows) see the
// exact four-density ratio.
inline constexpr double kSwapLogWeightFloor = -27.631021115928547;  // ln(1e-12)

namespace detail {

inline double swap_density_logw(std::span<const double> lw, double alpha, int K) {
  double sum_log = 0.0;
  for (double x : lw)
    if (x > kSwapLogWeightFloor) sum_log += x;
  return std::lgamma(K * alpha) - K * std::lgamma(alpha) + (alpha - 1.0) * sum_log;
}

}  // namespace detail

// The four prior densities of the exchange, evaluated at the sampled log
// weights with underflowed components treated as above.
inline double swap_log_accept_logw(std::span<const double> lwa, std::span<const double> lwb,
                                   double alpha_a, double alpha_b) {
  const int K = static_cast<int>(lwa.size());
  return detail::swap_density_logw(lwb, alpha_a, K) + detail::swap_density_logw(lwa, alpha_b, K) -
         detail::swap_density_logw(lwa, alpha_a, K) - detail::swap_density_logw(lwb, alpha_b, K);
}

/// One tempering attempt: pick an adjacent pair uniformly, accept with the
/// Metropolis ratio, and on acceptance exchange weights, component
/// parameters and allocations. Returns the pair index and the decision.
/// log_weights[j] is chain j's current unfloored log-weight vector and is
/// exchanged together with the state.
inline std::pair<int, bool> propose_swap(std::vector<ChainState>& states,
                                         std::vector<std::vector<double>>& log_weights,
                                         std::span<const double> alphas,
                                         std::mt19937_64& rng,
                                         std::vector<SwapStats>* stats = nullptr) {
  const int J = static_cast<int>(states.size());
  if (J < 2) throw ConfigError("propose_swap: need at least two chains");
  const int j = static_cast<int>(uniform01(rng) * (J - 1));
  const int jp = j + 1;
  const double log_a =
      swap_log_accept_logw(log_weights[j], log_weights[jp], alphas[j], alphas[jp]);
  const bool accept = std::log(uniform_pos(rng)) < log_a;
  if (stats) ++(*stats)[j].attempts;
  if (accept) {
    std::swap(states[j], states[jp]);
    std::swap(log_weights[j], log_weights[jp]);
    if (stats) ++(*stats)[j].accepts;
  }
  return {j, accept};
}

namespace detail {

inline void gibbs_init(const Dataset& data, const Hyperparams& hyper, ChainState& state,
                       std::vector<double>& log_weights, std::mt19937_64& rng) {
  const int K = hyper.K;
  const int n = data.size();
  state.allocations.resize(n);
  for (int i = 0; i < n; ++i)
    state.allocations[i] = 1 + static_cast<int>(uniform01(rng) * K);
  const ComponentStats stats = ComponentStats::from(data, state.allocations, K);
  log_weights = sample_weights_log(stats, hyper.alpha, rng);
  state.weights = weights_from_log(log_weights);
  auto [means, vars] = sample_component_params(data, state.allocations, hyper, rng);
  state.means = std::move(means);
  state.variances = std::move(vars);
}

inline void gibbs_sweep(const Dataset& data, const Hyperparams& hyper, ChainState& state,
                        std::vector<double>& log_weights, std::mt19937_64& rng) {
  sample_allocations(data, state, rng);
  const ComponentStats stats = ComponentStats::from(data, state.allocations, hyper.K);
  log_weights = sample_weights_log(stats, hyper.alpha, rng);
  state.weights = weights_from_log(log_weights);
  auto [means, vars] = sample_component_params(data, state.allocations, hyper, rng);
  state.means = std::move(means);
  state.variances = std::move(vars);
}

}  // namespace detail

/// Run the full prior-tempered Gibbs sampler. Chains update independently
/// within an iteration (parallelized when OpenMP is enabled); the swap step
/// and trace writes are serial, so output is bit-identical across thread
/// counts for a fixed seed.
///
/// Starting values cascade down the ladder: chain 1 initializes from uniform
/// allocations, every later chain from a copy of its predecessor's state,
/// each followed by warm_sweeps local sweeps. States reaching the small-alpha
/// chains have then been sparsified through the whole alpha sequence; letting
/// every chain burn down alone from a uniform start instead strands
/// miscollapsed states in the low chains, where emptied components cannot
/// come back to life.
inline PosteriorTrace zmix_run(const Dataset& data, const RunConfig& config,
                               const Hyperparams& hyper_base) {
  config.validate();
  hyper_base.validate();
  data.validate();
  if (hyper_base.K != config.K)
    throw ConfigError("zmix_run: config.K and hyper.K disagree");

  const int J = config.ladder.chains();
  const int n = data.size();

  std::vector<Hyperparams> hyper(J, hyper_base);
  for (int j = 0; j < J; ++j) hyper[j].alpha = config.ladder.alphas[j];

  std::vector<std::mt19937_64> rng;
  rng.reserve(J);
  for (int j = 0; j < J; ++j)
    rng.push_back(derive_stream(config.seed, StreamPurpose::chain, static_cast<std::uint64_t>(j)));
  std::mt19937_64 swap_rng = derive_stream(config.seed, StreamPurpose::swap);

  std::vector<ChainState> states(J);
  std::vector<std::vector<double>> log_weights(J);
  for (int j = 0; j < J; ++j) {
    if (j == 0) {
      detail::gibbs_init(data, hyper[0], states[0], log_weights[0], rng[0]);
    } else {
      states[j] = states[j - 1];
      log_weights[j] = log_weights[j - 1];
    }
    try {
      for (long s = 0; s < config.warm_sweeps; ++s)
        detail::gibbs_sweep(data, hyper[j], states[j], log_weights[j], rng[j]);
    } catch (const std::exception& e) {
      throw NumericalError("warm-up, chain " + std::to_string(j + 1) + ": " + e.what());
    }
  }

  PosteriorTrace trace;
  trace.config = config;
  trace.hyper = hyper_base;
  trace.hyper.alpha = config.ladder.target_alpha();
  trace.dataset_name = data.name;
  trace.data_checksum = data.checksum();
  trace.n = n;
  trace.target_samples.reserve(config.retained());
  trace.alive_counts.assign(J, {});
  for (auto& ac : trace.alive_counts) ac.reserve(config.retained());
  trace.swap_stats.assign(J > 1 ? J - 1 : 0, SwapStats{});

  std::vector<std::exception_ptr> errors(J);
  for (long t = 1; t <= config.iterations; ++t) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < J; ++j) {
      try {
        detail::gibbs_sweep(data, hyper[j], states[j], log_weights[j], rng[j]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
    for (int j = 0; j < J; ++j) {
      if (!errors[j]) continue;
      try {
        std::rethrow_exception(errors[j]);
      } catch (const std::exception& e) {
        throw NumericalError("iteration " + std::to_string(t) + ", chain " + std::to_string(j + 1) +
                             ": " + e.what());
      }
    }

    if (J > 1 && uniform01(swap_rng) < config.swap_prob)
      propose_swap(states, log_weights, config.ladder.alphas, swap_rng, &trace.swap_stats);

#ifndef NDEBUG
    for (int j = 0; j < J; ++j) states[j].validate(n);
#else
    if (config.check_states)
      for (int j = 0; j < J; ++j) states[j].validate(n);
#endif

    if (t > config.burn_in) {
      trace.target_samples.push_back(states[J - 1]);
      for (int j = 0; j < J; ++j)
        trace.alive_counts[j].push_back(count_alive(states[j].allocations, config.K));
      if (config.store_all_chains) trace.all_chain_samples.push_back(states);
    }
  }
  return trace;
}

/// Empirical distribution of the alive-component count for one chain.
inline std::map<int, double> alive_count_distribution(const PosteriorTrace& trace, int chain) {
  if (chain < 0 || chain >= static_cast<int>(trace.alive_counts.size()))
    throw ConfigError("alive_count_distribution: chain index out of range");
  const auto& series = trace.alive_counts[chain];
  if (series.empty()) throw DataError("alive_count_distribution: empty trace");
  std::map<int, double> freq;
  for (int k : series) freq[k] += 1.0;
  for (auto& [k, v] : freq) v /= static_cast<double>(series.size());
  return freq;
}

// Mode of an alive-count distribution; ties break toward the smaller count,
// consistent with preferring the sparsest configuration.
inline int modal_alive_count(const std::map<int, double>& dist) {
  int best = 0;
  double best_p = -1.0;
  for (const auto& [k, p] : dist)
    if (p > best_p) {
      best = k;
      best_p = p;
    }
  return best;
}

}  // namespace zmix
