// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zmix/dataset.hpp"
#include "zmix/errors.hpp"
#include "zmix/rng.hpp"

namespace zmix {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
// Sampled weights are floored here and renormalized so no stored weight is
// ever exactly zero; the Dirichlet prior density stays finite on them.
inline constexpr double kWeightFloor = 1e-300;

/// Fixed hyperparameters of one fitted mixture (per chain, alpha varies).
struct Hyperparams {
  int K = 10;          // fitted components
  double alpha = 1.0;  // Dirichlet concentration on the weights
  double a = 2.5;      // inverse-gamma shape on variances
  double b = 1.0;      // inverse-gamma scale on variances
  double l = 0.0;      // prior mean location
  double tau = 1.0;    // prior precision scale on means
  int d = 2;           // free parameters per component (mean, variance)

  void validate() const {
    if (K < 1) throw ConfigError("Hyperparams: K must be >= 1");
    if (!(alpha > 0.0) || !(a > 0.0) || !(b > 0.0) || !(tau > 0.0))
      throw ConfigError("Hyperparams: alpha, a, b, tau must be > 0");
    if (d != 2) throw ConfigError("Hyperparams: d is fixed at 2 for univariate Gaussians");
  }
};

// Data-driven defaults: prior mean centred on the sample, scale from the
// sample variance (divisor n), a = 2.5, tau = 1 unless overridden.
inline Hyperparams default_hyperparams(const Dataset& data, int K, double alpha = 1.0) {
  Hyperparams h;
  h.K = K;
  h.alpha = alpha;
  h.l = data.mean();
  h.b = data.variance();
  h.validate();
  return h;
}

/// Full state of one Gibbs chain at one iteration.
struct ChainState {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<int> allocations;  // 1-based component labels, one per observation

  int k() const { return static_cast<int>(weights.size()); }

  void validate(int n) const {
    const int K = k();
    if (static_cast<int>(means.size()) != K || static_cast<int>(variances.size()) != K)
      throw NumericalError("ChainState: parameter vectors disagree on K");
    if (static_cast<int>(allocations.size()) != n)
      throw NumericalError("ChainState: allocation vector length != n");
    double s = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw NumericalError("ChainState: weight not strictly positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw NumericalError("ChainState: weights do not sum to 1");
    for (double v : variances)
      if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("ChainState: variance not positive finite");
    for (double m : means)
      if (!std::isfinite(m)) throw NumericalError("ChainState: non-finite mean");
    for (int z : allocations)
      if (z < 1 || z > K) throw NumericalError("ChainState: allocation label out of range");
  }
};

/// Per-component counts and sufficient statistics of one allocation vector.
struct ComponentStats {
  std::vector<int> counts;
  std::vector<double> sums;
  std::vector<double> sumsq;

  static ComponentStats from(const Dataset& data, std::span<const int> allocations, int K) {
    ComponentStats s;
    s.counts.assign(K, 0);
    s.sums.assign(K, 0.0);
    s.sumsq.assign(K, 0.0);
    for (size_t i = 0; i < allocations.size(); ++i) {
      const int k = allocations[i] - 1;
      const double y = data.values[i];
      ++s.counts[k];
      s.sums[k] += y;
      s.sumsq[k] += y * y;
    }
    return s;
  }
};

inline int count_alive(const ComponentStats& stats) {
  int alive = 0;
  for (int c : stats.counts) alive += (c >= 1);
  return alive;
}

inline int count_alive(std::span<const int> allocations, int K) {
  std::vector<char> seen(K, 0);
  for (int z : allocations) seen[z - 1] = 1;
  int alive = 0;
  for (char c : seen) alive += c;
  return alive;
}

inline double log_normal_pdf(double y, double mu, double var) {
  const double d = y - mu;
  return -0.5 * (kLog2Pi + std::log(var)) - d * d / (2.0 * var);
}

inline double log_inv_gamma_pdf(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

/// Log likelihood of the data under one mixture state, log-sum-exp per
/// observation. Components with weight exactly zero contribute nothing.
inline double mixture_log_likelihood(const Dataset& data, const ChainState& state) {
  const int K = state.k();
  for (double w : state.weights)
    if (!std::isfinite(w) || w < 0.0) throw NumericalError("mixture_log_likelihood: bad weight");
  for (int k = 0; k < K; ++k)
    if (!std::isfinite(state.means[k]) || !(state.variances[k] > 0.0))
      throw NumericalError("mixture_log_likelihood: non-finite component parameter");

  std::vector<double> logw(K), c(K), inv2v(K);
  for (int k = 0; k < K; ++k) {
    logw[k] = std::log(state.weights[k]);  // -inf for weight 0 is fine
    c[k] = logw[k] - 0.5 * (kLog2Pi + std::log(state.variances[k]));
    inv2v[k] = 1.0 / (2.0 * state.variances[k]);
  }
  double total = 0.0;
  std::vector<double> g(K);
  for (double y : data.values) {
    if (!std::isfinite(y)) throw NumericalError("mixture_log_likelihood: non-finite observation");
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const double d = y - state.means[k];
      g[k] = c[k] - d * d * inv2v[k];
      m = std::max(m, g[k]);
    }
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(g[k] - m);
    total += m + std::log(s);
  }
  return total;
}

// Normalized allocation probabilities for observation i, computed in log
// space and exponentiated after a max shift. Exposed for tests and for the
// posterior allocation diagnostics.
inline std::vector<double> allocation_probabilities_for(const Dataset& data,
                                                        const ChainState& state, int i) {
  const int K = state.k();
  std::vector<double> g(K);
  double m = -std::numeric_limits<double>::infinity();
  const double y = data.values[i];
  for (int k = 0; k < K; ++k) {
    g[k] = std::log(state.weights[k]) + log_normal_pdf(y, state.means[k], state.variances[k]);
    m = std::max(m, g[k]);
  }
  if (!std::isfinite(m))
    throw NumericalError("allocation probabilities underflowed for observation " + std::to_string(i));
  double s = 0.0;
  for (int k = 0; k < K; ++k) {
    g[k] = std::exp(g[k] - m);
    s += g[k];
  }
  for (int k = 0; k < K; ++k) g[k] /= s;
  return g;
}

/// One sweep of the allocation conditional: every z_i drawn independently
/// with probability proportional to weight times emission density.
inline void sample_allocations(const Dataset& data, ChainState& state, std::mt19937_64& rng) {
  const int K = state.k();
  const int n = data.size();
  std::vector<double> c(K), inv2v(K), g(K);
  for (int k = 0; k < K; ++k) {
    c[k] = std::log(state.weights[k]) - 0.5 * (kLog2Pi + std::log(state.variances[k]));
    inv2v[k] = 1.0 / (2.0 * state.variances[k]);
  }
  for (int i = 0; i < n; ++i) {
    const double y = data.values[i];
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const double d = y - state.means[k];
      g[k] = c[k] - d * d * inv2v[k];
      m = std::max(m, g[k]);
    }
    if (!std::isfinite(m))
      throw NumericalError("all allocation probabilities underflowed for observation " +
                           std::to_string(i));
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      g[k] = std::exp(g[k] - m);
      s += g[k];
    }
    const double u = uniform01(rng) * s;
    double acc = 0.0;
    int pick = -1;
    for (int k = 0; k < K; ++k) {
      acc += g[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    if (pick < 0) {  // roundoff at the top end: take the last positive-mass component
      for (int k = K - 1; k >= 0; --k)
        if (g[k] > 0.0) {
          pick = k;
          break;
        }
    }
    state.allocations[i] = pick + 1;
  }
}

// Dirichlet(alpha + n_1, ..., alpha + n_K) draw as normalized log-gammas.
// Finite log weights for any alpha > 0; nothing here can hit -inf.
inline std::vector<double> sample_weights_log(const ComponentStats& stats, double alpha,
                                              std::mt19937_64& rng) {
  const int K = static_cast<int>(stats.counts.size());
  std::vector<double> lg(K);
  double m = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    lg[k] = log_gamma_draw(alpha + static_cast<double>(stats.counts[k]), rng);
    m = std::max(m, lg[k]);
  }
  double s = 0.0;
  for (int k = 0; k < K; ++k) s += std::exp(lg[k] - m);
  const double lse = m + std::log(s);
  for (int k = 0; k < K; ++k) lg[k] -= lse;
  return lg;
}

/// Linear-space view of a log-weight draw: exponentiated, floored at
/// kWeightFloor and renormalized so downstream densities never see an exact
/// zero.
inline std::vector<double> weights_from_log(std::span<const double> log_weights) {
  std::vector<double> w(log_weights.begin(), log_weights.end());
  double s = 0.0;
  for (double& x : w) {
    x = std::max(std::exp(x), kWeightFloor);
    s += x;
  }
  for (double& x : w) x /= s;
  return w;
}

inline std::vector<double> sample_weights(const ComponentStats& stats, double alpha,
                                          std::mt19937_64& rng) {
  return weights_from_log(sample_weights_log(stats, alpha, rng));
}

/// Posterior parameters of the conjugate normal-inverse-gamma update for one
/// component with n_k members, member mean ybar and sum of squared
/// deviations ssd.
struct NigPosterior {
  double a_n, b_n, l_n, tau_n;
};

inline NigPosterior nig_posterior(const Hyperparams& h, int n_k, double ybar, double ssd) {
  NigPosterior p;
  const double nk = static_cast<double>(n_k);
  p.tau_n = h.tau + nk;
  p.l_n = (h.tau * h.l + nk * ybar) / p.tau_n;
  p.a_n = h.a + nk / 2.0;
  p.b_n = h.b + ssd / 2.0 + h.tau * nk * (ybar - h.l) * (ybar - h.l) / (2.0 * p.tau_n);
  return p;
}

/// Component parameter conditional: variance from its inverse-gamma
/// posterior, then mean given variance. Empty components draw from the prior.
inline std::pair<std::vector<double>, std::vector<double>> sample_component_params(
    const Dataset& data, std::span<const int> allocations, const Hyperparams& hyper,
    std::mt19937_64& rng) {
  const int K = hyper.K;
  const ComponentStats stats = ComponentStats::from(data, allocations, K);
  std::vector<double> means(K), vars(K);
  for (int k = 0; k < K; ++k) {
    const int nk = stats.counts[k];
    NigPosterior p;
    if (nk == 0) {
      p = NigPosterior{hyper.a, hyper.b, hyper.l, hyper.tau};
    } else {
      const double ybar = stats.sums[k] / static_cast<double>(nk);
      const double ssd = stats.sumsq[k] - static_cast<double>(nk) * ybar * ybar;
      p = nig_posterior(hyper, nk, ybar, std::max(ssd, 0.0));
    }
    const double var = inv_gamma_draw(p.a_n, p.b_n, rng);
    vars[k] = var;
    means[k] = p.l_n + std::sqrt(var / p.tau_n) * normal_draw(rng);
  }
  return {std::move(means), std::move(vars)};
}

/// Log density of the symmetric Dirichlet(alpha,...,alpha) at a point of the
/// K-simplex.
inline double dirichlet_log_density(std::span<const double> weights, double alpha, int K) {
  if (static_cast<int>(weights.size()) != K)
    throw std::invalid_argument("dirichlet_log_density: weight vector length != K");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_log_density: alpha must be > 0");
  double sum_log = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("dirichlet_log_density: weight <= 0");
    sum_log += std::log(w);
  }
  return std::lgamma(K * alpha) - K * std::lgamma(alpha) + (alpha - 1.0) * sum_log;
}

/// Same density evaluated from finite log weights, for points of the simplex
/// whose coordinates underflow in linear space.
inline double dirichlet_log_density_logw(std::span<const double> log_weights, double alpha,
                                         int K) {
  if (static_cast<int>(log_weights.size()) != K)
    throw std::invalid_argument("dirichlet_log_density_logw: vector length != K");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_log_density_logw: alpha must be > 0");
  double sum_log = 0.0;
  for (double lw : log_weights) {
    if (!std::isfinite(lw))
      throw std::invalid_argument("dirichlet_log_density_logw: non-finite log weight");
    sum_log += lw;
  }
  return std::lgamma(K * alpha) - K * std::lgamma(alpha) + (alpha - 1.0) * sum_log;
}

// Unnormalized log posterior over the alive components only: likelihood,
// the normal-inverse-gamma prior of each alive component, and a symmetric
// Dirichlet over the renormalized alive sub-simplex. Used to rank iterations
// for the relabeling reference, where only relative order matters.
inline double log_unnormalized_posterior(const Dataset& data, const ChainState& state,
                                         const Hyperparams& hyper) {
  const int K = state.k();
  const ComponentStats stats = ComponentStats::from(data, state.allocations, K);
  double lp = mixture_log_likelihood(data, state);
  std::vector<double> alive_w;
  double wsum = 0.0;
  for (int k = 0; k < K; ++k) {
    if (stats.counts[k] == 0) continue;
    const double var = state.variances[k];
    lp += log_inv_gamma_pdf(var, hyper.a, hyper.b);
    lp += log_normal_pdf(state.means[k], hyper.l, var / hyper.tau);
    alive_w.push_back(state.weights[k]);
    wsum += state.weights[k];
  }
  for (double& w : alive_w) w /= wsum;
  const int k0 = static_cast<int>(alive_w.size());
  lp += dirichlet_log_density(alive_w, hyper.alpha, k0);
  return lp;
}

}  // namespace zmix
