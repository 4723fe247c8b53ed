// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zmix/dataset.hpp"
#include "zmix/diagnostics.hpp"
#include "zmix/errors.hpp"
#include "zmix/rng.hpp"
#include "zmix/sampler.hpp"

namespace zmix {

/// True generating mixture for one simulation scenario.
struct SimulationSpec {
  std::string name;
  std::vector<double> weights, means, variances;
  int n = 200;
  std::uint64_t seed = 1;

  void validate() const {
    const size_t k = weights.size();
    if (k == 0 || means.size() != k || variances.size() != k)
      throw ConfigError("SimulationSpec: parameter vectors disagree");
    double s = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw ConfigError("SimulationSpec: weights must be positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("SimulationSpec: weights must sum to 1");
    for (double v : variances)
      if (!(v > 0.0)) throw ConfigError("SimulationSpec: variances must be positive");
    if (n < 1) throw ConfigError("SimulationSpec: n must be >= 1");
  }

  TrueMixture truth() const { return {weights, means, variances}; }
};

/// The four benchmark scenarios: well separated, overlapping tails, equal
/// means with unequal variances (unimodal), and a rare 1% component.
inline std::vector<SimulationSpec> builtin_sims() {
  std::vector<SimulationSpec> sims(4);
  sims[0].name = "sim1";
  sims[0].weights = {0.5, 0.3, 0.2};
  sims[0].means = {15.0, 7.0, 1.0};
  sims[0].variances = {1.0, 1.0, 1.0};
  sims[1].name = "sim2";
  sims[1].weights = {0.5, 0.3, 0.2};
  sims[1].means = {-1.0, 10.0, 4.0};
  sims[1].variances = {0.5, 0.5, 3.0};
  sims[2].name = "sim3";
  sims[2].weights = {0.5, 0.5};
  sims[2].means = {1.0, 1.0};
  sims[2].variances = {10.0, 1.0};
  sims[3].name = "sim4";
  sims[3].weights = {0.6, 0.39, 0.01};
  sims[3].means = {6.0, 10.0, 20.0};
  sims[3].variances = {1.0, 1.0, 0.5};
  for (auto& s : sims) s.validate();
  return sims;
}

inline SimulationSpec builtin_sim(int id) {
  if (id < 1 || id > 4) throw ConfigError("unknown simulation id " + std::to_string(id) +
                                          " (valid: 1..4)");
  return builtin_sims()[id - 1];
}

/// Draw a labeled dataset from the spec: component from the weights, value
/// from that component's Gaussian.
inline Dataset generate_simulation(const SimulationSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const int K0 = static_cast<int>(spec.weights.size());
  std::vector<double> cum(K0);
  double acc = 0.0;
  for (int k = 0; k < K0; ++k) {
    acc += spec.weights[k];
    cum[k] = acc;
  }
  Dataset d;
  d.name = spec.name;
  d.values.resize(spec.n);
  d.true_labels.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    const double u = uniform01(rng) * acc;
    int k = K0 - 1;
    for (int j = 0; j < K0; ++j)
      if (u < cum[j]) {
        k = j;
        break;
      }
    d.true_labels[i] = k + 1;
    d.values[i] = spec.means[k] + std::sqrt(spec.variances[k]) * normal_draw(rng);
  }
  return d;
}

inline Dataset generate_simulation(const SimulationSpec& spec) {
  auto rng = derive_stream(spec.seed, StreamPurpose::simulation);
  return generate_simulation(spec, rng);
}

// ---- bundled case studies ----

struct CaseStudyInfo {
  const char* name;
  const char* file;
  int n;
  std::uint64_t checksum;
};

inline constexpr std::array<CaseStudyInfo, 3> kCaseStudies{{
    {"acidity", "acidity.dat", 155, 0x0F3C64D6498CD3C0ULL},
    {"enzyme", "enzyme.dat", 245, 0x5151FC4772AAE70CULL},
    {"galaxy", "galaxy.dat", 82, 0xA87EC20AFAFF67FBULL},
}};

/// Load one bundled dataset by name, verifying its pinned checksum.
inline Dataset load_case_study(const std::string& name, const std::string& data_dir) {
  for (const auto& info : kCaseStudies) {
    if (name != info.name) continue;
    const std::string path = data_dir + "/" + info.file;
    Dataset d = load_dataset(path, info.name);
    if (d.size() != info.n)
      throw DataError("case study '" + name + "': expected " + std::to_string(info.n) +
                      " observations, file has " + std::to_string(d.size()));
    const std::uint64_t got = d.checksum();
    if (got != info.checksum) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "0x%016llX, expected 0x%016llX",
                    static_cast<unsigned long long>(got),
                    static_cast<unsigned long long>(info.checksum));
      throw DataError("case study '" + name + "' failed checksum verification: " + buf);
    }
    return d;
  }
  throw ConfigError("unknown case study '" + name + "' (valid: acidity, enzyme, galaxy)");
}

inline std::vector<Dataset> builtin_case_studies(const std::string& data_dir) {
  std::vector<Dataset> out;
  for (const auto& info : kCaseStudies) out.push_back(load_case_study(info.name, data_dir));
  return out;
}

// ---- replicate study ----

struct ReplicateStudyConfig {
  int replicates = 20;
  RunConfig run;  // protocol defaults: 20k iterations, 5k burn-in, K = 10
  std::uint64_t seed = 1;

  ReplicateStudyConfig() {
    run.K = 10;
    run.iterations = 20000;
    run.burn_in = 5000;
    run.ladder = TemperingLadder::refined();
  }
};

/// Fractions of replicates whose modal target alive count lands on each
/// value. Failed replicates are recorded, not fatal.
struct ReplicateStudySummary {
  std::string sim_name;
  int n = 0;
  int completed = 0;
  std::vector<std::pair<int, std::string>> failures;  // replicate index, reason
  std::map<int, double> fraction;                     // over completed replicates
  std::map<int, int> counts;
};

inline ReplicateStudySummary replicate_study(const SimulationSpec& spec,
                                             const ReplicateStudyConfig& cfg) {
  if (cfg.replicates < 1) throw ConfigError("replicate_study: need at least one replicate");
  ReplicateStudySummary sum;
  sum.sim_name = spec.name;
  sum.n = spec.n;

  const int R = cfg.replicates;
  std::vector<int> modes(R, -1);
  std::vector<std::string> errors(R);

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < R; ++r) {
    try {
      auto data_rng =
          derive_stream(cfg.seed, StreamPurpose::replicate, static_cast<std::uint64_t>(r));
      SimulationSpec s = spec;
      const Dataset data = generate_simulation(s, data_rng);
      RunConfig run = cfg.run;
      run.seed = detail::mix64(cfg.seed ^ (0xABCD0000ULL + static_cast<std::uint64_t>(r)));
      const Hyperparams hyper = default_hyperparams(data, run.K);
      const PosteriorTrace trace = zmix_run(data, run, hyper);
      modes[r] = modal_alive_count(
          alive_count_distribution(trace, trace.config.ladder.chains() - 1));
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  }

  for (int r = 0; r < R; ++r) {
    if (modes[r] < 0) {
      sum.failures.emplace_back(r, errors[r]);
      continue;
    }
    ++sum.counts[modes[r]];
    ++sum.completed;
  }
  for (const auto& [k, c] : sum.counts)
    sum.fraction[k] = static_cast<double>(c) / static_cast<double>(sum.completed);
  return sum;
}

/// Table-shaped summary: one row per observed modal value.
inline std::string replicate_summary_text(const ReplicateStudySummary& sum) {
  std::string out = "sim\tn\tk0_hat\tfraction\tcount\n";
  for (const auto& [k, f] : sum.fraction) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", f);
    out += sum.sim_name + "\t" + std::to_string(sum.n) + "\t" + std::to_string(k) + "\t" + buf +
           "\t" + std::to_string(sum.counts.at(k)) + "\n";
  }
  if (!sum.failures.empty())
    out += "# incomplete: " + std::to_string(sum.failures.size()) + " replicate(s) failed\n";
  return out;
}

}  // namespace zmix
