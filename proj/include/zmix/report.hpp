// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zmix/diagnostics.hpp"
#include "zmix/trace_io.hpp"
#include "zmix/zswitch.hpp"

namespace zmix {

struct ReportOptions {
  double m = kDefaultZswitchM;
  long replicates = kDefaultReplicates;
  std::uint64_t seed = 1;
  long factorial_cap = kDefaultFactorialCap;
  std::optional<TrueMixture> truth;
};

/// Full post-processing result: one relabeled cell, replicate set and
/// configuration report per candidate k0.
struct RunReport {
  std::map<int, double> probs;
  std::map<int, RelabeledCell> cells;
  std::map<int, PredictiveReplicates> replicates;
  std::map<int, ConfigurationReport> configs;
};

inline RunReport analyze_trace(const PosteriorTrace& trace, const Dataset& data,
                               const ReportOptions& opts) {
  RunReport rep;
  rep.probs = configuration_probabilities(partition_by_k0(trace));
  rep.cells = zswitch(trace, data, trace.hyper, opts.m, opts.factorial_cap);
  for (auto& [k0, cell] : rep.cells) {
    auto reps = generate_replicates(cell, data, opts.replicates,
                                    opts.seed ^ static_cast<std::uint64_t>(k0));
    rep.configs.emplace(
        k0, build_configuration_report(cell, data, rep.probs.at(k0), reps, opts.truth));
    rep.replicates.emplace(k0, std::move(reps));
  }
  return rep;
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace detail

/// Human-readable goodness-of-fit table, one row per candidate configuration.
inline std::string report_table_text(const RunReport& rep, const std::string& dataset_name) {
  std::string out = "dataset: " + dataset_name + "\n";
  out += "k0\tp\t%\tP_min\tP_max\tConc.\tMAPE\tMSPE\n";
  for (const auto& [k0, cfg] : rep.configs) {
    out += std::to_string(k0);
    out += "\t" + detail::fmt("%.2f", cfg.prob);
    out += "\t" + (cfg.classification_pct ? detail::fmt("%.0f", *cfg.classification_pct)
                                          : std::string("-"));
    out += "\t" + detail::fmt("%.2f", cfg.pmin);
    out += "\t" + detail::fmt("%.2f", cfg.pmax);
    out += "\t" + detail::fmt("%.2f", cfg.concordance);
    out += "\t" + detail::fmt("%.2f", cfg.mape);
    out += "\t" + detail::fmt("%.2f", cfg.mspe);
    out += "\n";
  }
  return out;
}

/// Per-configuration parameter table: estimate and 95% interval for weight,
/// mean and variance of every component, largest weight first.
inline std::string params_table_text(const ConfigurationReport& cfg) {
  std::string out = "comp\tweight (95% CI)\tmean (95% CI)\tvariance (95% CI)\n";
  for (size_t r = 0; r < cfg.params.size(); ++r) {
    const auto& c = cfg.params[r];
    auto cell = [](const ParamSummary& p) {
      return detail::fmt("%.2f", p.estimate) + " (" + detail::fmt("%.2f", p.lo) + ", " +
             detail::fmt("%.2f", p.hi) + ")";
    };
    out += std::to_string(r + 1) + "\t" + cell(c.weight) + "\t" + cell(c.mean) + "\t" +
           cell(c.variance) + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const RunReport& rep, const Dataset& data) {
  nlohmann::json j;
  j["dataset"] = data.name;
  j["data_checksum"] = data.checksum();
  j["n"] = data.size();
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& [k0, cfg] : rep.configs) {
    nlohmann::json c;
    c["k0"] = k0;
    c["prob"] = cfg.prob;
    c["count"] = cfg.count;
    c["p_min"] = cfg.pmin;
    c["p_max"] = cfg.pmax;
    c["concordance"] = cfg.concordance;
    c["mape"] = cfg.mape;
    c["mspe"] = cfg.mspe;
    if (cfg.classification_pct)
      c["classification_pct"] = *cfg.classification_pct;
    else
      c["classification_pct"] = nullptr;
    if (cfg.mae) {
      c["mae"] = *cfg.mae;
      c["mse"] = *cfg.mse;
    } else {
      c["mae"] = nullptr;
      c["mse"] = nullptr;
    }
    c["display_order"] = cfg.display_order;
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& p : cfg.params) {
      comps.push_back({{"weight", {{"estimate", p.weight.estimate}, {"lo", p.weight.lo}, {"hi", p.weight.hi}}},
                       {"mean", {{"estimate", p.mean.estimate}, {"lo", p.mean.lo}, {"hi", p.mean.hi}}},
                       {"variance",
                        {{"estimate", p.variance.estimate}, {"lo", p.variance.lo}, {"hi", p.variance.hi}}}});
    }
    c["components"] = comps;
    configs.push_back(c);
  }
  j["configs"] = configs;
  return j;
}

/// Write every report artifact for one analyzed run under `stem`: the
/// goodness-of-fit table, the structured report, and per configuration the
/// relabeled sub-trace, parameter table and plot data files.
inline void write_report_files(const RunReport& rep, const Dataset& data, int K,
                               const std::string& stem) {
  detail::write_text_file(stem + ".report.txt", report_table_text(rep, data.name));
  {
    std::ofstream out(stem + ".report.json");
    if (!out) throw DataError("cannot write " + stem + ".report.json");
    out << report_json(rep, data).dump(2) << "\n";
  }
  for (const auto& [k0, cfg] : rep.configs) {
    save_relabeled_cell(rep.cells.at(k0), K, data.size(), stem);
    detail::write_text_file(stem + ".k" + std::to_string(k0) + ".params.txt",
                            params_table_text(cfg));
    emit_plot_data(cfg, rep.cells.at(k0), rep.replicates.at(k0), data, stem);
  }
}

}  // namespace zmix
