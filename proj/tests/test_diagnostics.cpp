// Apache License, Version 2.0, refer to LICENSE.txt

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "zmix/diagnostics.hpp"

using namespace zmix;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

RelabeledCell single_state_cell(std::vector<double> w, std::vector<double> mu,
                                std::vector<double> var, int copies = 1) {
  RelabeledCell cell;
  cell.k0 = static_cast<int>(w.size());
  for (int t = 0; t < copies; ++t) {
    ChainState s;
    s.weights = w;
    s.means = mu;
    s.variances = var;
    cell.states.push_back(std::move(s));
    cell.iterations.push_back(t);
  }
  return cell;
}

Dataset make_data(std::vector<double> v) {
  Dataset d;
  d.values = std::move(v);
  d.name = "test";
  return d;
}

}  // namespace

TEST_CASE("configuration probabilities are count shares", "[diagnostics]") {
  std::map<int, std::vector<long>> single{{3, {0, 1, 2, 3}}};
  auto p = configuration_probabilities(single);
  REQUIRE(p.size() == 1);
  REQUIRE(p.at(3) == 1.0);

  std::map<int, std::vector<long>> multi{{2, {0, 1, 2}}, {3, {3, 4}}, {4, {5}}};
  p = configuration_probabilities(multi);
  REQUIRE_THAT(p.at(2), Catch::Matchers::WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(p.at(3), Catch::Matchers::WithinAbs(2.0 / 6.0, 1e-15));
  double total = 0.0;
  for (auto& [k, v] : p) total += v;
  REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("posterior summaries: constant series collapse to a point", "[diagnostics]") {
  auto cell = single_state_cell({0.7, 0.3}, {1.0, -2.0}, {0.5, 2.0}, 50);
  const auto s = posterior_summaries(cell);
  REQUIRE(s.size() == 2);
  REQUIRE_THAT(s[0].weight.estimate, Catch::Matchers::WithinRel(0.7, 1e-15));
  REQUIRE(s[0].weight.lo == 0.7);  // quantiles are order statistics, exact
  REQUIRE(s[0].weight.hi == 0.7);
  REQUIRE(s[1].mean.estimate == -2.0);
  REQUIRE(s[1].variance.lo == 2.0);

  auto tiny = single_state_cell({1.0}, {0.0}, {1.0}, 1);
  REQUIRE_THROWS_AS(posterior_summaries(tiny), DataError);
}

TEST_CASE("posterior summaries: quantiles bracket the estimate", "[diagnostics]") {
  auto rng = derive_stream(1, StreamPurpose::simulation);
  RelabeledCell cell;
  cell.k0 = 1;
  for (int t = 0; t < 5000; ++t) {
    ChainState s;
    s.weights = {1.0};
    s.means = {2.0 + 0.5 * normal_draw(rng)};
    s.variances = {std::exp(0.3 * normal_draw(rng))};
    cell.states.push_back(std::move(s));
  }
  const auto s = posterior_summaries(cell)[0];
  REQUIRE(s.mean.lo <= s.mean.estimate);
  REQUIRE(s.mean.estimate <= s.mean.hi);
  REQUIRE_THAT(s.mean.estimate, Catch::Matchers::WithinAbs(2.0, 0.05));
  REQUIRE_THAT(s.mean.lo, Catch::Matchers::WithinAbs(2.0 - 1.96 * 0.5, 0.05));
  REQUIRE_THAT(s.mean.hi, Catch::Matchers::WithinAbs(2.0 + 1.96 * 0.5, 0.05));
}

TEST_CASE("allocation probabilities count iteration shares", "[diagnostics]") {
  RelabeledCell cell;
  cell.k0 = 2;
  for (int t = 0; t < 4; ++t) {
    ChainState s;
    s.weights = {0.5, 0.5};
    s.means = {0.0, 1.0};
    s.variances = {1.0, 1.0};
    // obs 0 always in 1; obs 1 alternates
    s.allocations = {1, t % 2 == 0 ? 1 : 2};
    cell.states.push_back(std::move(s));
  }
  const auto probs = allocation_probabilities(cell, 2);
  REQUIRE(probs[0][0] == 1.0);
  REQUIRE(probs[0][1] == 0.0);
  REQUIRE(probs[1][0] == 0.5);
  REQUIRE(probs[1][1] == 0.5);
  for (const auto& row : probs)
    REQUIRE_THAT(row[0] + row[1], Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("classification accuracy under the best bijection", "[diagnostics]") {
  // perfect recovery, up to a label swap
  std::vector<std::vector<double>> probs{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  std::vector<int> truth{2, 2, 1, 1};
  auto pct = classification_accuracy(probs, truth);
  REQUIRE(pct.has_value());
  REQUIRE(*pct == 100.0);

  // invariance to relabeling either side
  std::vector<int> truth_relabeled{7, 7, 3, 3};
  REQUIRE(*classification_accuracy(probs, truth_relabeled) == 100.0);

  // one of four misclassified
  std::vector<std::vector<double>> probs2{{1, 0}, {0, 1}, {0, 1}, {0, 1}};
  REQUIRE_THAT(*classification_accuracy(probs2, truth),
               Catch::Matchers::WithinAbs(75.0, 1e-12));

  // configuration size differs from the truth: not applicable
  std::vector<int> truth3{1, 2, 3, 1};
  REQUIRE_FALSE(classification_accuracy(probs, truth3).has_value());

  // argmax ties resolve toward the smaller label
  std::vector<std::vector<double>> tied{{0.5, 0.5}, {0.5, 0.5}};
  std::vector<int> t2{1, 1};
  REQUIRE_FALSE(classification_accuracy(tied, t2).has_value());  // one true group, k0=2
}

TEST_CASE("parameter errors pool matched components", "[diagnostics]") {
  std::vector<ComponentSummary> s(3);
  TrueMixture truth{{0.5, 0.3, 0.2}, {1.0, 2.0, 3.0}, {1.0, 1.0, 1.0}};
  for (int k = 0; k < 3; ++k) {
    s[k].weight.estimate = truth.weights[k];
    s[k].mean.estimate = truth.means[k];
    s[k].variance.estimate = truth.variances[k];
  }
  // identity-friendly allocation matrix: obs i belongs to comp i
  std::vector<std::vector<double>> probs{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<int> labels{1, 2, 3};
  auto errs = parameter_errors(s, probs, labels, truth);
  REQUIRE(errs.has_value());
  REQUIRE(errs->first == 0.0);
  REQUIRE(errs->second == 0.0);

  // one parameter off by 2 among the 9 pooled terms
  s[1].mean.estimate += 2.0;
  errs = parameter_errors(s, probs, labels, truth);
  REQUIRE_THAT(errs->first, Catch::Matchers::WithinRel(2.0 / 9.0, 1e-12));
  REQUIRE_THAT(errs->second, Catch::Matchers::WithinRel(4.0 / 9.0, 1e-12));

  std::vector<int> mismatched{1, 2, 2};
  REQUIRE_FALSE(parameter_errors(s, probs, mismatched, truth).has_value());
}

TEST_CASE("replicates have size n and degenerate posteriors concentrate", "[diagnostics]") {
  auto cell = single_state_cell({1.0}, {0.0}, {1e-12});
  const auto data = make_data({0.0, 0.0, 0.0, 0.0, 0.0});
  const auto reps = generate_replicates(cell, data, 200, 9);
  REQUIRE(reps.R == 200);
  REQUIRE(reps.n == 5);
  REQUIRE(static_cast<long>(reps.pooled.size()) == 200L * 5L);
  for (double v : reps.pooled) REQUIRE(std::abs(v) < 1e-3);
}

TEST_CASE("replicate moments match the posterior-averaged mixture moments", "[diagnostics]") {
  RelabeledCell cell;
  cell.k0 = 2;
  ChainState s1;
  s1.weights = {0.6, 0.4};
  s1.means = {0.0, 5.0};
  s1.variances = {1.0, 2.0};
  ChainState s2;
  s2.weights = {0.3, 0.7};
  s2.means = {-1.0, 4.0};
  s2.variances = {0.5, 1.0};
  cell.states = {s1, s2};
  cell.iterations = {0, 1};

  const auto data = make_data(std::vector<double>(50, 1.0));
  const auto reps = generate_replicates(cell, data, 20000, 11);

  auto mixture_moments = [](const ChainState& s) {
    double m = 0, m2 = 0;
    for (int k = 0; k < s.k(); ++k) {
      m += s.weights[k] * s.means[k];
      m2 += s.weights[k] * (s.means[k] * s.means[k] + s.variances[k]);
    }
    return std::pair{m, m2};
  };
  const auto [ma, m2a] = mixture_moments(s1);
  const auto [mb, m2b] = mixture_moments(s2);
  const double want_mean = 0.5 * (ma + mb);
  const double want_var = 0.5 * (m2a + m2b) - want_mean * want_mean;
  REQUIRE_THAT(reps.pooled_mean, Catch::Matchers::WithinAbs(want_mean, 0.05));
  REQUIRE_THAT(reps.pooled_var, Catch::Matchers::WithinRel(want_var, 0.05));
}

TEST_CASE("bayes p-values: strict inequality and closed-form oracle", "[diagnostics]") {
  // replicates identical to the data leave both p-values at zero
  PredictiveReplicates same;
  same.R = 10;
  same.n = 3;
  same.rep_min.assign(10, -1.0);
  same.rep_max.assign(10, 2.0);
  const auto data = make_data({-1.0, 0.5, 2.0});
  const auto [p0, p1] = bayes_pvalues(same, data);
  REQUIRE(p0 == 0.0);
  REQUIRE(p1 == 0.0);

  // fixed N(0,1) posterior: P(min Yrep < min Y) = 1 - (1 - Phi(min Y))^n
  auto cell = single_state_cell({1.0}, {0.0}, {1.0});
  const auto y = make_data({-0.8, 0.1, 0.4, 1.2, 2.5});
  const long R = 50000;
  const auto reps = generate_replicates(cell, y, R, 13);
  const auto [pmin, pmax] = bayes_pvalues(reps, y);
  const double want_min = 1.0 - std::pow(1.0 - phi(-0.8), 5);
  const double want_max = std::pow(phi(2.5), 5);
  const double se_min = std::sqrt(want_min * (1 - want_min) / R);
  const double se_max = std::sqrt(want_max * (1 - want_max) / R);
  REQUIRE(std::abs(pmin - want_min) < 4.0 * se_min);
  REQUIRE(std::abs(pmax - want_max) < 4.0 * se_max);
}

TEST_CASE("concordance calibrates near 0.95 and zeroes outside support", "[diagnostics]") {
  auto cell = single_state_cell({0.5, 0.5}, {0.0, 6.0}, {1.0, 2.0});
  // data drawn from the same mixture
  auto rng = derive_stream(15, StreamPurpose::simulation);
  Dataset data;
  data.name = "calib";
  for (int i = 0; i < 1000; ++i) {
    const bool second = uniform01(rng) < 0.5;
    data.values.push_back(second ? 6.0 + std::sqrt(2.0) * normal_draw(rng)
                                 : normal_draw(rng));
  }
  const auto reps = generate_replicates(cell, data, 10000, 17);
  REQUIRE_THAT(concordance(reps, data), Catch::Matchers::WithinAbs(0.95, 0.025));

  Dataset far = make_data({100.0, 101.0, 102.0});
  auto cell2 = single_state_cell({1.0}, {0.0}, {1.0});
  const auto reps2 = generate_replicates(cell2, far, 2000, 19);
  REQUIRE(concordance(reps2, far) == 0.0);
}

TEST_CASE("prediction errors use sorted differences", "[diagnostics]") {
  PredictiveReplicates manual;
  manual.R = 1;
  manual.n = 2;
  manual.rep_min = {1.0};
  manual.rep_max = {3.0};
  manual.abs_err_sum = {3.0};  // data {0,1} vs replicate {1,3}: |0-1| + |1-3|
  manual.sq_err_sum = {5.0};
  const auto data = make_data({0.0, 1.0});
  const auto [mape, mspe] = prediction_errors(manual, data);
  REQUIRE(mape == 3.0);
  REQUIRE(mspe == 5.0);

  // a replicate identical to the data contributes zero error; verify the
  // generation path computes the sorted-difference sums it claims
  auto cell = single_state_cell({1.0}, {0.0}, {1.0});
  const auto y = make_data({-0.5, 0.0, 0.5});
  const auto reps = generate_replicates(cell, y, 4, 21);
  std::vector<double> sorted_y(y.values);
  std::sort(sorted_y.begin(), sorted_y.end());
  for (long r = 0; r < reps.R; ++r) {
    auto rr = derive_stream(21, StreamPurpose::predictive, static_cast<std::uint64_t>(r));
    (void)uniform01(rr);  // iteration pick
    std::vector<double> rep(3);
    for (double& v : rep) {
      (void)uniform01(rr);  // component pick, even for K = 1
      v = normal_draw(rr);
    }
    std::sort(rep.begin(), rep.end());
    double ae = 0, se = 0;
    for (int i = 0; i < 3; ++i) {
      ae += std::abs(sorted_y[i] - rep[i]);
      se += (sorted_y[i] - rep[i]) * (sorted_y[i] - rep[i]);
    }
    REQUIRE_THAT(reps.abs_err_sum[r], Catch::Matchers::WithinRel(ae, 1e-12));
    REQUIRE_THAT(reps.sq_err_sum[r], Catch::Matchers::WithinRel(se, 1e-12));
  }
}

TEST_CASE("fixed histogram quantiles approximate exact ones", "[diagnostics]") {
  auto rng = derive_stream(23, StreamPurpose::simulation);
  FixedHistogram h(-6.0, 6.0);
  std::vector<double> vals(1000000);
  for (double& v : vals) {
    v = normal_draw(rng);
    h.add(v);
  }
  std::sort(vals.begin(), vals.end());
  REQUIRE_THAT(h.quantile(0.025), Catch::Matchers::WithinAbs(quantile_sorted(vals, 0.025), 0.005));
  REQUIRE_THAT(h.quantile(0.975), Catch::Matchers::WithinAbs(quantile_sorted(vals, 0.975), 0.005));
  REQUIRE_THAT(h.quantile(0.5), Catch::Matchers::WithinAbs(quantile_sorted(vals, 0.5), 0.005));
}

TEST_CASE("emitted plot files are exact and well shaped", "[diagnostics]") {
  auto rng = derive_stream(25, StreamPurpose::simulation);
  RelabeledCell cell;
  cell.k0 = 2;
  for (int t = 0; t < 300; ++t) {
    ChainState s;
    s.weights = {0.6 + 0.02 * normal_draw(rng), 0.0};
    s.weights[1] = 1.0 - s.weights[0];
    s.means = {0.0 + 0.1 * normal_draw(rng), 5.0 + 0.1 * normal_draw(rng)};
    s.variances = {std::exp(0.1 * normal_draw(rng)), 2.0 * std::exp(0.1 * normal_draw(rng))};
    s.allocations = {1, 1, 2, 2, 1};
    cell.states.push_back(std::move(s));
    cell.iterations.push_back(t);
  }
  const auto data = make_data({-0.2, 0.1, 4.9, 5.3, 0.4});
  const auto reps = generate_replicates(cell, data, 500, 27);
  const auto cfg = build_configuration_report(cell, data, 1.0, reps);

  const auto dir = std::filesystem::temp_directory_path() / "zmix_plots";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "run").string();
  emit_plot_data(cfg, cell, reps, data, stem);

  // allocation matrix round-trips exactly
  {
    std::ifstream in(stem + ".k2.allocations.tsv");
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "obs\tp1\tp2");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      int obs;
      double p1, p2;
      ls >> obs >> p1 >> p2;
      REQUIRE(obs == rows + 1);
      REQUIRE(p1 == cfg.alloc_probs[rows][0]);
      REQUIRE(p2 == cfg.alloc_probs[rows][1]);
      ++rows;
    }
    REQUIRE(rows == data.size());
  }
  // every parameter density grid integrates to ~1
  {
    std::ifstream in(stem + ".k2.param_density.tsv");
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    std::map<std::string, DensityGrid> grids;
    std::string series;
    double x, d;
    while (in >> series >> x >> d) {
      grids[series].x.push_back(x);
      grids[series].density.push_back(d);
    }
    REQUIRE(grids.size() == 6);  // 3 parameters x 2 components
    for (const auto& [name, g] : grids) {
      INFO(name);
      REQUIRE(g.x.size() == 512);
      REQUIRE_THAT(g.trapezoid_integral(), Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
  }
  // predictive overlay has the advertised shape
  {
    std::ifstream in(stem + ".k2.predictive.tsv");
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "x\tdata_density\tpredictive_density");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    REQUIRE(rows == 512);
  }
}

TEST_CASE("report tables assemble with display ordering by weight", "[diagnostics]") {
  auto rng = derive_stream(29, StreamPurpose::simulation);
  RelabeledCell cell;
  cell.k0 = 2;
  for (int t = 0; t < 200; ++t) {
    ChainState s;
    // component 2 carries the larger weight: display order must flip
    s.weights = {0.3 + 0.01 * normal_draw(rng), 0.0};
    s.weights[1] = 1.0 - s.weights[0];
    s.means = {-2.0, 3.0};
    s.variances = {1.0, 1.0};
    s.allocations = {1, 2, 2};
    cell.states.push_back(std::move(s));
    cell.iterations.push_back(t);
  }
  const auto data = make_data({-2.1, 3.2, 2.8});
  const auto reps = generate_replicates(cell, data, 300, 31);
  const auto cfg = build_configuration_report(cell, data, 1.0, reps);
  REQUIRE(cfg.display_order == std::vector<int>{2, 1});
  REQUIRE(cfg.params[0].weight.estimate > cfg.params[1].weight.estimate);
  REQUIRE(cfg.params[0].mean.estimate == Catch::Approx(3.0));
  // allocation columns follow the display order
  REQUIRE(cfg.alloc_probs[0][1] == 1.0);  // obs 0 lives in the small component
  REQUIRE(cfg.alloc_probs[1][0] == 1.0);
}
