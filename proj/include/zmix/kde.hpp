// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "zmix/errors.hpp"

namespace zmix {

// Type-7 quantile (linear interpolation between order statistics) on an
// already sorted vector.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const size_t lo = static_cast<size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct DensityGrid {
  std::vector<double> x;
  std::vector<double> density;

  double trapezoid_integral() const {
    double s = 0.0;
    for (size_t i = 1; i < x.size(); ++i)
      s += 0.5 * (density[i] + density[i - 1]) * (x[i] - x[i - 1]);
    return s;
  }
};

// Gaussian-kernel density on a regular grid, bandwidth by the usual plug-in
// rule 0.9 min(sd, IQR/1.34) n^{-1/5}. The grid extends `cut` bandwidths past
// the sample range. A constant sample degenerates to a narrow spike.
inline DensityGrid kde_grid(std::span<const double> values, int gridsize = 512,
                            double cut = 4.0) {
  if (values.empty()) throw DataError("kde of an empty sample");
  const double n = static_cast<double>(values.size());
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / std::max(n - 1.0, 1.0));
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  double bw = 0.9 * spread * std::pow(n, -0.2);
  if (!(bw > 0.0)) bw = std::max(std::abs(mean), 1.0) * 1e-9;

  DensityGrid g;
  g.x.resize(gridsize);
  g.density.assign(gridsize, 0.0);
  const double lo = sorted.front() - cut * bw;
  const double hi = sorted.back() + cut * bw;
  const double step = (hi - lo) / static_cast<double>(gridsize - 1);
  for (int i = 0; i < gridsize; ++i) g.x[i] = lo + step * i;
  const double norm = 1.0 / (n * bw * std::sqrt(2.0 * 3.14159265358979323846));
  for (double v : sorted) {
    // kernel support is effectively +-6 bandwidths
    const int first = std::max(0, static_cast<int>((v - 6.0 * bw - lo) / step));
    const int last = std::min(gridsize - 1, static_cast<int>((v + 6.0 * bw - lo) / step) + 1);
    for (int i = first; i <= last; ++i) {
      const double z = (g.x[i] - v) / bw;
      g.density[i] += norm * std::exp(-0.5 * z * z);
    }
  }
  return g;
}

// Strict local maxima above a fraction of the global peak.
inline int count_modes(const DensityGrid& g, double rel_threshold = 0.05) {
  const int n = static_cast<int>(g.density.size());
  double peak = 0.0;
  for (double d : g.density) peak = std::max(peak, d);
  if (!(peak > 0.0)) return 0;
  const double floor = rel_threshold * peak;
  int modes = 0;
  for (int i = 0; i < n; ++i) {
    const double d = g.density[i];
    if (d < floor) continue;
    const bool left_ok = (i == 0) || g.density[i - 1] < d;
    bool right_ok;
    if (i == n - 1) {
      right_ok = true;
    } else if (g.density[i + 1] < d) {
      right_ok = true;
    } else if (g.density[i + 1] == d) {
      // plateau: walk to its end, count once at the left edge
      int j = i + 1;
      while (j < n && g.density[j] == d) ++j;
      right_ok = (j == n) || g.density[j] < d;
      if (left_ok && right_ok) {
        ++modes;
        i = j - 1;
        continue;
      }
      i = j - 1;
      continue;
    } else {
      right_ok = false;
    }
    if (left_ok && right_ok) ++modes;
  }
  return modes;
}

}  // namespace zmix
