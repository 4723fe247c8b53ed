// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <mpfr.h>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace testutil {

struct Moments {
  double mean = 0, var = 0, se_mean = 0, se_var = 0;
};

// Sample mean/variance plus their Monte Carlo standard errors (the variance
// SE uses the empirical fourth central moment).
inline Moments moments(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  Moments m;
  for (double v : x) m.mean += v;
  m.mean /= n;
  double m2 = 0, m4 = 0;
  for (double v : x) {
    const double d = v - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  m.var = m2 * n / (n - 1.0);
  m.se_mean = std::sqrt(m2 / n);
  m.se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
  return m;
}

// Two-sample Kolmogorov-Smirnov p-value (asymptotic Kolmogorov distribution
// with the usual small-sample correction).
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t na = a.size(), nb = b.size();
  size_t ia = 0, ib = 0;
  double d = 0.0;
  while (ia < na && ib < nb) {
    const double x = std::min(a[ia], b[ib]);
    while (ia < na && a[ia] <= x) ++ia;
    while (ib < nb && b[ib] <= x) ++ib;
    d = std::max(d, std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb));
  }
  const double ne = static_cast<double>(na) * nb / (na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    p += sign * term;
    sign = -sign;
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * p, 0.0, 1.0);
}

// ---- arbitrary-precision oracles (256-bit MPFR) ----

class Mpfr {
 public:
  Mpfr() { mpfr_init2(v_, 256); }
  explicit Mpfr(double x) : Mpfr() { mpfr_set_d(v_, x, MPFR_RNDN); }
  Mpfr(const Mpfr& o) : Mpfr() { mpfr_set(v_, o.v_, MPFR_RNDN); }
  Mpfr& operator=(const Mpfr& o) {
    mpfr_set(v_, o.v_, MPFR_RNDN);
    return *this;
  }
  ~Mpfr() { mpfr_clear(v_); }
  mpfr_ptr get() { return v_; }
  mpfr_srcptr get() const { return v_; }
  double to_double() const { return mpfr_get_d(v_, MPFR_RNDN); }

 private:
  mpfr_t v_;
};

inline Mpfr mpfr_lngamma_of(double x) {
  Mpfr in(x), out;
  int sign;
  mpfr_lgamma(out.get(), &sign, in.get(), MPFR_RNDN);
  return out;
}

inline Mpfr mpfr_log_of(double x) {
  Mpfr in(x), out;
  mpfr_log(out.get(), in.get(), MPFR_RNDN);
  return out;
}

// Symmetric Dirichlet log density evaluated at 256-bit precision.
inline double dirichlet_log_density_oracle(std::span<const double> w, double alpha, int K) {
  Mpfr acc = mpfr_lngamma_of(K * alpha);
  Mpfr ka = mpfr_lngamma_of(alpha);
  mpfr_mul_d(ka.get(), ka.get(), static_cast<double>(K), MPFR_RNDN);
  mpfr_sub(acc.get(), acc.get(), ka.get(), MPFR_RNDN);
  Mpfr sum_log(0.0);
  for (double x : w) {
    Mpfr lx = mpfr_log_of(x);
    mpfr_add(sum_log.get(), sum_log.get(), lx.get(), MPFR_RNDN);
  }
  mpfr_mul_d(sum_log.get(), sum_log.get(), alpha - 1.0, MPFR_RNDN);
  mpfr_add(acc.get(), acc.get(), sum_log.get(), MPFR_RNDN);
  return acc.to_double();
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace testutil
