// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace zmix {

// Stream purposes. Every source of randomness in a run is a stream derived
// from (master seed, purpose, index), so parallel and serial execution of
// independent units consume identical draw sequences.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  chain = 2,
  swap = 3,
  replicate = 4,
  predictive = 5,
  simulation = 6,
};

namespace detail {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Documented stream-splitting function: master seed and the (purpose, index)
// tags are mixed through splitmix64 into eight 32-bit words seeding a
// mt19937_64. Identical inputs give identical engines on every platform.
inline std::mt19937_64 derive_stream(std::uint64_t master,
                                     StreamPurpose purpose,
                                     std::uint64_t index = 0) {
  std::uint64_t s = detail::mix64(master);
  s = detail::mix64(s ^ (static_cast<std::uint64_t>(purpose) * 0xD1B54A32D192ED03ULL));
  s = detail::mix64(s ^ (index * 0x8CB92BA72F3D8DD7ULL));
  std::uint32_t words[8];
  std::uint64_t t = s;
  for (int i = 0; i < 4; ++i) {
    t = detail::mix64(t);
    words[2 * i] = static_cast<std::uint32_t>(t);
    words[2 * i + 1] = static_cast<std::uint32_t>(t >> 32);
  }
  std::seed_seq seq(words, words + 8);
  return std::mt19937_64(seq);
}

// Uniform on (0,1]; safe as an argument to log().
inline double uniform_pos(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1p-53;
}

// Uniform on [0,1).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1p-53;
}

// Standard normal via Box-Muller. Stateless: two uniforms per draw, so a
// stream's consumption pattern does not depend on call history.
inline double normal_draw(std::mt19937_64& rng) {
  const double u1 = uniform_pos(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

namespace detail {

// Marsaglia-Tsang for shape >= 1, unit scale.
inline double gamma_mt(double shape, std::mt19937_64& rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal_draw(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_pos(rng);
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

}  // namespace detail

// log of a Gamma(shape, 1) draw. For shape < 0.1 the draw happens entirely
// in log space through the boost identity G(s) = G(s+1) * U^(1/s); the
// returned log value stays finite down to shapes around 1e-300 even though
// exp() of it would underflow to zero.
inline double log_gamma_draw(double shape, std::mt19937_64& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("log_gamma_draw: shape must be > 0");
  if (shape >= 1.0) return std::log(detail::gamma_mt(shape, rng));
  const double g = detail::gamma_mt(shape + 1.0, rng);
  const double u = uniform_pos(rng);
  return std::log(g) + std::log(u) / shape;
}

// Gamma(shape, 1) draw in linear space. Underflows to 0 for tiny shapes;
// callers that cannot tolerate that must stay on log_gamma_draw.
inline double gamma_draw(double shape, std::mt19937_64& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma_draw: shape must be > 0");
  if (shape >= 1.0) return detail::gamma_mt(shape, rng);
  return std::exp(log_gamma_draw(shape, rng));
}

// Inverse-Gamma(shape a, scale b): 1/X with X ~ Gamma(a, rate b).
inline double inv_gamma_draw(double a, double b, std::mt19937_64& rng) {
  return b / gamma_draw(a, rng);
}

}  // namespace zmix
