#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace hcfctx {

// Seeded generator for sampling and initialization. Distributions are
// implemented here rather than taken from <random> so that draws are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    // Box-Muller; the second variate is discarded to keep the stream simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang, with the shape<1 boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet draw; entries are floored at `floor` and renormalized so that
  // sparse concentrations never produce exact zeros.
  std::vector<double> dirichlet(std::span<const double> alpha,
                                double floor = 1e-6) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma(alpha[i]);
      total += out[i];
    }
    if (!(total > 0.0)) {
      for (auto& x : out) x = 1.0;
      total = static_cast<double>(out.size());
    }
    double renorm = 0.0;
    for (auto& x : out) {
      x = std::max(x / total, floor);
      renorm += x;
    }
    for (auto& x : out) x /= renorm;
    return out;
  }

  // Inverse-CDF draw from unnormalized nonnegative weights.
  template <typename Weights>
  std::size_t categorical(const Weights& w) {
    double total = 0.0;
    const auto n = static_cast<std::size_t>(w.size());
    for (std::size_t i = 0; i < n; ++i) total += w[i];
    double u = uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
      u -= w[i];
      if (u < 0.0) return i;
    }
    return n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hcfctx
