#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "hcfctx/hmm.hpp"

namespace hcfctx {

/// Shape of a structured generator: sticky transitions and one dominant
/// value per (state, feature), distinct across states where the vocabulary
/// allows. `advance` is the share of the leaving mass that moves to the
/// successor state k+1 (mod K), giving routine-like cycles.
struct SyntheticSpec {
  double stay = 0.8;
  double advance = 0.0;
  double peak = 0.7;
  double availability_lo = 0.6;
  double availability_hi = 0.95;
};

inline ModelParams synthetic_model(std::size_t K, const ValueLayout& layout, const SyntheticSpec& spec,
                                   std::uint64_t seed) {
  if (K < 1) throw RangeError("K must be >= 1");
  if (!(spec.stay > 0 && spec.stay <= 1 && spec.peak > 0 && spec.peak <= 1)) {
    throw RangeError("stay and peak must be in (0, 1]");
  }
  Rng rng(seed);
  ModelParams p = ModelParams::zeros(K, layout);
  const auto kk = static_cast<Eigen::Index>(K);
  const auto pi = rng.dirichlet(std::vector<double>(K, 1.0));
  for (Eigen::Index k = 0; k < kk; ++k) p.pi[k] = pi[static_cast<std::size_t>(k)];

  // Puts `mass` on `hot` and spreads the rest over the other n-1 slots.
  auto peaked = [&](std::size_t n, std::size_t hot, double mass) {
    std::vector<double> row(n, 0.0);
    if (n == 1) {
      row[0] = 1.0;
      return row;
    }
    const auto rest = rng.dirichlet(std::vector<double>(n - 1, 1.0));
    for (std::size_t i = 0, r = 0; i < n; ++i) row[i] = i == hot ? mass : (1.0 - mass) * rest[r++];
    return row;
  };
  if (spec.advance < 0 || spec.advance > 1) throw RangeError("advance must be in [0, 1]");
  for (std::size_t j = 0; j < K; ++j) {
    auto row = peaked(K, j, spec.stay);
    if (K > 2 && spec.advance > 0) {
      const std::size_t next = (j + 1) % K;
      const double leave = 1.0 - spec.stay;
      for (std::size_t k = 0; k < K; ++k) {
        if (k != j) row[k] *= 1.0 - spec.advance;
      }
      row[next] += spec.advance * leave;
    }
    for (std::size_t k = 0; k < K; ++k) p.rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = row[k];
  }
  for (std::size_t f = 0; f < layout.num_features(); ++f) {
    const std::size_t V = layout.cardinality(f);
    std::vector<std::size_t> perm(V);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = V; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t k = 0; k < K; ++k) {
      const auto kr = static_cast<Eigen::Index>(k);
      p.theta(kr, static_cast<Eigen::Index>(f)) = rng.uniform(spec.availability_lo, spec.availability_hi);
      const auto row = peaked(V, perm[k % V], spec.peak);
      for (std::size_t v = 0; v < V; ++v) p.phi(kr, static_cast<Eigen::Index>(layout.offset(f) + v)) = row[v];
    }
  }
  return p;
}

/// Emits every user from one of `chains` independent realizations of the
/// latent chain; chain_of(u, timestamp) picks the realization per slot.
inline Dataset sample_assigned(const ModelParams& p, const FeatureSchema& schema, std::size_t T, std::size_t M,
                               std::size_t chains,
                               const std::function<std::size_t(std::size_t, utc::Seconds)>& chain_of,
                               std::uint64_t seed, utc::Seconds start = 0, utc::Seconds period = 3600) {
  if (chains < 1) throw RangeError("need at least one chain");
  if (schema.cardinalities() != p.layout.cardinalities()) {
    throw SchemaError("schema does not match the model's value layout");
  }
  std::vector<std::vector<std::size_t>> states(chains);
  for (std::size_t c = 0; c < chains; ++c) {
    states[c] = sample_with_states(p, schema, T, 1, mix_seed(seed, 1000 + c), start, period).states;
  }
  Rng rng(mix_seed(seed, 7));
  Dataset d;
  d.schema = schema;
  d.period_seconds = period;
  for (std::size_t u = 0; u < M; ++u) {
    d.user_names.push_back(default_user_name(u));
    d.sequences.push_back(ObservationSequence{static_cast<UserId>(u), period, {}});
    d.sequences.back().observations.reserve(T);
  }
  for (std::size_t t = 0; t < T; ++t) {
    const utc::Seconds ts = start + static_cast<utc::Seconds>(t) * period;
    for (std::size_t u = 0; u < M; ++u) {
      const std::size_t c = chain_of(u, ts);
      if (c >= chains) throw RangeError("chain index out of range");
      const auto k = static_cast<Eigen::Index>(states[c][t]);
      ContextObservation obs;
      obs.timestamp = ts;
      obs.user = static_cast<UserId>(u);
      for (std::size_t f = 0; f < schema.size(); ++f) {
        if (!rng.bernoulli(p.theta(k, static_cast<Eigen::Index>(f)))) continue;
        const auto v = rng.categorical(p.phi_block(static_cast<std::size_t>(k), f));
        obs.pairs.emplace_back(static_cast<FeatureId>(f), static_cast<ValueId>(v));
      }
      d.sequences[u].observations.push_back(std::move(obs));
    }
  }
  return d;
}

/// `shared` users on one chain followed by `independent` users on a chain each.
inline Dataset sample_planted(const ModelParams& p, const FeatureSchema& schema, std::size_t T, std::size_t shared,
                              std::size_t independent, std::uint64_t seed, utc::Seconds start = 0,
                              utc::Seconds period = 3600) {
  return sample_assigned(
      p, schema, T, shared + independent, 1 + independent,
      [shared](std::size_t u, utc::Seconds) { return u < shared ? std::size_t{0} : u - shared + 1; }, seed, start,
      period);
}

}  // namespace hcfctx
