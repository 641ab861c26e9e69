#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hcfctx/errors.hpp"
#include "hcfctx/model.hpp"
#include "hcfctx/random.hpp"
#include "hcfctx/schema.hpp"

namespace hcfctx {

inline constexpr double kThetaFloor = 1e-12;

/// log mu_tk for one time slot: sum over users and present pairs of
/// log theta_kf + log phi_kfv. Absent features contribute nothing.
inline double observation_likelihood(const ModelParams& p,
                                     std::span<const ContextObservation> obs_at_t,
                                     std::size_t k) {
  double s = 0.0;
  const auto kk = static_cast<Eigen::Index>(k);
  for (const auto& obs : obs_at_t) {
    for (const auto& [f, v] : obs.pairs) {
      s += std::log(p.theta(kk, f)) + std::log(p.phi_at(k, f, v));
    }
  }
  return s;
}

/// K x T matrix of log mu_tk over the whole dataset.
inline MatrixXd emission_loglik(const ModelParams& p, const Dataset& d) {
  const auto K = static_cast<Eigen::Index>(p.num_states());
  const auto T = static_cast<Eigen::Index>(d.length());
  const MatrixXd log_theta = p.theta.array().log().matrix();
  const MatrixXd log_phi = p.phi.array().log().matrix();
  MatrixXd out = MatrixXd::Zero(K, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    auto col = out.col(t);
    for (const auto& seq : d.sequences) {
      for (const auto& [f, v] : seq.observations[static_cast<std::size_t>(t)].pairs) {
        col += log_theta.col(f);
        col += log_phi.col(static_cast<Eigen::Index>(p.layout.offset(f) + v));
      }
    }
  }
  return out;
}

/// Scaled forward/backward quantities for one dataset.
///
/// With c_t the sum of the unnormalized forward column at t (after the
/// previous columns were normalized), alpha_hat_t = alpha_t / prod_{s<=t} c_s,
/// beta_hat_t = beta_t / prod_{s>t} c_s, log_scale_t = -log c_t and
/// loglik = -sum_t log_scale_t.
struct FBCache {
  MatrixXd log_mu;       // K x T
  MatrixXd mu_tilde;     // K x T, exp(log_mu - offset_t)
  VectorXd offset;       // T, per-t max of log_mu
  VectorXd norm;         // T, column sums of the unnormalized tilde-forward
  MatrixXd alpha_hat;    // K x T
  MatrixXd beta_hat;     // K x T
  VectorXd log_scale;    // T
  MatrixXd gamma;        // K x T
  std::vector<MatrixXd> xi;  // T-1 entries, xi[t-1](j, k) for the step t-1 -> t
  double loglik = 0.0;

  std::size_t length() const { return static_cast<std::size_t>(alpha_hat.cols()); }
};

namespace detail {

inline void prepare_emissions(const ModelParams& p, const Dataset& d, FBCache& c) {
  c.log_mu = emission_loglik(p, d);
  const auto T = c.log_mu.cols();
  c.offset.resize(T);
  c.mu_tilde.resizeLike(c.log_mu);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double m = c.log_mu.col(t).maxCoeff();
    if (!std::isfinite(m)) {
      throw DegenerateError("observation at slot " + std::to_string(t) +
                            " is impossible under every state");
    }
    c.offset[t] = m;
    c.mu_tilde.col(t) = (c.log_mu.col(t).array() - m).exp().matrix();
  }
}

}  // namespace detail

/// Scaled forward pass. Fills log_mu, mu_tilde, offset, norm, alpha_hat,
/// log_scale and loglik.
inline FBCache forward(const ModelParams& p, const Dataset& d) {
  if (d.length() == 0) throw DegenerateError("forward needs T >= 1");
  FBCache c;
  detail::prepare_emissions(p, d, c);
  const auto K = static_cast<Eigen::Index>(p.num_states());
  const auto T = c.log_mu.cols();
  c.alpha_hat.resize(K, T);
  c.norm.resize(T);
  c.log_scale.resize(T);
  double ll = 0.0;
  VectorXd prior = p.pi;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) prior = p.rho.transpose() * c.alpha_hat.col(t - 1);
    VectorXd a = prior.cwiseProduct(c.mu_tilde.col(t));
    const double s = a.sum();
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw DegenerateError("forward column " + std::to_string(t) + " is all zero");
    }
    c.alpha_hat.col(t) = a / s;
    c.norm[t] = s;
    c.log_scale[t] = -(std::log(s) + c.offset[t]);
    ll -= c.log_scale[t];
  }
  c.loglik = ll;
  return c;
}

/// Scaled backward pass using the normalizers recorded by forward().
inline void backward(const ModelParams& p, FBCache& c) {
  const auto K = static_cast<Eigen::Index>(p.num_states());
  const auto T = c.alpha_hat.cols();
  c.beta_hat.resize(K, T);
  c.beta_hat.col(T - 1).setOnes();
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    const VectorXd w = c.mu_tilde.col(t + 1).cwiseProduct(c.beta_hat.col(t + 1));
    c.beta_hat.col(t) = (p.rho * w) / c.norm[t + 1];
  }
}

/// gamma and xi from a completed forward/backward pair.
inline void posteriors(const ModelParams& p, FBCache& c) {
  const auto K = static_cast<Eigen::Index>(p.num_states());
  const auto T = c.alpha_hat.cols();
  c.gamma.resize(K, T);
  c.xi.assign(static_cast<std::size_t>(std::max<Eigen::Index>(T - 1, 0)), MatrixXd());
  VectorXd g0 = c.alpha_hat.col(0).cwiseProduct(c.beta_hat.col(0));
  c.gamma.col(0) = g0 / g0.sum();
  for (Eigen::Index t = 1; t < T; ++t) {
    const VectorXd right =
        c.mu_tilde.col(t).cwiseProduct(c.beta_hat.col(t)) / c.norm[t];
    MatrixXd x = (c.alpha_hat.col(t - 1) * right.transpose()).cwiseProduct(p.rho);
    c.gamma.col(t) = x.colwise().sum().transpose();
    c.xi[static_cast<std::size_t>(t - 1)] = std::move(x);
  }
}

inline FBCache e_step(const ModelParams& p, const Dataset& d) {
  FBCache c = forward(p, d);
  backward(p, c);
  posteriors(p, c);
  return c;
}

inline double loglik(const ModelParams& p, const Dataset& d) { return forward(p, d).loglik; }

/// Sufficient statistics of one E-step, the inputs of the M-step formulas.
struct SuffStats {
  VectorXd gamma1;     // K
  MatrixXd trans;      // K x K, sum_t xi_t
  VectorXd occupancy;  // K, sum_t gamma_tk
  MatrixXd presence;   // K x F, sum_t gamma_tk * (#users with f at t)
  MatrixXd values;     // K x sum V, sum_t gamma_tk * (#users with (f, v) at t)
};

inline SuffStats sufficient_stats(const MatrixXd& gamma, const std::vector<MatrixXd>& xi,
                                  const Dataset& d, const ValueLayout& layout) {
  const auto K = gamma.rows();
  const auto T = gamma.cols();
  SuffStats s;
  s.gamma1 = gamma.col(0);
  s.trans = MatrixXd::Zero(K, K);
  for (const auto& x : xi) s.trans += x;
  s.occupancy = gamma.rowwise().sum();
  s.presence = MatrixXd::Zero(K, static_cast<Eigen::Index>(layout.num_features()));
  s.values = MatrixXd::Zero(K, static_cast<Eigen::Index>(layout.total()));
  for (Eigen::Index t = 0; t < T; ++t) {
    for (const auto& seq : d.sequences) {
      for (const auto& [f, v] : seq.observations[static_cast<std::size_t>(t)].pairs) {
        s.presence.col(f) += gamma.col(t);
        s.values.col(static_cast<Eigen::Index>(layout.offset(f) + v)) += gamma.col(t);
      }
    }
  }
  return s;
}

/// Parameter update from sufficient statistics and Dirichlet pseudo-counts.
/// `num_users` is the M multiplying the occupancy in the theta denominator.
inline ModelParams m_step_from_stats(const SuffStats& s, std::size_t num_users,
                                     const Hyperparams& h, const ValueLayout& layout) {
  const auto K = static_cast<std::size_t>(s.gamma1.size());
  ModelParams p = ModelParams::zeros(K, layout);
  const VectorXd pi_num = s.gamma1 + h.eta;
  p.pi = pi_num / pi_num.sum();
  const MatrixXd rho_num = s.trans + h.omega;
  p.rho = rho_num.array().colwise() / rho_num.rowwise().sum().array();
  const double M = static_cast<double>(num_users);
  for (std::size_t k = 0; k < K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double denom = M * s.occupancy[kk] + h.delta.row(kk).sum();
    for (std::size_t f = 0; f < layout.num_features(); ++f) {
      const auto ff = static_cast<Eigen::Index>(f);
      const double th = (s.presence(kk, ff) + h.delta(kk, ff)) / denom;
      p.theta(kk, ff) = std::clamp(th, kThetaFloor, 1.0);
      const auto off = static_cast<Eigen::Index>(layout.offset(f));
      const auto V = static_cast<Eigen::Index>(layout.cardinality(f));
      const auto num = s.values.row(kk).segment(off, V) + h.lambda.row(kk).segment(off, V);
      p.phi.row(kk).segment(off, V) = num / num.sum();
    }
  }
  return p;
}

inline ModelParams m_step(const MatrixXd& gamma, const std::vector<MatrixXd>& xi,
                          const Dataset& d, const Hyperparams& h) {
  const ValueLayout layout(d.schema.cardinalities());
  return m_step_from_stats(sufficient_stats(gamma, xi, d, layout), d.num_users(), h, layout);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Random initial parameters. RandomDirichlet draws every categorical from a
/// unit-concentration Dirichlet and theta uniformly in [0.05, 0.95];
/// FromPriors draws the categoricals from the model's own pseudo-counts and
/// theta_kf from Beta(delta_kf, 1).
inline ModelParams init_params(std::size_t K, const ValueLayout& layout, const Hyperparams& h,
                               InitMethod method, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::zeros(K, layout);
  const auto kk = static_cast<Eigen::Index>(K);
  auto draw = [&](auto row_expr) {
    std::vector<double> alpha(static_cast<std::size_t>(row_expr.size()));
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      alpha[i] = method == InitMethod::FromPriors ? row_expr[static_cast<Eigen::Index>(i)] : 1.0;
    }
    return rng.dirichlet(alpha);
  };
  auto pi = draw(h.eta);
  for (Eigen::Index k = 0; k < kk; ++k) p.pi[k] = pi[static_cast<std::size_t>(k)];
  for (Eigen::Index j = 0; j < kk; ++j) {
    auto row = draw(VectorXd(h.omega.row(j).transpose()));
    for (Eigen::Index k = 0; k < kk; ++k) p.rho(j, k) = row[static_cast<std::size_t>(k)];
  }
  for (Eigen::Index k = 0; k < kk; ++k) {
    for (std::size_t f = 0; f < layout.num_features(); ++f) {
      const auto ff = static_cast<Eigen::Index>(f);
      if (method == InitMethod::FromPriors) {
        const double a = rng.gamma(h.delta(k, ff));
        const double b = rng.gamma(1.0);
        p.theta(k, ff) = std::clamp(a / (a + b), 1e-3, 1.0);
      } else {
        p.theta(k, ff) = rng.uniform(0.05, 0.95);
      }
      const auto off = static_cast<Eigen::Index>(layout.offset(f));
      const auto V = static_cast<Eigen::Index>(layout.cardinality(f));
      auto block = draw(VectorXd(h.lambda.row(k).segment(off, V).transpose()));
      for (Eigen::Index v = 0; v < V; ++v) p.phi(k, off + v) = block[static_cast<std::size_t>(v)];
    }
  }
  return p;
}

/// Data-seeded start: K slots are picked k-means++ style (each next seed
/// with probability proportional to its mismatch count against the nearest
/// seed so far) and every state copies its slot's smoothed presence and
/// value counts. Transitions start at 0.5 self-persistence.
inline ModelParams init_from_data(std::size_t K, const Dataset& d, std::uint64_t seed) {
  if (K < 1) throw RangeError("K must be >= 1");
  if (d.length() == 0 || d.num_users() == 0) throw DataError("empty dataset");
  const ValueLayout layout(d.schema.cardinalities());
  const std::size_t T = d.length(), F = layout.num_features();
  const double M = static_cast<double>(d.num_users());
  // Per-slot flattened value counts over users.
  auto counts = [&](std::size_t t) {
    std::vector<double> c(layout.total(), 0.0);
    for (const auto& seq : d.sequences) {
      for (const auto& [f, v] : seq.observations[t].pairs) c[layout.offset(f) + v] += 1.0;
    }
    return c;
  };
  auto mismatch = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
  };
  Rng rng(seed);
  std::vector<std::vector<double>> seeds{counts(rng.below(T))};
  std::vector<double> nearest(T, std::numeric_limits<double>::infinity());
  while (seeds.size() < K) {
    for (std::size_t t = 0; t < T; ++t) nearest[t] = std::min(nearest[t], mismatch(counts(t), seeds.back()));
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = rng.below(T);
    if (total > 0) pick = rng.categorical(nearest);
    seeds.push_back(counts(pick));
  }
  ModelParams p = ModelParams::zeros(K, layout);
  p.pi.setConstant(1.0 / static_cast<double>(K));
  const double off_diag = K > 1 ? 0.5 / static_cast<double>(K - 1) : 0.0;
  p.rho.setConstant(off_diag);
  p.rho.diagonal().setConstant(K > 1 ? 0.5 : 1.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t off = layout.offset(f), V = layout.cardinality(f);
      double present = 0;
      for (std::size_t v = 0; v < V; ++v) present += seeds[k][off + v];
      p.theta(kk, static_cast<Eigen::Index>(f)) = (present + 0.5) / (M + 1.0);
      for (std::size_t v = 0; v < V; ++v) {
        p.phi(kk, static_cast<Eigen::Index>(off + v)) = (seeds[k][off + v] + 0.1) / (present + 0.1 * static_cast<double>(V));
      }
    }
  }
  return p;
}

struct TrainResult {
  ModelParams params;
  std::vector<double> trace;  // trace[0] at the initial parameters, trace[i] after i updates
  int iterations = 0;
  bool converged = false;
  int best_restart = 0;
  std::vector<double> restart_logliks;

  double final_loglik() const { return trace.back(); }
};

/// EM from given initial parameters.
inline TrainResult em_from(ModelParams init, const Dataset& d, const Hyperparams& h,
                           const TrainConfig& cfg) {
  if (cfg.max_iters < 1) throw RangeError("max_iters must be >= 1");
  if (!(cfg.loglik_rel_tol > 0)) throw RangeError("loglik_rel_tol must be positive");
  TrainResult r;
  r.params = std::move(init);
  r.params.users = d.user_names;
  FBCache c = e_step(r.params, d);
  r.trace.push_back(c.loglik);
  const ValueLayout& layout = r.params.layout;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    ModelParams next = m_step_from_stats(sufficient_stats(c.gamma, c.xi, d, layout),
                                         d.num_users(), h, layout);
    next.users = d.user_names;
    c = e_step(next, d);
    r.params = std::move(next);
    const double prev = r.trace.back();
    r.trace.push_back(c.loglik);
    r.iterations = it;
    if (std::abs(c.loglik - prev) <= cfg.loglik_rel_tol * std::abs(c.loglik)) {
      r.converged = true;
      break;
    }
  }
  return r;
}

/// EM with cfg.restarts random initializations; the run with the highest
/// final loglik is returned (earliest on ties).
inline TrainResult em_train(const Dataset& d, std::size_t K, const Hyperparams& h,
                            const TrainConfig& cfg) {
  if (K < 1) throw RangeError("K must be >= 1");
  if (d.num_users() == 0 || d.length() == 0) throw DataError("empty dataset");
  const ValueLayout layout(d.schema.cardinalities());
  const int restarts = std::max(cfg.restarts, 1);
  TrainResult best;
  std::vector<double> finals;
  for (int r = 0; r < restarts; ++r) {
    const auto seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r));
    auto init = cfg.init == InitMethod::FromData ? init_from_data(K, d, seed) : init_params(K, layout, h, cfg.init, seed);
    TrainResult run = em_from(std::move(init), d, h, cfg);
    finals.push_back(run.final_loglik());
    if (r == 0 || run.final_loglik() > best.final_loglik()) {
      best = std::move(run);
      best.best_restart = r;
    }
  }
  best.restart_logliks = std::move(finals);
  return best;
}

inline std::string default_user_name(std::size_t u) {
  if (u < 26) return std::string(1, static_cast<char>('A' + u));
  return "U" + std::to_string(u + 1);
}

struct SampleResult {
  Dataset data;
  std::vector<std::size_t> states;  // latent chain, length T
};

/// Draws a dataset from the generative model. Timestamps start at `start`
/// and advance by `period`.
inline SampleResult sample_with_states(const ModelParams& p, const FeatureSchema& schema,
                                       std::size_t T, std::size_t M, std::uint64_t seed,
                                       utc::Seconds start = 0, utc::Seconds period = 3600) {
  if (schema.cardinalities() != p.layout.cardinalities()) {
    throw SchemaError("schema does not match the model's value layout");
  }
  Rng rng(seed);
  SampleResult out;
  out.data.schema = schema;
  out.data.period_seconds = period;
  for (std::size_t u = 0; u < M; ++u) {
    out.data.user_names.push_back(default_user_name(u));
    out.data.sequences.push_back(ObservationSequence{static_cast<UserId>(u), period, {}});
    out.data.sequences.back().observations.reserve(T);
  }
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t) {
    k = t == 0 ? rng.categorical(p.pi) : rng.categorical(p.rho.row(static_cast<Eigen::Index>(k)));
    out.states.push_back(k);
    for (std::size_t u = 0; u < M; ++u) {
      ContextObservation obs;
      obs.timestamp = start + static_cast<utc::Seconds>(t) * period;
      obs.user = static_cast<UserId>(u);
      for (std::size_t f = 0; f < schema.size(); ++f) {
        if (!rng.bernoulli(p.theta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)))) {
          continue;
        }
        const auto v = rng.categorical(p.phi_block(k, f));
        obs.pairs.emplace_back(static_cast<FeatureId>(f), static_cast<ValueId>(v));
      }
      out.data.sequences[u].observations.push_back(std::move(obs));
    }
  }
  return out;
}

inline Dataset sample(const ModelParams& p, const FeatureSchema& schema, std::size_t T,
                      std::size_t M, std::uint64_t seed) {
  return sample_with_states(p, schema, T, M, seed).data;
}

}  // namespace hcfctx
