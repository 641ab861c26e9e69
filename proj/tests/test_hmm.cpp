#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hcfctx/hmm.hpp"
#include "hcfctx/synthetic.hpp"
#include "oracles.hpp"

using namespace hcfctx;

namespace {

struct Instance {
  FeatureSchema schema;
  ModelParams params;
  Dataset data;
};

Instance random_instance(std::uint64_t seed, std::size_t K, std::size_t T, std::size_t M,
                         std::size_t F = 2) {
  Rng rng(seed);
  Instance in;
  in.schema = oracle::random_schema(rng, F, 3);
  in.params = oracle::random_params(rng, K, in.schema);
  in.data = oracle::random_dataset(rng, in.schema, T, M);
  return in;
}

Hyperparams default_hyper(std::size_t K, const Dataset& d) { return HyperSpec{}.build(K, d); }

}  // namespace

TEST(Emission, ForcedVocabularyIsFree) {
  FeatureSchema s;
  s.add("a", {"only"});
  s.add("b", {"only"});
  auto p = ModelParams::zeros(2, ValueLayout(s.cardinalities()));
  p.theta.setOnes();
  p.phi.setOnes();
  std::vector<ContextObservation> obs{{0, 0, {{0, 0}, {1, 0}}}};
  EXPECT_DOUBLE_EQ(observation_likelihood(p, obs, 0), 0.0);
}

TEST(Emission, SingleFactor) {
  FeatureSchema s;
  s.add("a", {"v0", "v1", "v2", "v3"});
  auto p = ModelParams::zeros(1, ValueLayout(s.cardinalities()));
  p.theta(0, 0) = 0.5;
  p.phi.setConstant(0.25);
  std::vector<ContextObservation> obs{{0, 0, {{0, 2}}}};
  EXPECT_NEAR(observation_likelihood(p, obs, 0), std::log(0.125), 1e-15);
  std::vector<ContextObservation> empty{{0, 0, {}}};
  EXPECT_EQ(observation_likelihood(p, empty, 0), 0.0);
}

TEST(Emission, MatchesDirectProduct) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = random_instance(seed, 3, 4, 2, 2);
    const MatrixXd lm = emission_loglik(in.params, in.data);
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double direct = std::log(static_cast<double>(oracle::mu(in.params, in.data, t, k)));
        EXPECT_NEAR(lm(static_cast<long>(k), static_cast<long>(t)), direct, 1e-12);
        std::vector<ContextObservation> at_t{in.data.at(t, 0), in.data.at(t, 1)};
        EXPECT_NEAR(observation_likelihood(in.params, at_t, k), direct, 1e-12);
      }
    }
  }
}

TEST(Forward, BaseCases) {
  auto in = random_instance(5, 3, 1, 2);
  double expect = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    expect += in.params.pi[static_cast<long>(k)] * static_cast<double>(oracle::mu(in.params, in.data, 0, k));
  }
  EXPECT_NEAR(loglik(in.params, in.data), std::log(expect), 1e-12);

  auto one = random_instance(6, 1, 6, 2);
  double sum = 0.0;
  for (std::size_t t = 0; t < 6; ++t) sum += std::log(static_cast<double>(oracle::mu(one.params, one.data, t, 0)));
  EXPECT_NEAR(loglik(one.params, one.data), sum, 1e-12);
}

TEST(Forward, MatchesPathEnumeration) {
  std::size_t n = 0;
  for (std::size_t K = 1; K <= 3; ++K) {
    for (std::size_t T = 1; T <= 6; ++T) {
      for (std::size_t M = 1; M <= 2; ++M) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          auto in = random_instance(1000 * K + 100 * T + 10 * M + seed, K, T, M);
          const auto c = forward(in.params, in.data);
          EXPECT_NEAR(c.loglik, static_cast<double>(oracle::loglik(in.params, in.data)), 1e-9);
          double from_scale = 0.0;
          for (long t = 0; t < c.log_scale.size(); ++t) from_scale -= c.log_scale[t];
          EXPECT_DOUBLE_EQ(c.loglik, from_scale);
          ++n;
        }
      }
    }
  }
  EXPECT_EQ(n, 108u);
}

TEST(Forward, MatchesUnscaledReferenceOnLongerSequences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = random_instance(seed + 77, 3, 20, 2, 3);
    EXPECT_NEAR(loglik(in.params, in.data),
                static_cast<double>(oracle::unscaled_loglik(in.params, in.data)), 1e-9);
  }
}

TEST(Forward, ImpossibleObservationIsDegenerate) {
  auto in = random_instance(3, 2, 3, 1);
  in.data.sequences[0].observations[1].pairs = {{0, 0}};
  in.params.phi.col(0).setZero();
  EXPECT_THROW(forward(in.params, in.data), DegenerateError);
}

TEST(Backward, TerminationAndConsistency) {
  auto in = random_instance(9, 3, 5, 2);
  auto c = e_step(in.params, in.data);
  EXPECT_TRUE((c.beta_hat.col(4).array() == 1.0).all());
  // unscaled alpha_t . beta_t equals P(O) for every t
  const double P = static_cast<double>(oracle::evidence(in.params, in.data, 5));
  double log_prefix = 0.0;
  for (long t = 0; t < 5; ++t) {
    log_prefix -= c.log_scale[t];
    double log_suffix = 0.0;
    for (long s = t + 1; s < 5; ++s) log_suffix -= c.log_scale[s];
    const double dot = c.alpha_hat.col(t).dot(c.beta_hat.col(t));
    EXPECT_NEAR(std::log(dot) + log_prefix + log_suffix, std::log(P), 1e-9);
  }
  auto one = random_instance(10, 1, 5, 1);
  auto c1 = e_step(one.params, one.data);
  EXPECT_TRUE((c1.beta_hat.array() - 1.0).abs().maxCoeff() < 1e-12);
  EXPECT_TRUE((c1.gamma.array() - 1.0).abs().maxCoeff() < 1e-12);
  for (const auto& x : c1.xi) EXPECT_NEAR(x(0, 0), 1.0, 1e-12);
}

TEST(Posteriors, MatchPathEnumeration) {
  for (std::size_t K = 1; K <= 3; ++K) {
    for (std::size_t T = 1; T <= 5; ++T) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto in = random_instance(seed * 31 + K * 7 + T, K, T, 2);
        auto c = e_step(in.params, in.data);
        const auto g = oracle::gamma(in.params, in.data);
        const auto x = oracle::xi(in.params, in.data);
        for (std::size_t t = 0; t < T; ++t) {
          EXPECT_NEAR(c.gamma.col(static_cast<long>(t)).sum(), 1.0, 1e-12);
          for (std::size_t k = 0; k < K; ++k) {
            EXPECT_NEAR(c.gamma(static_cast<long>(k), static_cast<long>(t)), static_cast<double>(g[t][k]), 1e-9);
          }
        }
        for (std::size_t t = 0; t + 1 < T; ++t) {
          EXPECT_NEAR(c.xi[t].sum(), 1.0, 1e-12);
          for (std::size_t j = 0; j < K; ++j)
            for (std::size_t k = 0; k < K; ++k)
              EXPECT_NEAR(c.xi[t](static_cast<long>(j), static_cast<long>(k)), static_cast<double>(x[t][j][k]), 1e-9);
        }
      }
    }
  }
}

TEST(MStep, NoTransitionsGivesPriorRho) {
  auto in = random_instance(4, 3, 1, 1);
  auto h = default_hyper(3, in.data);
  h.omega(0, 1) = 7.0;
  auto c = e_step(in.params, in.data);
  const auto p = m_step(c.gamma, c.xi, in.data, h);
  for (long j = 0; j < 3; ++j)
    for (long k = 0; k < 3; ++k) EXPECT_NEAR(p.rho(j, k), h.omega(j, k) / h.omega.row(j).sum(), 1e-15);
  p.check();
}

TEST(MStep, HandCountOracle) {
  // M=1, T=3, K=2, uniform gamma, feature 0 present at every t.
  FeatureSchema s;
  s.add("a", {"x", "y"});
  s.add("b", {"p", "q", "r"});
  Dataset d;
  d.schema = s;
  d.user_names = {"A"};
  d.sequences.push_back({0, 3600, {}});
  d.sequences[0].observations = {{0, 0, {{0, 0}, {1, 2}}}, {3600, 0, {{0, 1}}}, {7200, 0, {{0, 0}}}};
  MatrixXd gamma = MatrixXd::Constant(2, 3, 0.5);
  std::vector<MatrixXd> xi(2, MatrixXd::Constant(2, 2, 0.25));
  Hyperparams h = HyperSpec{}.build(2, ValueLayout(s.cardinalities()), {10.0, 1.0});
  const auto p = m_step(gamma, xi, d, h);
  // occupancy per state = 1.5
  EXPECT_NEAR(p.theta(0, 0), (1.5 + 10.0) / (1.5 + 11.0), 1e-15);
  EXPECT_NEAR(p.theta(1, 1), (0.5 + 1.0) / (1.5 + 11.0), 1e-15);
  EXPECT_NEAR(p.phi_at(0, 0, 0), (1.0 + 0.01) / (1.5 + 0.02), 1e-15);
  EXPECT_NEAR(p.phi_at(0, 1, 2), (0.5 + 0.01) / (0.5 + 0.03), 1e-15);
  EXPECT_NEAR(p.pi[0], (0.5 + 0.5) / 2.0, 1e-15);
  EXPECT_NEAR(p.rho(0, 1), (0.5 + 25.0) / (1.0 + 50.0), 1e-15);
}

TEST(MStep, MultiplierAppliesToUsers) {
  FeatureSchema s;
  s.add("a", {"x"});
  Dataset d;
  d.schema = s;
  d.user_names = {"A", "B"};
  for (UserId u = 0; u < 2; ++u) {
    d.sequences.push_back({u, 3600, {}});
    d.sequences[u].observations = {{0, u, {{0, 0}}}, {3600, u, {}}};
  }
  MatrixXd gamma = MatrixXd::Ones(1, 2);
  std::vector<MatrixXd> xi(1, MatrixXd::Ones(1, 1));
  Hyperparams h = HyperSpec{}.build(1, ValueLayout(s.cardinalities()), {1.0});
  const auto p = m_step(gamma, xi, d, h);
  EXPECT_NEAR(p.theta(0, 0), (2.0 + 1.0) / (2.0 * 2.0 + 1.0), 1e-15);
}

TEST(Hyper, DefaultsAndAvailabilityRule) {
  FeatureSchema s;
  s.add("often", {"x"});
  s.add("rare", {"x"});
  Dataset d;
  d.schema = s;
  d.user_names = {"A"};
  d.sequences.push_back({0, 3600, {}});
  for (int t = 0; t < 10; ++t) {
    ContextObservation o{t * 3600, 0, {{0, 0}}};
    if (t < 3) o.set(1, 0);
    d.sequences[0].observations.push_back(o);
  }
  const auto h = HyperSpec{}.build(4, d);
  EXPECT_DOUBLE_EQ(h.eta[0], 0.25);
  EXPECT_DOUBLE_EQ(h.omega(1, 2), 12.5);
  EXPECT_DOUBLE_EQ(h.delta(0, 0), 10.0);
  EXPECT_DOUBLE_EQ(h.delta(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(h.lambda(3, 1), 0.01);
  HyperSpec bad;
  bad.lambda_value = 0.0;
  EXPECT_THROW(bad.build(2, d), RangeError);
}

namespace {

ModelParams two_state_generator(const FeatureSchema& s) {
  auto gen = ModelParams::zeros(2, ValueLayout(s.cardinalities()));
  gen.pi << 0.6, 0.4;
  gen.rho << 0.9, 0.1, 0.2, 0.8;
  gen.theta << 0.9, 0.7, 0.8, 0.95;
  gen.phi << 0.8, 0.1, 0.1, 0.9, 0.1, 0.1, 0.2, 0.7, 0.2, 0.8;
  gen.check();
  return gen;
}

FeatureSchema two_feature_schema() {
  FeatureSchema s;
  s.add("a", {"x", "y", "z"});
  s.add("b", {"p", "q"});
  return s;
}

double log_posterior(const ModelParams& p, const Dataset& d, const Hyperparams& h) {
  double lp = loglik(p, d);
  lp += (h.eta.array() * p.pi.array().log()).sum();
  lp += (h.omega.array() * p.rho.array().log()).sum();
  lp += (h.lambda.array() * p.phi.array().log()).sum();
  return lp;
}

}  // namespace

TEST(Train, RecoversGeneratorWithVanishingPriors) {
  const auto s = two_feature_schema();
  const auto gen = two_state_generator(s);
  const Dataset d = sample(gen, s, 400, 1, 42);
  HyperSpec spec;
  spec.eta_total = spec.omega_total = 2e-9;
  spec.lambda_value = spec.delta_high = spec.delta_low = 1e-9;
  TrainConfig cfg;
  cfg.max_iters = 300;
  cfg.loglik_rel_tol = 1e-10;
  const auto r = em_train(d, 2, spec.build(2, d), cfg);
  EXPECT_GE(r.final_loglik(), loglik(gen, d) - 1e-6);
  r.params.check();
}

TEST(Train, MapAscentWithThetaHeldFixed) {
  const auto s = two_feature_schema();
  const auto gen = two_state_generator(s);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = sample(gen, s, 300, 2, seed);
    const auto h = HyperSpec{}.build(2, d);
    auto p = init_params(2, ValueLayout(s.cardinalities()), h, InitMethod::RandomDirichlet, seed);
    double prev = log_posterior(p, d, h);
    for (int it = 0; it < 40; ++it) {
      const auto c = e_step(p, d);
      const MatrixXd theta = p.theta;
      p = m_step(c.gamma, c.xi, d, h);
      p.theta = theta;
      const double now = log_posterior(p, d, h);
      EXPECT_GE(now, prev - 1e-8) << "seed " << seed << " iteration " << it;
      prev = now;
    }
  }
}

TEST(Train, TraceLayoutAndConvergenceFlag) {
  const auto s = two_feature_schema();
  const Dataset d = sample(two_state_generator(s), s, 300, 1, 1);
  TrainConfig cfg;
  cfg.restarts = 2;
  const auto r = em_train(d, 2, HyperSpec{}.build(2, d), cfg);
  EXPECT_EQ(r.trace.size(), static_cast<std::size_t>(r.iterations) + 1);
  EXPECT_NEAR(r.final_loglik(), loglik(r.params, d), 1e-9);
  EXPECT_EQ(r.restart_logliks.size(), 2u);
  EXPECT_EQ(r.restart_logliks[static_cast<std::size_t>(r.best_restart)], r.final_loglik());
  if (r.converged) {
    const double a = r.trace[r.trace.size() - 2], b = r.trace.back();
    EXPECT_LE(std::abs(b - a), cfg.loglik_rel_tol * std::abs(b));
  }
}

TEST(Train, SingleUserPathIsBitIdentical) {
  auto in = random_instance(12, 2, 60, 3, 3);
  const std::vector<std::size_t> first{0};
  const Dataset one = restrict_users(in.data, first);
  Dataset direct;
  direct.schema = in.data.schema;
  direct.period_seconds = in.data.period_seconds;
  direct.user_names = {in.data.user_names[0]};
  direct.sequences = {in.data.sequences[0]};
  const auto h = default_hyper(2, one);
  TrainConfig cfg;
  const auto a = em_train(one, 2, h, cfg);
  const auto b = em_train(direct, 2, h, cfg);
  EXPECT_EQ(model_io::to_string(a.params), model_io::to_string(b.params));
  EXPECT_EQ(a.trace, b.trace);
}

TEST(Train, DeterministicGivenSeed) {
  auto in = random_instance(13, 3, 80, 2, 3);
  const auto h = default_hyper(3, in.data);
  TrainConfig cfg;
  cfg.seed = 99;
  EXPECT_EQ(em_train(in.data, 3, h, cfg).trace, em_train(in.data, 3, h, cfg).trace);
  cfg.max_iters = 0;
  EXPECT_THROW(em_train(in.data, 3, h, cfg), RangeError);
}

TEST(ModelIo, RoundTripExact) {
  auto in = random_instance(14, 3, 2, 1, 4);
  in.params.users = {"A", "C"};
  const std::string text = model_io::to_string(in.params);
  const auto back = model_io::from_string(text);
  EXPECT_EQ(back.pi, in.params.pi);
  EXPECT_EQ(back.rho, in.params.rho);
  EXPECT_EQ(back.theta, in.params.theta);
  EXPECT_EQ(back.phi, in.params.phi);
  EXPECT_EQ(back.users, in.params.users);
  EXPECT_EQ(model_io::to_string(back), text);
  EXPECT_THROW(model_io::from_string("hcfctx-model 2\n"), ParseError);
  EXPECT_THROW(model_io::from_string("garbage"), ParseError);
}

TEST(Sample, ForcedValuesAndAbsorbingChain) {
  FeatureSchema s;
  s.add("a", {"x"});
  s.add("b", {"y"});
  auto p = ModelParams::zeros(2, ValueLayout(s.cardinalities()));
  p.pi << 0.5, 0.5;
  p.rho.setIdentity();
  p.theta.setOnes();
  p.phi.setOnes();
  const auto r = sample_with_states(p, s, 50, 2, 3);
  for (std::size_t t = 0; t < 50; ++t) {
    EXPECT_EQ(r.states[t], r.states[0]);
    for (std::size_t u = 0; u < 2; ++u) EXPECT_EQ(r.data.at(t, u).size(), 2u);
  }
  validate(r.data);
}

TEST(Sample, TransitionFrequenciesConverge) {
  FeatureSchema s;
  s.add("a", {"x", "y"});
  auto p = ModelParams::zeros(3, ValueLayout(s.cardinalities()));
  p.pi << 0.2, 0.3, 0.5;
  p.rho << 0.7, 0.2, 0.1, 0.3, 0.3, 0.4, 0.05, 0.15, 0.8;
  p.theta.setConstant(0.5);
  p.phi.setConstant(0.5);
  const auto r = sample_with_states(p, s, 50000, 1, 17);
  MatrixXd counts = MatrixXd::Zero(3, 3);
  for (std::size_t t = 1; t < r.states.size(); ++t) counts(static_cast<long>(r.states[t - 1]), static_cast<long>(r.states[t])) += 1;
  for (long j = 0; j < 3; ++j) {
    for (long k = 0; k < 3; ++k) EXPECT_NEAR(counts(j, k) / counts.row(j).sum(), p.rho(j, k), 0.01);
  }
  EXPECT_EQ(model_io::to_string(p), model_io::to_string(p));
  EXPECT_EQ(format_schema(sample(p, s, 10, 1, 5).schema), format_schema(s));
}

namespace {

void expect_stochastic(const ModelParams& p) {
  EXPECT_NEAR(p.pi.sum(), 1.0, 1e-12);
  for (long j = 0; j < p.rho.rows(); ++j) EXPECT_NEAR(p.rho.row(j).sum(), 1.0, 1e-12);
  for (std::size_t k = 0; k < p.num_states(); ++k) {
    for (std::size_t f = 0; f < p.layout.num_features(); ++f) {
      const double th = p.theta(static_cast<long>(k), static_cast<long>(f));
      EXPECT_GT(th, 0.0);
      EXPECT_LT(th, 1.0);
      EXPECT_NEAR(p.phi_block(k, f).sum(), 1.0, 1e-12);
      EXPECT_GT(p.phi_block(k, f).minCoeff(), 0.0);
    }
  }
}

}  // namespace

TEST(InitFromData, StochasticAndDeterministic) {
  auto in = random_instance(41, 3, 60, 2);
  const auto a = init_from_data(4, in.data, 9);
  expect_stochastic(a);
  EXPECT_EQ(model_io::to_string(a), model_io::to_string(init_from_data(4, in.data, 9)));
  EXPECT_THROW(init_from_data(0, in.data, 9), RangeError);
}

TEST(InitFromData, SeedsDistinctProfiles) {
  FeatureSchema s;
  s.add("a", {"x", "y"});
  Dataset d;
  d.schema = s;
  d.user_names = {"u0"};
  d.sequences.push_back(ObservationSequence{0, 3600, {}});
  for (std::size_t t = 0; t < 40; ++t) {
    d.sequences[0].observations.push_back(
        {static_cast<utc::Seconds>(t * 3600), 0, {{0, static_cast<ValueId>(t < 20 ? 0 : 1)}}});
  }
  const auto p = init_from_data(2, d, 3);
  // both values must be represented by some state
  EXPECT_NE(p.phi(0, 0) > 0.5, p.phi(1, 0) > 0.5);
}

TEST(Synthetic, ShapeOfGenerator) {
  FeatureSchema s;
  s.add("a", {"p", "q", "r", "s", "t"});
  s.add("b", {"x", "y"});
  SyntheticSpec spec;
  spec.stay = 0.7;
  spec.advance = 0.9;
  spec.peak = 0.9;
  const auto p = synthetic_model(5, ValueLayout(s.cardinalities()), spec, 4);
  expect_stochastic(p);
  for (long j = 0; j < 5; ++j) {
    EXPECT_NEAR(p.rho(j, j), 0.7, 1e-12);
    EXPECT_GE(p.rho(j, (j + 1) % 5), 0.9 * 0.3 - 1e-12);
  }
  std::vector<int> hot;
  for (std::size_t k = 0; k < 5; ++k) {
    Eigen::Index v = 0;
    EXPECT_NEAR(p.phi_block(k, 0).maxCoeff(&v), 0.9, 1e-12);
    hot.push_back(static_cast<int>(v));
  }
  std::sort(hot.begin(), hot.end());
  EXPECT_EQ(std::unique(hot.begin(), hot.end()), hot.end());
  spec.advance = 1.5;
  EXPECT_THROW(synthetic_model(5, ValueLayout(s.cardinalities()), spec, 4), RangeError);
}

TEST(Synthetic, PlantedUsersShareTheChain) {
  FeatureSchema s;
  s.add("a", {"x", "y", "z"});
  auto p = ModelParams::zeros(3, ValueLayout(s.cardinalities()));
  p.pi.setConstant(1.0 / 3);
  p.rho.setConstant(1.0 / 3);
  p.theta.setOnes();
  p.phi.setIdentity();
  const auto d = sample_planted(p, s, 200, 2, 1, 5);
  ASSERT_EQ(d.num_users(), 3u);
  validate(d);
  std::size_t agree_shared = 0, agree_indep = 0;
  for (std::size_t t = 0; t < 200; ++t) {
    agree_shared += d.at(t, 0).pairs == d.at(t, 1).pairs;
    agree_indep += d.at(t, 0).pairs == d.at(t, 2).pairs;
  }
  EXPECT_EQ(agree_shared, 200u);
  EXPECT_LT(agree_indep, 120u);
}
