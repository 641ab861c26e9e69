#include <gtest/gtest.h>

#include <sstream>

#include "hcfctx/prediction.hpp"
#include "oracles.hpp"

using namespace hcfctx;

namespace {

struct Instance {
  FeatureSchema schema;
  ModelParams params;
  Dataset data;
};

Instance random_instance(std::uint64_t seed, std::size_t K, std::size_t T, std::size_t M) {
  Rng rng(seed);
  Instance in;
  in.schema = oracle::random_schema(rng, 2, 3);
  in.params = oracle::random_params(rng, K, in.schema);
  in.data = oracle::random_dataset(rng, in.schema, T, M);
  return in;
}

FeatureForecast two_value_forecast(double a) {
  FeatureForecast fc;
  FeaturePrediction fp;
  fp.presence = 0.9;
  fp.values = {a, 1.0 - a};
  fp.point = a >= 0.5 ? 0 : 1;
  fc.per_feature.push_back(fp);
  return fc;
}

}  // namespace

TEST(Filter, SingleStateAndPriorPassThrough) {
  auto in = random_instance(1, 1, 4, 1);
  for (std::size_t t = 1; t <= 4; ++t) EXPECT_NEAR(filter_posterior(in.params, in.data, 0, t)[0], 1.0, 1e-15);
  auto two = random_instance(2, 3, 1, 1);
  two.data.sequences[0].observations[0].pairs.clear();
  const VectorXd a = filter_posterior(two.params, two.data);
  for (long k = 0; k < 3; ++k) EXPECT_NEAR(a[k], two.params.pi[k], 1e-15);
}

TEST(Filter, MatchesEnumeration) {
  for (std::size_t K = 1; K <= 3; ++K) {
    for (std::size_t T = 1; T <= 5; ++T) {
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto in = random_instance(seed * 97 + K * 11 + T, K, T, 2);
        for (std::size_t t = 0; t < T; ++t) {
          const VectorXd a = filter_posterior(in.params, in.data, 0, t + 1);
          const auto ref = oracle::filtered(in.params, in.data, t);
          for (std::size_t k = 0; k < K; ++k) EXPECT_NEAR(a[static_cast<long>(k)], static_cast<double>(ref[k]), 1e-9);
        }
      }
    }
  }
}

TEST(Predict, MatchesEnumeration) {
  for (std::size_t K = 1; K <= 3; ++K) {
    for (std::size_t T = 1; T <= 4; ++T) {
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto in = random_instance(seed * 13 + K * 5 + T * 101, K, T, 2);
        for (std::size_t h = 1; h <= 2; ++h) {
          const auto fcs = predict_horizon(in.params, in.data, 0, T, h);
          const auto ref = oracle::predictive(in.params, in.data, T - 1, h);
          const auto& fc = fcs[h - 1];
          for (std::size_t f = 0; f < in.schema.size(); ++f) {
            EXPECT_NEAR(fc.per_feature[f].presence, static_cast<double>(ref.presence[f]), 1e-9);
            double total = 0.0;
            for (std::size_t v = 0; v < ref.values[f].size(); ++v) {
              EXPECT_NEAR(fc.per_feature[f].values[v], static_cast<double>(ref.values[f][v]), 1e-9);
              total += fc.per_feature[f].values[v];
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
          }
        }
        const auto one = predict_next(in.params, in.data);
        const auto h1 = predict_horizon(in.params, in.data, 0, T, 1);
        EXPECT_EQ(one.per_feature[0].values, h1[0].per_feature[0].values);
        EXPECT_EQ(one.timestamp, in.data.timestamp(T - 1) + 3600);
      }
    }
  }
}

TEST(Predict, FrozenStateReproducesEmission) {
  auto in = random_instance(3, 3, 3, 1);
  in.params.rho.setIdentity();
  in.params.pi << 0.0, 1.0, 0.0;
  const auto fc = predict_next(in.params, in.data);
  for (std::size_t f = 0; f < in.schema.size(); ++f) {
    EXPECT_EQ(fc.per_feature[f].presence, in.params.theta(1, static_cast<long>(f)));
    for (std::size_t v = 0; v < fc.per_feature[f].values.size(); ++v) {
      EXPECT_EQ(fc.per_feature[f].values[v], in.params.phi_at(1, f, v));
    }
  }
}

TEST(Predict, UniformRhoMixesInOneStep) {
  auto in = random_instance(4, 3, 3, 1);
  in.params.rho.setConstant(1.0 / 3.0);
  const auto fcs = predict_horizon(in.params, in.data, 0, 3, 4);
  for (std::size_t h = 1; h < 4; ++h) {
    for (std::size_t f = 0; f < in.schema.size(); ++f) {
      EXPECT_NEAR(fcs[h].per_feature[f].presence, fcs[0].per_feature[f].presence, 1e-15);
    }
  }
  EXPECT_THROW(predict_horizon(in.params, in.data, 0, 3, 0), RangeError);
}

TEST(Combine, ArithmeticAndIdempotence) {
  const std::vector<FeatureForecast> two{two_value_forecast(0.6), two_value_forecast(0.2)};
  const auto c = combine_models(two);
  EXPECT_NEAR(c.per_feature[0].values[0], 0.4, 1e-15);
  EXPECT_NEAR(c.per_feature[0].values[1], 0.6, 1e-15);
  EXPECT_EQ(c.per_feature[0].point, 1u);
  const std::vector<FeatureForecast> same{two_value_forecast(0.7), two_value_forecast(0.7)};
  EXPECT_EQ(combine_models(same).per_feature[0].values, same[0].per_feature[0].values);
  auto bad = two_value_forecast(0.5);
  bad.per_feature[0].values.push_back(0.0);
  const std::vector<FeatureForecast> mismatched{two_value_forecast(0.5), bad};
  EXPECT_THROW(combine_models(mismatched), SchemaError);
}

TEST(Combine, ArgmaxInvariantToCommonScaling) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<FeatureForecast> fcs;
    for (int m = 0; m < 3; ++m) fcs.push_back(two_value_forecast(rng.uniform()));
    auto scaled = fcs;
    const double s = 0.1 + 10 * rng.uniform();
    for (auto& fc : scaled)
      for (auto& x : fc.per_feature[0].values) x *= s;
    EXPECT_EQ(combine_models(fcs).per_feature[0].point, combine_models(scaled).per_feature[0].point);
    const auto combined = combine_models(fcs);
    double total = 0.0;
    for (double x : combined.per_feature[0].values) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Grade, Categories) {
  FeatureForecast fc;
  for (int f = 0; f < 9; ++f) {
    FeaturePrediction fp;
    fp.values = {0.7, 0.3};
    fp.point = 0;
    fc.per_feature.push_back(fp);
  }
  auto truth_with = [](int correct) {
    ContextObservation o;
    for (int f = 0; f < 9; ++f) o.pairs.emplace_back(static_cast<FeatureId>(f), f < correct ? 0u : 1u);
    return o;
  };
  EXPECT_EQ(grade(fc, truth_with(9)).grade, Grade::Excellent);
  EXPECT_EQ(grade(fc, truth_with(8)).grade, Grade::Excellent);
  EXPECT_EQ(grade(fc, truth_with(7)).grade, Grade::Excellent);
  EXPECT_EQ(grade(fc, truth_with(6)).grade, Grade::Good);
  EXPECT_EQ(grade(fc, truth_with(6)).correct_count, 6u);
  EXPECT_EQ(grade(fc, truth_with(4)).grade, Grade::Good);
  EXPECT_EQ(grade(fc, truth_with(3)).grade, Grade::Bad);
  EXPECT_EQ(grade(fc, truth_with(1)).grade, Grade::Bad);
  EXPECT_EQ(grade(fc, truth_with(0)).grade, Grade::Empty);
  EXPECT_EQ(grade(fc, ContextObservation{}).grade, Grade::Empty);
  for (int c = 0; c < 9; ++c) {
    EXPECT_LE(static_cast<int>(grade(fc, truth_with(c + 1)).grade), static_cast<int>(grade(fc, truth_with(c)).grade));
  }
}

TEST(Evaluate, ProtocolShapesAndEnsemble) {
  Rng rng(8);
  FeatureSchema s;
  s.add("a", {"x", "y"});
  s.add("b", {"p", "q", "r"});
  auto in = oracle::random_params(rng, 2, s);
  Dataset d = sample(in, s, 24 * 4, 2, 3);
  in.users = {"A"};
  auto pair = in;
  pair.users = {"A", "B"};
  const std::vector<ModelParams> models{in, pair};
  EvalConfig cfg;
  const auto recs = evaluate(models, d, "A", cfg);
  ASSERT_EQ(recs.size(), 24u);
  EXPECT_EQ(recs.front().target, 24u);
  EXPECT_EQ(recs[1].target, 27u);
  std::ostringstream acc, grades, fc;
  write_accuracy_csv(acc, recs, s);
  write_grade_csv(grades, recs);
  write_forecast_csv(fc, recs, s);
  std::size_t lines = 0;
  for (char ch : acc.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + 8 * s.size());
  lines = 0;
  for (char ch : grades.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 8u + 7u);
  EXPECT_EQ(fc.str().substr(0, 43), "timestamp,feature,pred_value,prob,truth,cor");
  const auto single = evaluate(std::span<const ModelParams>(models.data(), 1), d, "A", cfg);
  const auto again = evaluate(std::span<const ModelParams>(models.data(), 1), d, "A", cfg);
  EXPECT_EQ(single.front().forecast.per_feature[0].values, again.front().forecast.per_feature[0].values);
  EXPECT_THROW(evaluate(models, d, "Z", cfg), SchemaError);
}
