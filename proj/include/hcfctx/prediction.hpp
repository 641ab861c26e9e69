#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hcfctx/context_log.hpp"
#include "hcfctx/errors.hpp"
#include "hcfctx/hmm.hpp"
#include "hcfctx/model.hpp"
#include "hcfctx/schema.hpp"

namespace hcfctx {

/// Normalized filtered posterior p(c_t | o_{begin..t}) for t = end-1. The
/// recursion restarts from pi at `begin`.
inline VectorXd filter_posterior(const ModelParams& p, const Dataset& d, std::size_t begin,
                                 std::size_t end) {
  if (end <= begin || end > d.length()) throw RangeError("filter_posterior needs a non-empty prefix");
  const auto K = static_cast<Eigen::Index>(p.num_states());
  const MatrixXd log_theta = p.theta.array().log().matrix();
  const MatrixXd log_phi = p.phi.array().log().matrix();
  VectorXd a = p.pi;
  for (std::size_t t = begin; t < end; ++t) {
    VectorXd lm = VectorXd::Zero(K);
    for (const auto& seq : d.sequences) {
      for (const auto& [f, v] : seq.observations[t].pairs) {
        lm += log_theta.col(f);
        lm += log_phi.col(static_cast<Eigen::Index>(p.layout.offset(f) + v));
      }
    }
    const double m = lm.maxCoeff();
    if (!std::isfinite(m)) throw DegenerateError("observation impossible under every state");
    VectorXd prior = t == begin ? VectorXd(p.pi) : VectorXd(p.rho.transpose() * a);
    VectorXd next = prior.cwiseProduct((lm.array() - m).exp().matrix());
    const double s = next.sum();
    if (!(s > 0.0)) throw DegenerateError("filtered posterior column is all zero");
    a = next / s;
  }
  return a;
}

inline VectorXd filter_posterior(const ModelParams& p, const Dataset& d) {
  return filter_posterior(p, d, 0, d.length());
}

struct FeaturePrediction {
  double presence = 0.0;
  std::vector<double> values;
  std::size_t point = 0;  // argmax of values, lowest index on ties

  bool predicted_present() const { return presence >= 0.5; }
  double point_prob() const { return values.at(point); }
};

struct FeatureForecast {
  utc::Seconds timestamp = 0;
  std::vector<FeaturePrediction> per_feature;
};

namespace detail {

inline std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace detail

/// Feature and value predictive under a state distribution.
inline FeatureForecast forecast_from_states(const ModelParams& p, const VectorXd& state,
                                            utc::Seconds ts) {
  FeatureForecast fc;
  fc.timestamp = ts;
  for (std::size_t f = 0; f < p.num_features(); ++f) {
    FeaturePrediction fp;
    fp.presence = state.dot(p.theta.col(static_cast<Eigen::Index>(f)));
    const auto off = static_cast<Eigen::Index>(p.layout.offset(f));
    const auto V = static_cast<Eigen::Index>(p.layout.cardinality(f));
    const VectorXd vals = p.phi.middleCols(off, V).transpose() * state;
    fp.values.assign(vals.data(), vals.data() + vals.size());
    fp.point = detail::argmax(fp.values);
    fc.per_feature.push_back(std::move(fp));
  }
  return fc;
}

inline utc::Seconds next_timestamp(const Dataset& d, std::size_t end, std::size_t h) {
  return d.timestamp(end - 1) + static_cast<utc::Seconds>(h) * d.period_seconds;
}

/// Forecasts for slots end, end+1, ..., end+h-1 given o_{begin..end-1}; the
/// state predictive is propagated through rho only.
inline std::vector<FeatureForecast> predict_horizon(const ModelParams& p, const Dataset& d,
                                                    std::size_t begin, std::size_t end,
                                                    std::size_t h) {
  if (h < 1) throw RangeError("horizon must be >= 1");
  VectorXd state = filter_posterior(p, d, begin, end);
  std::vector<FeatureForecast> out;
  for (std::size_t i = 1; i <= h; ++i) {
    state = p.rho.transpose() * state;
    out.push_back(forecast_from_states(p, state, next_timestamp(d, end, i)));
  }
  return out;
}

inline FeatureForecast predict_next(const ModelParams& p, const Dataset& d, std::size_t begin,
                                    std::size_t end) {
  return predict_horizon(p, d, begin, end, 1).front();
}

inline FeatureForecast predict_next(const ModelParams& p, const Dataset& d) {
  return predict_next(p, d, 0, d.length());
}

/// Unweighted mean of presence probabilities and value distributions.
inline FeatureForecast combine_models(std::span<const FeatureForecast> forecasts) {
  if (forecasts.empty()) throw SchemaError("no forecasts to combine");
  FeatureForecast out = forecasts.front();
  for (std::size_t i = 1; i < forecasts.size(); ++i) {
    const auto& fc = forecasts[i];
    if (fc.per_feature.size() != out.per_feature.size()) {
      throw SchemaError("forecasts have different feature counts");
    }
    for (std::size_t f = 0; f < fc.per_feature.size(); ++f) {
      if (fc.per_feature[f].values.size() != out.per_feature[f].values.size()) {
        throw SchemaError("forecasts have different vocabularies for feature " + std::to_string(f));
      }
      out.per_feature[f].presence += fc.per_feature[f].presence;
      for (std::size_t v = 0; v < fc.per_feature[f].values.size(); ++v) {
        out.per_feature[f].values[v] += fc.per_feature[f].values[v];
      }
    }
  }
  const double n = static_cast<double>(forecasts.size());
  for (auto& fp : out.per_feature) {
    fp.presence /= n;
    for (auto& x : fp.values) x /= n;
    fp.point = detail::argmax(fp.values);
  }
  return out;
}

enum class Grade { Excellent, Good, Bad, Empty };

inline const char* grade_name(Grade g) {
  switch (g) {
    case Grade::Excellent: return "Excellent";
    case Grade::Good: return "Good";
    case Grade::Bad: return "Bad";
    case Grade::Empty: return "Empty";
  }
  return "?";
}

struct PredictionGrade {
  std::size_t correct_count = 0;
  Grade grade = Grade::Empty;
};

inline Grade grade_of(std::size_t correct) {
  if (correct >= 7) return Grade::Excellent;
  if (correct >= 4) return Grade::Good;
  if (correct >= 1) return Grade::Bad;
  return Grade::Empty;
}

/// Scores only the features present in `truth`.
inline PredictionGrade grade(const FeatureForecast& fc, const ContextObservation& truth) {
  PredictionGrade g;
  for (const auto& [f, v] : truth.pairs) {
    if (f < fc.per_feature.size() && fc.per_feature[f].point == v) ++g.correct_count;
  }
  g.grade = grade_of(g.correct_count);
  return g;
}

// ---- evaluation protocol ----------------------------------------------------

/// Sub-dataset holding the users a model was trained on (by name, in the
/// model's order). Models without a user list use `fallback`.
inline Dataset users_for_model(const ModelParams& p, const Dataset& d,
                               std::span<const std::string> fallback) {
  const auto& names = p.users.empty() ? std::vector<std::string>(fallback.begin(), fallback.end())
                                      : p.users;
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(d.require_user(n));
  return restrict_users(d, idx);
}

struct EvalConfig {
  std::size_t window = 24;  // prefix length in slots
  std::size_t stride = 3;   // slots between prediction targets
  std::size_t begin = 0;    // first slot usable as prefix
  std::size_t end = 0;      // one past the last target slot; 0 = dataset end
};

struct EvalRecord {
  std::size_t target = 0;
  FeatureForecast forecast;
  ContextObservation truth;
  PredictionGrade grade;
};

/// Predicts the target user's slot every `stride` slots from the preceding
/// `window` slots, averaging the forecasts of all models.
inline std::vector<EvalRecord> evaluate(std::span<const ModelParams> models, const Dataset& d,
                                        const std::string& target_user, const EvalConfig& cfg) {
  if (models.empty()) throw RangeError("no models to evaluate");
  if (cfg.window < 1 || cfg.stride < 1) throw RangeError("window and stride must be >= 1");
  const std::size_t u = d.require_user(target_user);
  const std::vector<std::string> only{target_user};
  std::vector<Dataset> views;
  for (const auto& m : models) {
    if (m.layout.cardinalities() != d.schema.cardinalities()) {
      throw SchemaError("model vocabulary does not match the dataset schema");
    }
    views.push_back(users_for_model(m, d, only));
  }
  const std::size_t end = cfg.end == 0 ? d.length() : std::min(cfg.end, d.length());
  std::vector<EvalRecord> out;
  for (std::size_t target = cfg.begin + cfg.window; target < end; target += cfg.stride) {
    std::vector<FeatureForecast> fcs;
    for (std::size_t m = 0; m < models.size(); ++m) {
      fcs.push_back(predict_next(models[m], views[m], target - cfg.window, target));
    }
    EvalRecord r;
    r.target = target;
    r.forecast = combine_models(fcs);
    r.truth = d.at(target, u);
    r.grade = grade(r.forecast, r.truth);
    out.push_back(std::move(r));
  }
  return out;
}

struct FeatureAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Argmax accuracy per feature over records where the truth has the feature.
inline std::vector<FeatureAccuracy> feature_accuracy(std::span<const EvalRecord> records,
                                                     std::size_t num_features) {
  std::vector<FeatureAccuracy> acc(num_features);
  for (const auto& r : records) {
    for (const auto& [f, v] : r.truth.pairs) {
      ++acc[f].total;
      if (r.forecast.per_feature[f].point == v) ++acc[f].correct;
    }
  }
  return acc;
}

inline std::size_t time_of_day_bin(utc::Seconds ts) {
  return static_cast<std::size_t>(utc::hour_of_day(ts) / 3);
}

// timestamp,feature,pred_value,prob,truth,correct
inline void write_forecast_csv(std::ostream& out, std::span<const EvalRecord> records,
                               const FeatureSchema& schema) {
  out << "timestamp,feature,pred_value,prob,truth,correct\n";
  char buf[32];
  for (const auto& r : records) {
    for (std::size_t f = 0; f < schema.size(); ++f) {
      const auto& fp = r.forecast.per_feature[f];
      std::snprintf(buf, sizeof buf, "%.6f", fp.point_prob());
      const auto truth = r.truth.value_of(static_cast<FeatureId>(f));
      out << utc::format_iso8601(r.forecast.timestamp) << ',' << csv::escape(schema[f].name) << ','
          << csv::escape(schema[f].value_names[fp.point]) << ',' << buf << ',';
      if (truth) {
        out << csv::escape(schema[f].value_names[*truth]) << ',' << (*truth == fp.point ? 1 : 0);
      } else {
        out << ',';
      }
      out << '\n';
    }
  }
}

// feature,time_of_day,correct,total,accuracy with eight 3-hour bins per feature.
inline void write_accuracy_csv(std::ostream& out, std::span<const EvalRecord> records,
                               const FeatureSchema& schema) {
  std::vector<std::array<FeatureAccuracy, 8>> acc(schema.size());
  for (const auto& r : records) {
    const auto bin = time_of_day_bin(r.forecast.timestamp);
    for (const auto& [f, v] : r.truth.pairs) {
      ++acc[f][bin].total;
      if (r.forecast.per_feature[f].point == v) ++acc[f][bin].correct;
    }
  }
  out << "feature,time_of_day,correct,total,accuracy\n";
  char buf[32];
  for (std::size_t f = 0; f < schema.size(); ++f) {
    for (std::size_t b = 0; b < 8; ++b) {
      std::snprintf(buf, sizeof buf, "%.6f", acc[f][b].rate());
      char hh[8];
      std::snprintf(hh, sizeof hh, "%02zu:00", b * 3);
      out << csv::escape(schema[f].name) << ',' << hh << ',' << acc[f][b].correct << ','
          << acc[f][b].total << ',' << buf << '\n';
    }
  }
}

// key_type,key,excellent,good,bad,empty,graded keyed by 3-hour time of day
// and by weekday.
inline void write_grade_csv(std::ostream& out, std::span<const EvalRecord> records) {
  static const char* days[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  std::array<std::array<std::size_t, 4>, 8> by_time{};
  std::array<std::array<std::size_t, 4>, 7> by_day{};
  for (const auto& r : records) {
    const auto g = static_cast<std::size_t>(r.grade.grade);
    ++by_time[time_of_day_bin(r.forecast.timestamp)][g];
    ++by_day[static_cast<std::size_t>(utc::weekday(r.forecast.timestamp))][g];
  }
  out << "key_type,key,excellent,good,bad,empty,graded\n";
  auto row = [&](const char* type, const std::string& key, const std::array<std::size_t, 4>& c) {
    out << type << ',' << key << ',' << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3] << ','
        << c[0] + c[1] + c[2] << '\n';
  };
  for (std::size_t b = 0; b < 8; ++b) {
    char hh[8];
    std::snprintf(hh, sizeof hh, "%02zu:00", b * 3);
    row("time_of_day", hh, by_time[b]);
  }
  for (std::size_t d = 0; d < 7; ++d) row("day_of_week", days[d], by_day[d]);
}

}  // namespace hcfctx
