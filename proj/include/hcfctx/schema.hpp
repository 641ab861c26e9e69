#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hcfctx/errors.hpp"
#include "hcfctx/time.hpp"

namespace hcfctx {

using FeatureId = std::uint16_t;
using ValueId = std::uint32_t;
using UserId = std::uint32_t;

struct FeatureDef {
  FeatureId id = 0;  // 0-based position in the schema
  std::string name;
  std::vector<std::string> value_names;

  std::size_t cardinality() const { return value_names.size(); }
};

/// The feature-value vocabulary shared by every user.
class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<FeatureDef> features) {
    for (auto& f : features) add(std::move(f.name), std::move(f.value_names));
  }

  FeatureId add(std::string name, std::vector<std::string> value_names) {
    if (name.empty()) throw SchemaError("feature name must be non-empty");
    if (value_names.empty()) throw SchemaError("feature '" + name + "' has no values");
    if (by_name_.contains(name)) throw SchemaError("duplicate feature '" + name + "'");
    std::unordered_map<std::string, ValueId> index;
    for (std::size_t v = 0; v < value_names.size(); ++v) {
      if (!index.emplace(value_names[v], static_cast<ValueId>(v)).second) {
        throw SchemaError("duplicate value '" + value_names[v] + "' in feature '" + name +
                          "'");
      }
    }
    const auto id = static_cast<FeatureId>(features_.size());
    by_name_.emplace(name, id);
    value_index_.push_back(std::move(index));
    features_.push_back(FeatureDef{id, std::move(name), std::move(value_names)});
    return id;
  }

  std::size_t size() const { return features_.size(); }
  const FeatureDef& operator[](std::size_t f) const { return features_.at(f); }
  const std::vector<FeatureDef>& features() const { return features_; }

  std::vector<std::size_t> cardinalities() const {
    std::vector<std::size_t> v;
    v.reserve(features_.size());
    for (const auto& f : features_) v.push_back(f.cardinality());
    return v;
  }

  std::optional<FeatureId> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  // Case-, space- and underscore-insensitive lookup ("Day Period" == "day_period").
  std::optional<FeatureId> find_loose(std::string_view name) const {
    const auto key = loose_key(name);
    for (const auto& f : features_) {
      if (loose_key(f.name) == key) return f.id;
    }
    return std::nullopt;
  }

  FeatureId require(std::string_view name) const {
    if (auto f = find(name)) return *f;
    throw SchemaError("unknown feature '" + std::string(name) + "'");
  }

  std::optional<ValueId> find_value(FeatureId f, std::string_view value) const {
    const auto& index = value_index_.at(f);
    auto it = index.find(std::string(value));
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  ValueId require_value(FeatureId f, std::string_view value) const {
    if (auto v = find_value(f, value)) return *v;
    throw SchemaError("value '" + std::string(value) + "' not in vocabulary of feature '" +
                      features_.at(f).name + "'");
  }

  bool operator==(const FeatureSchema& other) const {
    if (features_.size() != other.features_.size()) return false;
    for (std::size_t f = 0; f < features_.size(); ++f) {
      if (features_[f].name != other.features_[f].name ||
          features_[f].value_names != other.features_[f].value_names) {
        return false;
      }
    }
    return true;
  }

  static std::string loose_key(std::string_view name) {
    std::string out;
    for (char ch : name) {
      if (ch == ' ' || ch == '_' || ch == '-') continue;
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    return out;
  }

 private:
  std::vector<FeatureDef> features_;
  std::unordered_map<std::string, FeatureId> by_name_;
  std::vector<std::unordered_map<std::string, ValueId>> value_index_;
};

// One line per feature: `name:cardinality:v1|v2|...`. Blank lines and lines
// starting with '#' are ignored.
inline FeatureSchema parse_schema(std::istream& in) {
  FeatureSchema schema;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto c1 = line.find(':');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(':', c1 + 1);
    if (c2 == std::string::npos) {
      throw ParseError("schema line " + std::to_string(lineno) + ": expected name:cardinality:values");
    }
    std::string name = line.substr(0, c1);
    std::size_t card = 0;
    try {
      card = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw ParseError("schema line " + std::to_string(lineno) + ": bad cardinality");
    }
    std::vector<std::string> values;
    std::string rest = line.substr(c2 + 1);
    std::size_t start = 0;
    while (start <= rest.size()) {
      const auto bar = rest.find('|', start);
      values.push_back(rest.substr(start, bar == std::string::npos ? std::string::npos
                                                                   : bar - start));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    if (values.size() != card) {
      throw SchemaError("schema line " + std::to_string(lineno) + ": feature '" + name +
                        "' declares " + std::to_string(card) + " values but lists " +
                        std::to_string(values.size()));
    }
    schema.add(std::move(name), std::move(values));
  }
  return schema;
}

inline FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path);
  return parse_schema(in);
}

inline std::string format_schema(const FeatureSchema& schema) {
  std::ostringstream out;
  for (const auto& f : schema.features()) {
    out << f.name << ':' << f.cardinality() << ':';
    for (std::size_t v = 0; v < f.value_names.size(); ++v) {
      if (v) out << '|';
      out << f.value_names[v];
    }
    out << '\n';
  }
  return out.str();
}

/// The feature-value pairs one user reported in one time slot.
struct ContextObservation {
  utc::Seconds timestamp = 0;
  UserId user = 0;
  // Sorted by feature id; each feature at most once. Empty = nothing observed.
  std::vector<std::pair<FeatureId, ValueId>> pairs;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }

  std::optional<ValueId> value_of(FeatureId f) const {
    auto it = std::lower_bound(pairs.begin(), pairs.end(), f,
                               [](const auto& p, FeatureId id) { return p.first < id; });
    if (it == pairs.end() || it->first != f) return std::nullopt;
    return it->second;
  }

  void set(FeatureId f, ValueId v) {
    auto it = std::lower_bound(pairs.begin(), pairs.end(), f,
                               [](const auto& p, FeatureId id) { return p.first < id; });
    if (it != pairs.end() && it->first == f) {
      it->second = v;
    } else {
      pairs.insert(it, {f, v});
    }
  }

  bool operator==(const ContextObservation&) const = default;
};

inline void validate(const ContextObservation& obs, const FeatureSchema& schema) {
  for (std::size_t i = 0; i < obs.pairs.size(); ++i) {
    const auto [f, v] = obs.pairs[i];
    if (f >= schema.size()) throw SchemaError("feature id out of range");
    if (v >= schema[f].cardinality()) {
      throw SchemaError("value id out of range for feature '" + schema[f].name + "'");
    }
    if (i > 0 && obs.pairs[i - 1].first >= f) {
      throw SchemaError("pairs must be sorted with unique features");
    }
  }
}

struct ObservationSequence {
  UserId user = 0;
  utc::Seconds period_seconds = 3600;
  std::vector<ContextObservation> observations;

  std::size_t length() const { return observations.size(); }
};

/// Aligned observation sequences of M users over the same T time slots.
struct Dataset {
  FeatureSchema schema;
  std::vector<std::string> user_names;
  utc::Seconds period_seconds = 3600;
  std::vector<ObservationSequence> sequences;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t length() const {
    return sequences.empty() ? 0 : sequences.front().observations.size();
  }
  utc::Seconds timestamp(std::size_t t) const {
    return sequences.front().observations.at(t).timestamp;
  }
  const ContextObservation& at(std::size_t t, std::size_t u) const {
    return sequences[u].observations[t];
  }

  std::optional<std::size_t> find_user(std::string_view name) const {
    for (std::size_t u = 0; u < user_names.size(); ++u) {
      if (user_names[u] == name) return u;
    }
    return std::nullopt;
  }

  std::size_t require_user(std::string_view name) const {
    if (auto u = find_user(name)) return *u;
    throw SchemaError("unknown user '" + std::string(name) + "'");
  }

  // Number of present feature instances over all users in [begin, end).
  std::size_t count_instances(std::size_t begin, std::size_t end) const {
    std::size_t n = 0;
    for (const auto& seq : sequences) {
      for (std::size_t t = begin; t < end; ++t) n += seq.observations[t].size();
    }
    return n;
  }
};

inline void validate(const Dataset& d) {
  if (d.user_names.size() != d.sequences.size()) {
    throw AlignmentError("user name count does not match sequence count");
  }
  const std::size_t T = d.length();
  for (std::size_t u = 0; u < d.sequences.size(); ++u) {
    const auto& seq = d.sequences[u];
    if (seq.observations.size() != T) throw AlignmentError("sequences differ in length");
    for (std::size_t t = 0; t < T; ++t) {
      const auto& obs = seq.observations[t];
      validate(obs, d.schema);
      if (obs.timestamp != d.sequences[0].observations[t].timestamp) {
        throw AlignmentError("sequences do not share timestamps");
      }
      if (t > 0 && obs.timestamp - seq.observations[t - 1].timestamp != d.period_seconds) {
        throw AlignmentError("timestamps are not spaced by the sampling period");
      }
    }
  }
}

/// Sub-dataset with the given users (in the given order); user ids are renumbered.
inline Dataset restrict_users(const Dataset& d, std::span<const std::size_t> users) {
  Dataset out;
  out.schema = d.schema;
  out.period_seconds = d.period_seconds;
  for (std::size_t i = 0; i < users.size(); ++i) {
    out.user_names.push_back(d.user_names.at(users[i]));
    ObservationSequence seq = d.sequences.at(users[i]);
    seq.user = static_cast<UserId>(i);
    for (auto& obs : seq.observations) obs.user = static_cast<UserId>(i);
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

/// Time slots [begin, end) of every user.
inline Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  Dataset out;
  out.schema = d.schema;
  out.period_seconds = d.period_seconds;
  out.user_names = d.user_names;
  for (const auto& seq : d.sequences) {
    ObservationSequence s{seq.user, seq.period_seconds, {}};
    s.observations.assign(seq.observations.begin() + static_cast<std::ptrdiff_t>(begin),
                          seq.observations.begin() + static_cast<std::ptrdiff_t>(end));
    out.sequences.push_back(std::move(s));
  }
  return out;
}

// Appends b's slots after a's. The result is used as one training sequence
// even when the two spans were not adjacent in time.
inline Dataset concatenate(const Dataset& a, const Dataset& b) {
  if (a.num_users() != b.num_users()) throw AlignmentError("user sets differ");
  Dataset out = a;
  for (std::size_t u = 0; u < out.sequences.size(); ++u) {
    auto& dst = out.sequences[u].observations;
    dst.insert(dst.end(), b.sequences[u].observations.begin(),
               b.sequences[u].observations.end());
  }
  return out;
}

}  // namespace hcfctx
