#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hcfctx/errors.hpp"
#include "hcfctx/schema.hpp"
#include "hcfctx/time.hpp"

// Context log CSV:
//   timestamp,user,<feature_name>...
// one row per (timestamp, user), ISO-8601 UTC timestamps, empty cell = feature
// absent. Users' clocks must already be aligned to a common grid.
namespace hcfctx {

namespace csv {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  if (quoted) throw ParseError("unterminated quote in row: " + line);
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

inline Dataset read_log(std::istream& in, const FeatureSchema& schema,
                        utc::Seconds period_hint = 0) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty log");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = csv::split_row(line);
  if (header.size() < 2 || header[0] != "timestamp" || header[1] != "user") {
    throw ParseError("log header must start with timestamp,user");
  }
  std::vector<FeatureId> columns;
  for (std::size_t c = 2; c < header.size(); ++c) columns.push_back(schema.require(header[c]));

  struct Row {
    utc::Seconds ts;
    std::size_t user;
    ContextObservation obs;
  };
  std::vector<Row> rows;
  std::vector<std::string> users;
  std::map<std::string, std::size_t> user_index;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = csv::split_row(line);
    if (cells.size() != header.size()) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    if (cells[1].empty()) throw ParseError("line " + std::to_string(lineno) + ": empty user");
    Row row{utc::parse_iso8601(cells[0]), 0, {}};
    auto [it, inserted] = user_index.emplace(cells[1], users.size());
    if (inserted) users.push_back(cells[1]);
    row.user = it->second;
    row.obs.timestamp = row.ts;
    row.obs.user = static_cast<UserId>(row.user);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& cell = cells[c + 2];
      if (cell.empty()) continue;
      if (row.obs.value_of(columns[c])) {
        throw ParseError("line " + std::to_string(lineno) + ": feature '" +
                         schema[columns[c]].name + "' repeated");
      }
      row.obs.set(columns[c], schema.require_value(columns[c], cell));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("log has no rows");

  std::vector<utc::Seconds> stamps;
  for (const auto& r : rows) stamps.push_back(r.ts);
  std::sort(stamps.begin(), stamps.end());
  stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());
  utc::Seconds period = period_hint;
  if (period <= 0) {
    period = 0;
    for (std::size_t i = 1; i < stamps.size(); ++i) period = std::gcd(period, stamps[i] - stamps[i - 1]);
    if (period == 0) period = utc::kHour;
  }

  const std::size_t M = users.size();
  std::vector<utc::Seconds> first(M, std::numeric_limits<utc::Seconds>::max());
  std::vector<utc::Seconds> last(M, std::numeric_limits<utc::Seconds>::min());
  for (const auto& r : rows) {
    first[r.user] = std::min(first[r.user], r.ts);
    last[r.user] = std::max(last[r.user], r.ts);
  }
  const utc::Seconds start = *std::max_element(first.begin(), first.end());
  const utc::Seconds end = *std::min_element(last.begin(), last.end());
  if (start > end) throw AlignmentError("users' time ranges do not overlap");
  if ((end - start) % period != 0) throw AlignmentError("timestamps are off the sampling grid");
  const auto T = static_cast<std::size_t>((end - start) / period + 1);

  Dataset d;
  d.schema = schema;
  d.user_names = users;
  d.period_seconds = period;
  d.sequences.resize(M);
  std::vector<std::vector<bool>> seen(M, std::vector<bool>(T, false));
  for (std::size_t u = 0; u < M; ++u) {
    d.sequences[u].user = static_cast<UserId>(u);
    d.sequences[u].period_seconds = period;
    d.sequences[u].observations.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      d.sequences[u].observations[t].timestamp = start + static_cast<utc::Seconds>(t) * period;
      d.sequences[u].observations[t].user = static_cast<UserId>(u);
    }
  }
  for (auto& r : rows) {
    if ((r.ts - start) % period != 0) throw AlignmentError("timestamp off the sampling grid");
    if (r.ts < start || r.ts > end) continue;
    const auto t = static_cast<std::size_t>((r.ts - start) / period);
    if (seen[r.user][t]) {
      throw ParseError("duplicate row for user '" + users[r.user] + "' at " +
                       utc::format_iso8601(r.ts));
    }
    seen[r.user][t] = true;
    d.sequences[r.user].observations[t] = std::move(r.obs);
  }
  return d;
}

inline Dataset load_log(const std::string& path, const FeatureSchema& schema,
                        utc::Seconds period_hint = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log file " + path);
  return read_log(in, schema, period_hint);
}

inline void write_log(const Dataset& d, std::ostream& out) {
  out << "timestamp,user";
  for (const auto& f : d.schema.features()) out << ',' << csv::escape(f.name);
  out << '\n';
  for (std::size_t t = 0; t < d.length(); ++t) {
    for (std::size_t u = 0; u < d.num_users(); ++u) {
      const auto& obs = d.at(t, u);
      out << utc::format_iso8601(obs.timestamp) << ',' << csv::escape(d.user_names[u]);
      std::size_t next = 0;
      for (std::size_t f = 0; f < d.schema.size(); ++f) {
        out << ',';
        if (next < obs.pairs.size() && obs.pairs[next].first == f) {
          out << csv::escape(d.schema[f].value_names[obs.pairs[next].second]);
          ++next;
        }
      }
      out << '\n';
    }
  }
}

inline std::string format_log(const Dataset& d) {
  std::ostringstream out;
  write_log(d, out);
  return out.str();
}

/// Aggregates to one observation per `target_period` slot (slots aligned to
/// multiples of the period since the epoch). Per feature, the most frequent
/// value in the slot wins; ties go to the value seen first.
inline Dataset downsample(const Dataset& d, utc::Seconds target_period) {
  if (target_period <= 0 || d.period_seconds <= 0 || target_period % d.period_seconds != 0) {
    throw PeriodError("target period " + std::to_string(target_period) +
                      " s is not a multiple of the source period " +
                      std::to_string(d.period_seconds) + " s");
  }
  Dataset out;
  out.schema = d.schema;
  out.user_names = d.user_names;
  out.period_seconds = target_period;
  if (d.length() == 0) {
    out.sequences = d.sequences;
    for (auto& s : out.sequences) s.period_seconds = target_period;
    return out;
  }
  const utc::Seconds origin = utc::floor_div(d.timestamp(0), target_period) * target_period;
  const utc::Seconds last = d.timestamp(d.length() - 1);
  const auto slots = static_cast<std::size_t>((last - origin) / target_period + 1);
  const std::size_t F = d.schema.size();

  for (std::size_t u = 0; u < d.num_users(); ++u) {
    ObservationSequence seq{static_cast<UserId>(u), target_period, {}};
    seq.observations.resize(slots);
    std::size_t t = 0;
    for (std::size_t s = 0; s < slots; ++s) {
      auto& obs = seq.observations[s];
      obs.timestamp = origin + static_cast<utc::Seconds>(s) * target_period;
      obs.user = static_cast<UserId>(u);
      // value -> (count, first position) per feature
      std::vector<std::map<ValueId, std::pair<std::size_t, std::size_t>>> tally(F);
      std::size_t pos = 0;
      while (t < d.length() && d.timestamp(t) < obs.timestamp + target_period) {
        for (const auto& [f, v] : d.at(t, u).pairs) {
          auto [it, fresh] = tally[f].emplace(v, std::make_pair(std::size_t{0}, pos));
          ++it->second.first;
        }
        ++pos;
        ++t;
      }
      for (std::size_t f = 0; f < F; ++f) {
        if (tally[f].empty()) continue;
        auto best = tally[f].begin();
        for (auto it = tally[f].begin(); it != tally[f].end(); ++it) {
          if (it->second.first > best->second.first ||
              (it->second.first == best->second.first && it->second.second < best->second.second)) {
            best = it;
          }
        }
        obs.pairs.emplace_back(static_cast<FeatureId>(f), best->first);
      }
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

using HolidaySet = std::set<utc::CivilDate>;

inline HolidaySet parse_holidays(std::istream& in) {
  HolidaySet days;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    days.insert(utc::parse_date(line));
  }
  return days;
}

inline HolidaySet load_holidays(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open holidays file " + path);
  return parse_holidays(in);
}

enum class DayPeriod { Morning, Noon, Afternoon, Evening, Night };

// Half-open bins: Morning [7,11), Noon [11,14), Afternoon [14,18),
// Evening [18,21), Night [21,7).
inline DayPeriod day_period_of(utc::Seconds ts) {
  const int h = utc::hour_of_day(ts);
  if (h >= 7 && h < 11) return DayPeriod::Morning;
  if (h >= 11 && h < 14) return DayPeriod::Noon;
  if (h >= 14 && h < 18) return DayPeriod::Afternoon;
  if (h >= 18 && h < 21) return DayPeriod::Evening;
  return DayPeriod::Night;
}

inline bool is_holiday(utc::Seconds ts, const HolidaySet& holidays) {
  return utc::weekday(ts) >= 5 || holidays.contains(utc::date_of(ts));
}

struct TimeFeatureIds {
  FeatureId day_period;
  FeatureId day_name;
  FeatureId holiday;
  std::array<ValueId, 5> period_values;
  std::array<ValueId, 7> weekday_values;
  ValueId holiday_yes;
  ValueId holiday_no;
};

inline TimeFeatureIds resolve_time_features(const FeatureSchema& schema) {
  auto need = [&](std::string_view name, std::size_t card) {
    auto f = schema.find_loose(name);
    if (!f) throw SchemaError("schema lacks derived feature '" + std::string(name) + "'");
    if (schema[*f].cardinality() != card) {
      throw SchemaError("feature '" + std::string(name) + "' must have " +
                        std::to_string(card) + " values");
    }
    return *f;
  };
  auto value = [&](FeatureId f, std::string_view name) -> ValueId {
    const auto key = FeatureSchema::loose_key(name);
    const auto& values = schema[f].value_names;
    for (std::size_t v = 0; v < values.size(); ++v) {
      const auto k = FeatureSchema::loose_key(values[v]);
      if (k == key || (key.size() >= 3 && k.size() >= 3 && k.substr(0, 3) == key.substr(0, 3))) {
        return static_cast<ValueId>(v);
      }
    }
    throw SchemaError("feature '" + schema[f].name + "' lacks value '" + std::string(name) + "'");
  };
  TimeFeatureIds ids{};
  ids.day_period = need("Day Period", 5);
  ids.day_name = need("Day Name", 7);
  ids.holiday = need("Holiday", 2);
  const char* periods[] = {"Morning", "Noon", "Afternoon", "Evening", "Night"};
  for (int i = 0; i < 5; ++i) ids.period_values[i] = value(ids.day_period, periods[i]);
  const char* days[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  for (int i = 0; i < 7; ++i) ids.weekday_values[i] = value(ids.day_name, days[i]);
  ids.holiday_yes = value(ids.holiday, "Yes");
  ids.holiday_no = value(ids.holiday, "No");
  return ids;
}

/// Overwrites Day Period, Day Name and Holiday of every observation from its
/// timestamp. Saturdays, Sundays and the listed dates are holidays.
inline Dataset derive_time_features(const Dataset& d, const HolidaySet& holidays) {
  const TimeFeatureIds ids = resolve_time_features(d.schema);
  Dataset out = d;
  for (auto& seq : out.sequences) {
    for (auto& obs : seq.observations) {
      obs.set(ids.day_period, ids.period_values[static_cast<int>(day_period_of(obs.timestamp))]);
      obs.set(ids.day_name, ids.weekday_values[utc::weekday(obs.timestamp)]);
      obs.set(ids.holiday, is_holiday(obs.timestamp, holidays) ? ids.holiday_yes : ids.holiday_no);
    }
  }
  return out;
}

}  // namespace hcfctx
