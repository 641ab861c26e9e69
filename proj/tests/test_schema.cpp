#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "hcfctx/context_log.hpp"
#include "hcfctx/random.hpp"

using namespace hcfctx;

namespace {

FeatureSchema context_schema() {
  std::istringstream in(
      "WiFi:3:wifi1|wifi2|aa:cc\n"
      "CellID:2:cid1|cid2\n"
      "LAC:2:lac1|lac2\n"
      "Battery Level:4:low|medium|high|full\n"
      "Battery Status:4:charging|discharging|full|unknown\n"
      "Day Period:5:morning|noon|afternoon|evening|night\n"
      "Day of week:7:Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday\n"
      "Holiday:2:Yes|No\n");
  return parse_schema(in);
}

std::vector<std::string> day_names_short() {
  return {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
}

FeatureSchema time_schema() {
  FeatureSchema s;
  s.add("Cell ID", {"cid1", "cid2"});
  s.add("Day Period", {"Morning", "Noon", "Afternoon", "Evening", "Night"});
  s.add("Day Name", day_names_short());
  s.add("Holiday", {"Yes", "No"});
  return s;
}

using Multiset = std::multiset<std::tuple<utc::Seconds, std::string, std::vector<std::pair<FeatureId, ValueId>>>>;

Multiset rows_of(const Dataset& d) {
  Multiset m;
  for (std::size_t u = 0; u < d.num_users(); ++u) {
    for (const auto& obs : d.sequences[u].observations) {
      m.emplace(obs.timestamp, d.user_names[u], obs.pairs);
    }
  }
  return m;
}

}  // namespace

TEST(Schema, ParseAndFormatRoundTrip) {
  const auto s = context_schema();
  EXPECT_EQ(s.size(), 8u);
  EXPECT_EQ(s[0].cardinality(), 3u);
  std::istringstream again(format_schema(s));
  EXPECT_EQ(parse_schema(again), s);
}

TEST(Schema, RejectsBadDefinitions) {
  std::istringstream dup("a:2:x|x\n");
  EXPECT_THROW(parse_schema(dup), SchemaError);
  std::istringstream count("a:3:x|y\n");
  EXPECT_THROW(parse_schema(count), SchemaError);
  std::istringstream malformed("a-2-x\n");
  EXPECT_THROW(parse_schema(malformed), ParseError);
  FeatureSchema s;
  s.add("a", {"x"});
  EXPECT_THROW(s.add("a", {"y"}), SchemaError);
  EXPECT_THROW(s.add("b", {}), SchemaError);
}

TEST(Log, MinimalTwoUsers) {
  FeatureSchema s;
  s.add("CellID", {"cid1", "cid2"});
  std::istringstream in(
      "timestamp,user,CellID\n"
      "2024-01-01T00:00:00Z,A,cid1\n"
      "2024-01-01T00:00:00Z,B,cid2\n"
      "2024-01-01T01:00:00Z,A,\n"
      "2024-01-01T01:00:00Z,B,cid1\n");
  const Dataset d = read_log(in, s);
  EXPECT_EQ(d.num_users(), 2u);
  EXPECT_EQ(d.length(), 2u);
  EXPECT_EQ(d.period_seconds, 3600);
  EXPECT_TRUE(d.at(1, 0).empty());
  EXPECT_EQ(d.at(1, 1).value_of(0), ValueId{0});
  validate(d);
}

TEST(Log, UnknownValueRejected) {
  FeatureSchema s;
  s.add("wifi", {"wifi1"});
  std::istringstream in("timestamp,user,wifi\n2024-01-01T00:00:00Z,A,aa:bb\n");
  EXPECT_THROW(read_log(in, s), SchemaError);
  std::istringstream unknown_feature("timestamp,user,gps\n2024-01-01T00:00:00Z,A,x\n");
  EXPECT_THROW(read_log(unknown_feature, s), SchemaError);
}

TEST(Log, MalformedRowsRejected) {
  FeatureSchema s;
  s.add("wifi", {"wifi1"});
  std::istringstream cells("timestamp,user,wifi\n2024-01-01T00:00:00Z,A\n");
  EXPECT_THROW(read_log(cells, s), ParseError);
  std::istringstream stamp("timestamp,user,wifi\n2024-13-01T00:00:00Z,A,wifi1\n");
  EXPECT_THROW(read_log(stamp, s), ParseError);
  std::istringstream header("time,user,wifi\n");
  EXPECT_THROW(read_log(header, s), ParseError);
}

TEST(Log, NonOverlappingUsersRejected) {
  FeatureSchema s;
  s.add("wifi", {"wifi1"});
  std::istringstream in(
      "timestamp,user,wifi\n"
      "2024-01-01T00:00:00Z,A,wifi1\n"
      "2024-01-01T01:00:00Z,A,wifi1\n"
      "2024-01-01T05:00:00Z,B,wifi1\n"
      "2024-01-01T06:00:00Z,B,wifi1\n");
  EXPECT_THROW(read_log(in, s), AlignmentError);
}

TEST(Log, ContextRowHasEightPairs) {
  const auto s = context_schema();
  std::istringstream in(
      "timestamp,user,WiFi,CellID,LAC,Battery Level,Battery Status,Day Period,Day of week,Holiday\n"
      "2024-01-01T08:00:00Z,A,wifi1,cid1,lac1,high,discharging,morning,Monday,No\n");
  const Dataset d = read_log(in, s);
  ASSERT_EQ(d.length(), 1u);
  EXPECT_EQ(d.at(0, 0).size(), 8u);
  std::istringstream back(format_log(d));
  const Dataset again = read_log(back, s);
  EXPECT_EQ(rows_of(again), rows_of(d));
}

TEST(Log, RoundTripRandom) {
  Rng rng(7);
  const auto s = context_schema();
  std::ostringstream csv;
  csv << "timestamp,user";
  for (const auto& f : s.features()) csv << ',' << csv::escape(f.name);
  csv << '\n';
  for (int t = 0; t < 30; ++t) {
    for (const char* u : {"A", "B", "C"}) {
      csv << utc::format_iso8601(1700000000 / 3600 * 3600 + t * 3600) << ',' << u;
      for (const auto& f : s.features()) {
        csv << ',';
        if (rng.bernoulli(0.7)) csv << csv::escape(f.value_names[rng.below(f.cardinality())]);
      }
      csv << '\n';
    }
  }
  std::istringstream in(csv.str());
  const Dataset d = read_log(in, s);
  std::istringstream back(format_log(d));
  const Dataset again = read_log(back, s);
  EXPECT_EQ(rows_of(again), rows_of(d));
  EXPECT_EQ(again.user_names, d.user_names);
}

TEST(Downsample, ConstantSignalCollapses) {
  FeatureSchema s;
  s.add("CellID", {"cid1", "cid2"});
  std::ostringstream csv;
  csv << "timestamp,user,CellID\n";
  for (int i = 0; i < 12; ++i) csv << utc::format_iso8601(i * 300) << ",A,cid2\n";
  std::istringstream in(csv.str());
  const Dataset d = read_log(in, s);
  EXPECT_EQ(d.period_seconds, 300);
  const Dataset h = downsample(d, 3600);
  ASSERT_EQ(h.length(), 1u);
  EXPECT_EQ(h.at(0, 0).pairs, d.at(0, 0).pairs);
}

TEST(Downsample, MajorityVoteMatchesOracle) {
  Rng rng(11);
  FeatureSchema s;
  s.add("CellID", {"cid1", "cid2", "cid3"});
  s.add("WiFi", {"w1", "w2"});
  Dataset d;
  d.schema = s;
  d.period_seconds = 600;
  d.user_names = {"A"};
  d.sequences.push_back({0, 600, {}});
  for (int t = 0; t < 60; ++t) {
    ContextObservation obs{t * 600, 0, {}};
    if (rng.bernoulli(0.8)) obs.set(0, static_cast<ValueId>(rng.below(3)));
    if (rng.bernoulli(0.5)) obs.set(1, static_cast<ValueId>(rng.below(2)));
    d.sequences[0].observations.push_back(obs);
  }
  const Dataset h = downsample(d, 3600);
  ASSERT_EQ(h.length(), 10u);
  for (std::size_t slot = 0; slot < 10; ++slot) {
    for (FeatureId f = 0; f < 2; ++f) {
      std::map<ValueId, int> counts;
      std::map<ValueId, int> first;
      for (int i = 0; i < 6; ++i) {
        const auto& obs = d.at(slot * 6 + i, 0);
        if (auto v = obs.value_of(f)) {
          if (!counts.contains(*v)) first[*v] = i;
          ++counts[*v];
        }
      }
      std::optional<ValueId> expect;
      for (const auto& [v, n] : counts) {
        if (!expect || n > counts[*expect] || (n == counts[*expect] && first[v] < first[*expect])) {
          expect = v;
        }
      }
      EXPECT_EQ(h.at(slot, 0).value_of(f), expect) << "slot " << slot << " feature " << f;
    }
  }
}

TEST(Downsample, SpecificMajority) {
  FeatureSchema s;
  s.add("Cell ID", {"cid1", "cid2"});
  std::istringstream in(
      "timestamp,user,Cell ID\n"
      "2024-01-01T00:00:00Z,A,cid2\n"
      "2024-01-01T00:15:00Z,A,cid1\n"
      "2024-01-01T00:30:00Z,A,cid1\n"
      "2024-01-01T00:45:00Z,A,cid1\n"
      "2024-01-01T01:00:00Z,A,cid2\n"
      "2024-01-01T01:15:00Z,A,cid1\n"
      "2024-01-01T02:45:00Z,A,\n");
  const Dataset h = downsample(read_log(in, s), 3600);
  ASSERT_EQ(h.length(), 3u);
  EXPECT_EQ(h.at(0, 0).value_of(0), ValueId{0});
  // tie 1:1, earliest occurrence (cid2) wins
  EXPECT_EQ(h.at(1, 0).value_of(0), ValueId{1});
  EXPECT_TRUE(h.at(2, 0).empty());
}

TEST(Downsample, IdempotentAndRejectsNonMultiple) {
  FeatureSchema s;
  s.add("c", {"x", "y"});
  Rng rng(3);
  Dataset d;
  d.schema = s;
  d.period_seconds = 900;
  d.user_names = {"A", "B"};
  for (UserId u = 0; u < 2; ++u) {
    d.sequences.push_back({u, 900, {}});
    for (int t = 0; t < 40; ++t) {
      ContextObservation obs{t * 900, u, {}};
      if (rng.bernoulli(0.6)) obs.set(0, static_cast<ValueId>(rng.below(2)));
      d.sequences[u].observations.push_back(obs);
    }
  }
  const Dataset once = downsample(d, 3600);
  const Dataset twice = downsample(once, 3600);
  EXPECT_EQ(rows_of(once), rows_of(twice));
  EXPECT_EQ(rows_of(downsample(d, 900)), rows_of(d));
  EXPECT_THROW(downsample(d, 1000), PeriodError);
}

TEST(TimeFeatures, TableExamples) {
  const auto s = time_schema();
  Dataset d;
  d.schema = s;
  d.user_names = {"A"};
  d.sequences.push_back({0, 3600, {}});
  const auto tue13 = utc::parse_iso8601("2024-01-02T13:00:00Z");
  const auto sun03 = utc::parse_iso8601("2024-01-07T03:00:00Z");
  const auto wed07 = utc::parse_iso8601("2024-01-03T07:00:00Z");
  for (auto ts : {tue13, sun03, wed07}) d.sequences[0].observations.push_back({ts, 0, {}});
  const Dataset out = derive_time_features(d, {});
  EXPECT_EQ(out.at(0, 0).value_of(1), ValueId{1});  // Noon
  EXPECT_EQ(out.at(0, 0).value_of(2), ValueId{1});  // Tue
  EXPECT_EQ(out.at(0, 0).value_of(3), ValueId{1});  // No
  EXPECT_EQ(out.at(1, 0).value_of(1), ValueId{4});  // Night
  EXPECT_EQ(out.at(1, 0).value_of(3), ValueId{0});  // Yes
  EXPECT_EQ(out.at(2, 0).value_of(1), ValueId{0});  // Morning at exactly 07:00
}

TEST(TimeFeatures, ListedHolidayAndBoundaries) {
  std::istringstream hol("2024-01-03\n");
  const auto holidays = parse_holidays(hol);
  EXPECT_TRUE(is_holiday(utc::parse_iso8601("2024-01-03T12:00Z"), holidays));
  EXPECT_FALSE(is_holiday(utc::parse_iso8601("2024-01-04T12:00Z"), holidays));
  EXPECT_TRUE(is_holiday(utc::parse_iso8601("2024-01-06T12:00Z"), holidays));
  EXPECT_EQ(day_period_of(utc::parse_iso8601("2024-01-04T06:59:59Z")), DayPeriod::Night);
  EXPECT_EQ(day_period_of(utc::parse_iso8601("2024-01-04T11:00Z")), DayPeriod::Noon);
  EXPECT_EQ(day_period_of(utc::parse_iso8601("2024-01-04T14:00Z")), DayPeriod::Afternoon);
  EXPECT_EQ(day_period_of(utc::parse_iso8601("2024-01-04T18:00Z")), DayPeriod::Evening);
  EXPECT_EQ(day_period_of(utc::parse_iso8601("2024-01-04T21:00Z")), DayPeriod::Night);
}

TEST(TimeFeatures, ConsistentWithTimestampEverywhere) {
  const auto s = time_schema();
  Dataset d;
  d.schema = s;
  d.user_names = {"A", "B"};
  const auto start = utc::parse_iso8601("2023-12-25T00:00Z");
  for (UserId u = 0; u < 2; ++u) {
    d.sequences.push_back({u, 3600, {}});
    for (int t = 0; t < 24 * 14; ++t) {
      ContextObservation obs{start + t * 3600, u, {}};
      if (t % 3 == 0) obs.set(0, 1);
      d.sequences[u].observations.push_back(obs);
    }
  }
  std::istringstream hol("2023-12-25\n");
  const Dataset out = derive_time_features(d, parse_holidays(hol));
  const auto ids = resolve_time_features(s);
  for (const auto& seq : out.sequences) {
    for (const auto& obs : seq.observations) {
      const auto date = utc::date_of(obs.timestamp);
      const int wd = utc::weekday(obs.timestamp);
      const int h = utc::hour_of_day(obs.timestamp);
      const int period = h >= 7 && h < 11 ? 0 : h >= 11 && h < 14 ? 1 : h >= 14 && h < 18 ? 2
                         : h >= 18 && h < 21 ? 3 : 4;
      const bool hol_day = wd >= 5 || (date == utc::CivilDate{2023, 12, 25});
      EXPECT_EQ(obs.value_of(ids.day_period), ValueId(period));
      EXPECT_EQ(obs.value_of(ids.day_name), ValueId(wd));
      EXPECT_EQ(obs.value_of(ids.holiday), hol_day ? ids.holiday_yes : ids.holiday_no);
    }
  }
  // 2023-12-25 is a Monday
  EXPECT_EQ(utc::weekday(start), 0);
}

TEST(TimeFeatures, MissingDerivedFeatureRejected) {
  FeatureSchema s;
  s.add("Day Period", {"a", "b"});
  Dataset d;
  d.schema = s;
  EXPECT_THROW(derive_time_features(d, {}), SchemaError);
}

TEST(Dataset, RestrictAndSlice) {
  Rng rng(1);
  FeatureSchema s;
  s.add("c", {"x", "y"});
  Dataset d;
  d.schema = s;
  d.user_names = {"A", "B", "C"};
  for (UserId u = 0; u < 3; ++u) {
    d.sequences.push_back({u, 3600, {}});
    for (int t = 0; t < 5; ++t) d.sequences[u].observations.push_back({t * 3600, u, {{0, u % 2}}});
  }
  const std::vector<std::size_t> pick{2, 0};
  const Dataset r = restrict_users(d, pick);
  EXPECT_EQ(r.user_names, (std::vector<std::string>{"C", "A"}));
  EXPECT_EQ(r.at(0, 0).user, 0u);
  validate(r);
  const Dataset sl = slice(d, 1, 4);
  EXPECT_EQ(sl.length(), 3u);
  EXPECT_EQ(sl.timestamp(0), 3600);
  EXPECT_EQ(d.count_instances(0, 5), 15u);
}
