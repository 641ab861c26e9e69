#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "hcfctx/errors.hpp"

// UTC calendar helpers. Timestamps are seconds since the Unix epoch.
namespace hcfctx::utc {

using Seconds = std::int64_t;

inline constexpr Seconds kMinute = 60;
inline constexpr Seconds kHour = 3600;
inline constexpr Seconds kDay = 86400;

struct CivilDate {
  int year = 1970;
  int month = 1;
  int day = 1;
  auto operator<=>(const CivilDate&) const = default;
};

// Days since 1970-01-01 for a proleptic Gregorian date (Hinnant's algorithm).
constexpr std::int64_t days_from_civil(CivilDate d) {
  const int y = d.year - (d.month <= 2 ? 1 : 0);
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned mp = static_cast<unsigned>(d.month + (d.month > 2 ? -3 : 9));
  const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(d.day) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) -
         719468;
}

constexpr CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return CivilDate{static_cast<int>(y + (m <= 2 ? 1 : 0)), static_cast<int>(m),
                   static_cast<int>(d)};
}

constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)) ? 1 : 0);
}

constexpr std::int64_t day_index(Seconds ts) { return floor_div(ts, kDay); }

constexpr int hour_of_day(Seconds ts) {
  return static_cast<int>((ts - day_index(ts) * kDay) / kHour);
}

// 0 = Monday ... 6 = Sunday. 1970-01-01 was a Thursday.
constexpr int weekday(Seconds ts) {
  const std::int64_t d = day_index(ts);
  return static_cast<int>(((d % 7) + 7 + 3) % 7);
}

constexpr CivilDate date_of(Seconds ts) { return civil_from_days(day_index(ts)); }

namespace detail {

inline int parse_fixed(std::string_view s, std::size_t pos, std::size_t len,
                       std::string_view whole) {
  int value = 0;
  if (pos + len > s.size()) throw ParseError("truncated timestamp: " + std::string(whole));
  const auto* first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, value);
  if (ec != std::errc{} || ptr != first + len) {
    throw ParseError("malformed timestamp: " + std::string(whole));
  }
  return value;
}

}  // namespace detail

inline CivilDate parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
    throw ParseError("malformed date: " + std::string(s));
  }
  CivilDate d{detail::parse_fixed(s, 0, 4, s), detail::parse_fixed(s, 5, 2, s),
              detail::parse_fixed(s, 8, 2, s)};
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) {
    throw ParseError("date out of range: " + std::string(s));
  }
  return d;
}

// Accepts YYYY-MM-DDTHH:MM[:SS][Z|+00:00]; a space may replace the 'T'.
inline Seconds parse_iso8601(std::string_view s) {
  if (s.size() < 16 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    throw ParseError("malformed timestamp: " + std::string(s));
  }
  const CivilDate d = parse_date(s.substr(0, 10));
  const int hh = detail::parse_fixed(s, 11, 2, s);
  const int mm = detail::parse_fixed(s, 14, 2, s);
  int ss = 0;
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    ss = detail::parse_fixed(s, 17, 2, s);
    pos = 19;
  }
  const std::string_view tail = s.substr(pos);
  if (!(tail.empty() || tail == "Z" || tail == "+00:00")) {
    throw ParseError("timestamp must be UTC: " + std::string(s));
  }
  if (hh > 23 || mm > 59 || ss > 60) {
    throw ParseError("time out of range: " + std::string(s));
  }
  return days_from_civil(d) * kDay + hh * kHour + mm * kMinute + ss;
}

inline std::string format_date(CivilDate d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

inline std::string format_iso8601(Seconds ts) {
  const std::int64_t days = day_index(ts);
  const std::int64_t rem = ts - days * kDay;
  char buf[32];
  const CivilDate d = civil_from_days(days);
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", d.year, d.month,
                d.day, static_cast<int>(rem / kHour),
                static_cast<int>((rem % kHour) / kMinute), static_cast<int>(rem % kMinute));
  return buf;
}

}  // namespace hcfctx::utc
