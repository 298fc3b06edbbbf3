#include "podo/timeutil.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

#include "podo/error.hpp"

namespace podo {

Clock system_clock() {
  return [] {
    return static_cast<Timestamp>(std::chrono::duration_cast<std::chrono::seconds>(
                                      std::chrono::system_clock::now().time_since_epoch())
                                      .count());
  };
}

namespace {

std::tm to_tm(Timestamp t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  if (!gmtime_r(&tt, &tm)) fail(Errc::InvalidArgument, "timestamp out of range");
  return tm;
}

}  // namespace

std::string format_utc(Timestamp t) {
  const std::tm tm = to_tm(t);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

std::string format_utc_compact(Timestamp t) {
  const std::tm tm = to_tm(t);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

Timestamp parse_utc(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char z = 0;
  const std::string buf(text);
  int consumed = 0;
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c%n", &y, &mo, &d, &h, &mi, &s, &z,
                  &consumed) != 7 ||
      z != 'Z' || consumed != static_cast<int>(buf.size()) || mo < 1 || mo > 12 || d < 1 ||
      d > 31 || h > 23 || mi > 59 || s > 60) {
    fail(Errc::InvalidArgument, "timestamp must look like 2024-03-01T09:30:00Z");
  }
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = s;
  const Timestamp t = static_cast<Timestamp>(timegm(&tm));
  // Reject dates like Feb 30 that timegm silently normalizes.
  if (format_utc(t) != buf) fail(Errc::InvalidArgument, "timestamp is not a valid calendar date");
  return t;
}

}  // namespace podo
