#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace aqcast {

using Timestamp = std::chrono::sys_seconds;
using std::chrono::hours;
using std::chrono::seconds;

inline constexpr hours kStep{3};

// ISO-8601 date-time ("2019-03-01T06:00:00Z", optional fraction, "Z" or
// "+hh:mm" offset, space separator accepted). Returns UTC; throws DataError.
Timestamp parse_time(std::string_view text);
std::string format_time(Timestamp t);

int hour_of_day(Timestamp t);
unsigned month_of(Timestamp t);  // 1..12
bool aligned_to_step(Timestamp t);
Timestamp floor_to_step(Timestamp t);

}  // namespace aqcast
