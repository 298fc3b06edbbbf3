#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace podo {

// Whole seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;
using Clock = std::function<Timestamp()>;

Clock system_clock();

// "2024-03-01T09:30:00Z"
std::string format_utc(Timestamp t);
// "20240301T093000Z", safe in file names.
std::string format_utc_compact(Timestamp t);
// Accepts the extended form above; throws InvalidArgument otherwise.
Timestamp parse_utc(std::string_view text);

}  // namespace podo
