#include "aqcast/timeutil.hpp"

#include <charconv>
#include <fmt/format.h>

#include "aqcast/error.hpp"

namespace aqcast {

namespace {

int read_int(std::string_view text, std::size_t pos, std::size_t len) {
    if (pos + len > text.size()) throw DataError("truncated timestamp '" + std::string(text) + "'");
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
    if (ec != std::errc() || ptr != text.data() + pos + len)
        throw DataError("malformed timestamp '" + std::string(text) + "'");
    return value;
}

void expect(std::string_view text, std::size_t pos, std::string_view allowed) {
    if (pos >= text.size() || allowed.find(text[pos]) == std::string_view::npos)
        throw DataError("malformed timestamp '" + std::string(text) + "'");
}

}  // namespace

Timestamp parse_time(std::string_view text) {
    using namespace std::chrono;
    // YYYY-MM-DDThh:mm[:ss[.fff]][Z|+hh:mm|-hh:mm]
    expect(text, 4, "-");
    expect(text, 7, "-");
    expect(text, 10, "T ");
    expect(text, 13, ":");
    const int y = read_int(text, 0, 4);
    const int mo = read_int(text, 5, 2);
    const int d = read_int(text, 8, 2);
    const int hh = read_int(text, 11, 2);
    const int mm = read_int(text, 14, 2);
    int ss = 0;
    std::size_t pos = 16;
    if (pos < text.size() && text[pos] == ':') {
        ss = read_int(text, pos + 1, 2);
        pos += 3;
        if (pos < text.size() && text[pos] == '.') {
            ++pos;
            while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
        }
    }
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60)
        throw DataError("invalid calendar value in timestamp '" + std::string(text) + "'");
    Timestamp t = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
    if (pos == text.size()) return t;
    if (text[pos] == 'Z' && pos + 1 == text.size()) return t;
    if ((text[pos] == '+' || text[pos] == '-') && pos + 6 == text.size() && text[pos + 3] == ':') {
        const int oh = read_int(text, pos + 1, 2);
        const int om = read_int(text, pos + 4, 2);
        const auto offset = hours{oh} + minutes{om};
        return text[pos] == '+' ? t - offset : t + offset;
    }
    throw DataError("malformed timezone in timestamp '" + std::string(text) + "'");
}

std::string format_time(Timestamp t) {
    using namespace std::chrono;
    const auto day_start = floor<days>(t);
    const year_month_day ymd{day_start};
    const hh_mm_ss hms{t - day_start};
    return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hms.hours().count(),
                       hms.minutes().count(), hms.seconds().count());
}

int hour_of_day(Timestamp t) {
    using namespace std::chrono;
    return static_cast<int>(duration_cast<hours>(t - floor<days>(t)).count());
}

unsigned month_of(Timestamp t) {
    using namespace std::chrono;
    return static_cast<unsigned>(year_month_day{floor<days>(t)}.month());
}

bool aligned_to_step(Timestamp t) { return t.time_since_epoch() % kStep == seconds{0}; }

Timestamp floor_to_step(Timestamp t) { return std::chrono::floor<hours>(t) - (std::chrono::floor<hours>(t).time_since_epoch() % kStep); }

}  // namespace aqcast
