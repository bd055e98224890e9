#pragma once

// Minimal CSV helpers for the flat, unquoted formats the tools read and write.

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aqcast::csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
        s.remove_suffix(1);
    return s;
}

inline void split(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
}

inline std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

// Column positions of `names` in a header row; nullopt if any is missing.
inline std::optional<std::vector<std::size_t>> locate(const std::vector<std::string_view>& header,
                                                      std::initializer_list<std::string_view> names) {
    std::vector<std::size_t> pos;
    for (auto name : names) {
        std::size_t k = 0;
        while (k < header.size() && lower(header[k]) != name) ++k;
        if (k == header.size()) return std::nullopt;
        pos.push_back(k);
    }
    return pos;
}

}  // namespace aqcast::csv
