#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fmt/os.h>
#include <fstream>
#include <map>

#include "aqcast/datasets.hpp"
#include "aqcast/error.hpp"
#include "csv.hpp"

namespace aqcast {

std::optional<std::size_t> weather_index(std::string_view name) {
    for (std::size_t k = 0; k < kNumWeather; ++k)
        if (name == kWeatherNames[k]) return k;
    return std::nullopt;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return in;
}

// Parses timestamps through a one-entry cache; consecutive rows usually share them.
struct TimeCache {
    std::string text;
    Timestamp value{};

    Timestamp operator()(std::string_view s) {
        if (s != text) {
            value = parse_time(s);
            text.assign(s);
        }
        return value;
    }
};

}  // namespace

std::vector<StationReading> parse_measurements(std::istream& in, IngestStats* stats) {
    IngestStats local;
    IngestStats& st = stats ? *stats : local;
    std::string line;
    std::vector<std::string_view> cells;
    if (!std::getline(in, line)) throw DataError("measurement file is empty");
    csv::split(line, cells);
    const auto cols = csv::locate(cells, {"station_id", "lat", "lon", "time_utc", "pollutant", "value_ugm3"});
    if (!cols) throw DataError("measurement header must name station_id,lat,lon,time_utc,pollutant,value_ugm3");
    const auto& c = *cols;
    const std::size_t need = *std::max_element(c.begin(), c.end()) + 1;

    std::vector<StationReading> out;
    TimeCache time;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        ++st.rows;
        csv::split(line, cells);
        if (cells.size() < need) {
            ++st.malformed;
            continue;
        }
        if (cells[c[5]].empty()) {
            ++st.missing_value;
            continue;
        }
        const auto pollutant = parse_pollutant(csv::lower(cells[c[4]]));
        if (!pollutant) {
            ++st.unsupported_pollutant;
            continue;
        }
        const auto lat = csv::to_double(cells[c[1]]);
        const auto lon = csv::to_double(cells[c[2]]);
        const auto value = csv::to_double(cells[c[5]]);
        if (!lat || !lon || !value || cells[c[0]].empty() || !std::isfinite(*value)) {
            ++st.malformed;
            continue;
        }
        StationReading r;
        try {
            r.time = time(cells[c[3]]);
        } catch (const DataError&) {
            ++st.malformed;
            continue;
        }
        r.station_id.assign(cells[c[0]]);
        r.lat = *lat;
        r.lon = *lon;
        r.pollutant = *pollutant;
        r.value = *value;
        out.push_back(std::move(r));
        ++st.accepted;
    }
    return out;
}

std::vector<StationReading> ingest_measurements(const std::filesystem::path& path, IngestStats* stats) {
    auto in = open_input(path);
    return parse_measurements(in, stats);
}

void write_measurements_csv(const std::filesystem::path& path, std::span<const StationReading> readings) {
    auto out = fmt::output_file(path.string());
    out.print("station_id,lat,lon,time_utc,pollutant,value_ugm3\n");
    for (const auto& r : readings)
        out.print("{},{},{},{},{},{}\n", r.station_id, r.lat, r.lon, format_time(r.time), pollutant_name(r.pollutant),
                  r.value);
}

// ---- forecasts ---------------------------------------------------------------

namespace {

struct ForecastRow {
    Timestamp valid;
    double lat;
    double lon;
    std::size_t variable;
    double value;
};

// Sorted distinct coordinates, merging values closer than 1e-6 degrees.
std::vector<double> distinct_axis(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v)
        if (out.empty() || x - out.back() > 1e-6) out.push_back(x);
    return out;
}

// Spacing of a regular axis; DataError when the axis is irregular.
double axis_step(const std::vector<double>& axis) {
    if (axis.size() < 2) return 1.0;
    const double step = (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1);
    for (std::size_t k = 1; k < axis.size(); ++k)
        if (std::abs(axis[k] - axis[k - 1] - step) > 1e-6 * std::max(1.0, step))
            throw DataError("forecast grid is not regular");
    return step;
}

std::size_t axis_index(const std::vector<double>& axis, double x) {
    auto it = std::lower_bound(axis.begin(), axis.end(), x - 1e-6);
    return static_cast<std::size_t>(it - axis.begin());
}

ForecastRun assemble_run(Timestamp run_time, ForecastKind kind, const std::vector<ForecastRow>& rows,
                         ForecastIngestStats& st) {
    std::vector<double> lats, lons;
    std::vector<Timestamp> times;
    for (const auto& r : rows) {
        lats.push_back(r.lat);
        lons.push_back(r.lon);
        times.push_back(r.valid);
    }
    lats = distinct_axis(std::move(lats));
    lons = distinct_axis(std::move(lons));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    ForecastRun run;
    run.run_time = run_time;
    run.kind = kind;
    run.grid = GridSpec{lats.front(), lons.front(), axis_step(lats), axis_step(lons), lats.size(), lons.size()};
    const std::size_t V = run.variables();
    Tensor values({times.size(), lats.size(), lons.size(), V}, std::nan(""));
    for (const auto& r : rows) {
        const auto t = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), r.valid) - times.begin());
        values.at({t, axis_index(lats, r.lat), axis_index(lons, r.lon), r.variable}) = r.value;
    }
    // Valid times with any cell or variable missing are dropped whole.
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < times.size(); ++t) {
        const auto slab = values.slab(t);
        if (slab.all_finite())
            keep.push_back(t);
        else
            ++st.incomplete_valid_times;
    }
    if (keep.empty()) throw DataError("forecast run " + format_time(run_time) + " has no complete valid time");
    run.values = Tensor({keep.size(), lats.size(), lons.size(), V});
    for (std::size_t k = 0; k < keep.size(); ++k) {
        run.values.set_slab(k, values.slab(keep[k]));
        run.valid_times.push_back(times[keep[k]]);
    }
    return run;
}

}  // namespace

std::vector<ForecastRun> parse_forecasts(std::istream& in, ForecastIngestStats* stats) {
    ForecastIngestStats local;
    ForecastIngestStats& st = stats ? *stats : local;
    std::string line;
    std::vector<std::string_view> cells;
    if (!std::getline(in, line)) throw DataError("forecast file is empty");
    csv::split(line, cells);
    const auto cols = csv::locate(cells, {"run_time_utc", "valid_time_utc", "lat", "lon", "variable", "value"});
    if (!cols) throw DataError("forecast header must name run_time_utc,valid_time_utc,lat,lon,variable,value");
    const auto& c = *cols;
    const std::size_t need = *std::max_element(c.begin(), c.end()) + 1;

    std::map<std::pair<int, Timestamp>, std::vector<ForecastRow>> groups;
    TimeCache run_time, valid_time;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        ++st.rows;
        csv::split(line, cells);
        if (cells.size() < need) {
            ++st.malformed;
            continue;
        }
        const auto name = csv::lower(cells[c[4]]);
        ForecastKind kind;
        std::size_t var;
        if (auto w = weather_index(name)) {
            kind = ForecastKind::weather;
            var = *w;
        } else if (auto p = parse_pollutant(name)) {
            kind = ForecastKind::aqpcm;
            var = static_cast<std::size_t>(*p);
        } else {
            ++st.unknown_variable;
            continue;
        }
        const auto lat = csv::to_double(cells[c[2]]);
        const auto lon = csv::to_double(cells[c[3]]);
        const auto value = csv::to_double(cells[c[5]]);
        if (!lat || !lon || !value || !std::isfinite(*value)) {
            ++st.malformed;
            continue;
        }
        Timestamp rt, vt;
        try {
            rt = run_time(cells[c[0]]);
            vt = valid_time(cells[c[1]]);
        } catch (const DataError&) {
            ++st.malformed;
            continue;
        }
        if (vt < rt) {
            ++st.malformed;
            continue;
        }
        groups[{static_cast<int>(kind), rt}].push_back({vt, *lat, *lon, var, *value});
    }

    std::vector<ForecastRun> runs;
    for (const auto& [key, rows] : groups)
        runs.push_back(assemble_run(key.second, static_cast<ForecastKind>(key.first), rows, st));
    st.runs = runs.size();
    return runs;
}

std::vector<ForecastRun> ingest_forecasts(const std::filesystem::path& path, ForecastIngestStats* stats) {
    auto in = open_input(path);
    return parse_forecasts(in, stats);
}

void write_forecasts_csv(const std::filesystem::path& path, std::span<const ForecastRun> runs) {
    auto out = fmt::output_file(path.string());
    out.print("run_time_utc,valid_time_utc,lat,lon,variable,value\n");
    for (const auto& run : runs) {
        const auto issued = format_time(run.run_time);
        const std::size_t V = run.variables();
        for (std::size_t t = 0; t < run.valid_times.size(); ++t) {
            const auto valid = format_time(run.valid_times[t]);
            for (std::size_t j = 0; j < run.grid.ny; ++j)
                for (std::size_t i = 0; i < run.grid.nx; ++i) {
                    const auto p = run.grid.center(j, i);
                    for (std::size_t v = 0; v < V; ++v) {
                        const auto name = run.kind == ForecastKind::weather
                                              ? std::string_view(kWeatherNames[v])
                                              : pollutant_name(static_cast<Pollutant>(v));
                        out.print("{},{},{},{},{},{}\n", issued, valid, p.lat, p.lon, name,
                                  run.values.at({t, j, i, v}));
                    }
                }
        }
    }
}

}  // namespace aqcast
