#include "aqcast/geogrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "aqcast/error.hpp"

namespace aqcast {

void GridSpec::validate() const {
    if (!(dlat > 0.0) || !(dlon > 0.0)) throw ConfigError("grid steps must be positive");
    if (ny == 0 || nx == 0) throw ConfigError("grid must have at least one cell");
}

GridField::GridField(GridSpec s, Tensor v) : spec(s), values(std::move(v)) {
    const auto& sh = values.shape();
    if (sh.size() < 2 || sh.size() > 3 || sh[0] != spec.ny || sh[1] != spec.nx)
        throw ContractError("field of shape " + shape_string(sh) + " does not match a " + std::to_string(spec.ny) +
                            "x" + std::to_string(spec.nx) + " grid");
}

std::string_view pollutant_name(Pollutant p) {
    switch (p) {
        case Pollutant::no2: return "no2";
        case Pollutant::o3: return "o3";
        case Pollutant::pm25: return "pm25";
        case Pollutant::pm10: return "pm10";
    }
    return "?";
}

std::string_view pollutant_label(Pollutant p) {
    switch (p) {
        case Pollutant::no2: return "NO2";
        case Pollutant::o3: return "O3";
        case Pollutant::pm25: return "PM2.5";
        case Pollutant::pm10: return "PM10";
    }
    return "?";
}

std::optional<Pollutant> parse_pollutant(std::string_view name) {
    for (auto p : kPollutants)
        if (name == pollutant_name(p)) return p;
    return std::nullopt;
}

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double wrap_lon_delta(double d) {
    while (d > 180.0) d -= 360.0;
    while (d < -180.0) d += 360.0;
    return d;
}

void check_distance(double d_km) {
    if (!(d_km > 0.0)) throw ConfigError("kernel distance must be positive");
}

std::vector<StationValue> values_of(std::span<const StationReading> readings) {
    std::vector<StationValue> out;
    out.reserve(readings.size());
    for (const auto& r : readings) out.push_back({r.location(), r.value});
    return out;
}

}  // namespace

double distance_km(LatLon a, LatLon b) {
    const double dy = kEarthRadiusKm * (b.lat - a.lat) * kDegToRad;
    const double mean_lat = 0.5 * (a.lat + b.lat) * kDegToRad;
    const double dx = kEarthRadiusKm * std::cos(mean_lat) * wrap_lon_delta(b.lon - a.lon) * kDegToRad;
    return std::sqrt(dx * dx + dy * dy);
}

double exp_kernel(LatLon a, LatLon b, double d_km) {
    check_distance(d_km);
    return std::exp(-distance_km(a, b) / d_km);
}

GridField project_stations(std::span<const StationValue> stations, const GridSpec& grid, double d_km) {
    check_distance(d_km);
    grid.validate();
    if (stations.empty()) throw NoDataError("no readings to project");
    Tensor out({grid.ny, grid.nx});
    const auto cells = static_cast<std::int64_t>(grid.cells());
    double* dst = out.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t cell = 0; cell < cells; ++cell) {
        const auto c = grid.center(static_cast<std::size_t>(cell) / grid.nx, static_cast<std::size_t>(cell) % grid.nx);
        double num = 0.0;
        double den = 0.0;
        for (const auto& s : stations) {
            const double w = std::exp(-distance_km(c, s.location) / d_km);
            num += w * s.value;
            den += w;
        }
        // Weights can underflow far from every station; fall back to the nearest one.
        if (den > 0.0) {
            dst[cell] = num / den;
        } else {
            double best = distance_km(c, stations.front().location);
            double value = stations.front().value;
            for (const auto& s : stations) {
                const double d = distance_km(c, s.location);
                if (d < best) {
                    best = d;
                    value = s.value;
                }
            }
            dst[cell] = value;
        }
    }
    return GridField(grid, std::move(out));
}

GridField project_stations(std::span<const StationReading> readings, const GridSpec& grid, double d_km) {
    const auto values = values_of(readings);
    return project_stations(std::span<const StationValue>(values), grid, d_km);
}

namespace reference {

GridField project_stations(std::span<const StationValue> stations, const GridSpec& grid, double d_km) {
    check_distance(d_km);
    if (stations.empty()) throw NoDataError("no readings to project");
    Tensor out({grid.ny, grid.nx});
    for (std::size_t j = 0; j < grid.ny; ++j)
        for (std::size_t i = 0; i < grid.nx; ++i) {
            double num = 0.0;
            double den = 0.0;
            for (const auto& s : stations) {
                const double w = exp_kernel(grid.center(j, i), s.location, d_km);
                num += w * s.value;
                den += w;
            }
            out.at({j, i}) = num / den;
        }
    return GridField(grid, std::move(out));
}

}  // namespace reference

namespace {

// Fractional source index of a coordinate, snapped to integers within
// roundoff and clamped to [0, n-1]. Returns true when clamping was needed.
bool source_index(double coord, double origin, double step, std::size_t n, double& frac) {
    frac = (coord - origin) / step;
    const double nearest = std::round(frac);
    if (std::abs(frac - nearest) < 1e-9) frac = nearest;
    const double hi = static_cast<double>(n - 1);
    if (frac < 0.0) {
        frac = 0.0;
        return true;
    }
    if (frac > hi) {
        frac = hi;
        return true;
    }
    return false;
}

}  // namespace

RegridResult bilinear_regrid(const GridField& src, const GridSpec& dst) {
    src.spec.validate();
    dst.validate();
    const auto& sv = src.values;
    const std::size_t C = sv.rank() == 3 ? sv.dim(2) : 1;
    const auto& s = src.spec;
    Tensor out(sv.rank() == 3 ? Shape{dst.ny, dst.nx, C} : Shape{dst.ny, dst.nx});
    std::size_t clamped = 0;
    for (std::size_t j = 0; j < dst.ny; ++j)
        for (std::size_t i = 0; i < dst.nx; ++i) {
            const auto p = dst.center(j, i);
            double fy = 0.0;
            double fx = 0.0;
            bool outside = source_index(p.lat, s.lat0, s.dlat, s.ny, fy);
            outside = source_index(p.lon, s.lon0, s.dlon, s.nx, fx) || outside;
            clamped += outside ? 1 : 0;
            const auto j0 = s.ny > 1 ? std::min(static_cast<std::size_t>(fy), s.ny - 2) : std::size_t{0};
            const auto i0 = s.nx > 1 ? std::min(static_cast<std::size_t>(fx), s.nx - 2) : std::size_t{0};
            const auto j1 = s.ny > 1 ? j0 + 1 : j0;
            const auto i1 = s.nx > 1 ? i0 + 1 : i0;
            const double ty = fy - static_cast<double>(j0);
            const double tx = fx - static_cast<double>(i0);
            const double w00 = (1.0 - ty) * (1.0 - tx);
            const double w01 = (1.0 - ty) * tx;
            const double w10 = ty * (1.0 - tx);
            const double w11 = ty * tx;
            for (std::size_t c = 0; c < C; ++c) {
                auto at = [&](std::size_t y, std::size_t x) { return sv[(y * s.nx + x) * C + c]; };
                out[(j * dst.nx + i) * C + c] =
                    w00 * at(j0, i0) + w01 * at(j0, i1) + w10 * at(j1, i0) + w11 * at(j1, i1);
            }
        }
    return RegridResult{GridField(dst, std::move(out)), clamped};
}

}  // namespace aqcast
