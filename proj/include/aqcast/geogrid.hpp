#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "aqcast/tensor.hpp"
#include "aqcast/timeutil.hpp"

namespace aqcast {

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

/// Regular lat/lon grid; cell (j, i) is centred at (lat0 + j dlat, lon0 + i dlon).
struct GridSpec {
    double lat0 = 0.0;
    double lon0 = 0.0;
    double dlat = 0.5;
    double dlon = 0.5;
    std::size_t ny = 1;
    std::size_t nx = 1;

    void validate() const;  // ConfigError
    LatLon center(std::size_t j, std::size_t i) const {
        return {lat0 + static_cast<double>(j) * dlat, lon0 + static_cast<double>(i) * dlon};
    }
    std::size_t cells() const { return ny * nx; }
    bool operator==(const GridSpec&) const = default;
};

/// Scalar (ny, nx) or multi-channel (ny, nx, C) field on a grid.
struct GridField {
    GridSpec spec;
    Tensor values;

    GridField() = default;
    GridField(GridSpec s, Tensor v);
};

enum class Pollutant { no2 = 0, o3 = 1, pm25 = 2, pm10 = 3 };
inline constexpr std::size_t kNumPollutants = 4;
inline constexpr std::array<Pollutant, kNumPollutants> kPollutants{Pollutant::no2, Pollutant::o3, Pollutant::pm25,
                                                                  Pollutant::pm10};

std::string_view pollutant_name(Pollutant p);    // "no2", "o3", "pm25", "pm10"
std::string_view pollutant_label(Pollutant p);   // "NO2", "O3", "PM2.5", "PM10"
std::optional<Pollutant> parse_pollutant(std::string_view name);

struct StationReading {
    std::string station_id;
    double lat = 0.0;
    double lon = 0.0;
    Timestamp time{};
    Pollutant pollutant = Pollutant::no2;
    double value = 0.0;  // ug/m3

    LatLon location() const { return {lat, lon}; }
};

/// A located value entering a projection.
struct StationValue {
    LatLon location;
    double value = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultKernelDistanceKm = 100.0;

// Equirectangular distance: dy = R dlat, dx = R cos(mean lat) dlon.
double distance_km(LatLon a, LatLon b);

// exp(-distance / d). ConfigError for d <= 0.
double exp_kernel(LatLon a, LatLon b, double d_km);

/// Kernel-weighted average of every supplied value at each cell centre.
/// NoDataError for an empty set, ConfigError for d <= 0.
GridField project_stations(std::span<const StationValue> stations, const GridSpec& grid,
                           double d_km = kDefaultKernelDistanceKm);
GridField project_stations(std::span<const StationReading> readings, const GridSpec& grid,
                           double d_km = kDefaultKernelDistanceKm);

struct RegridResult {
    GridField field;
    std::size_t clamped_points = 0;  // destination cells outside the source coverage
    bool coverage_warning() const { return clamped_points > 0; }
};

/// Bilinear interpolation from the four surrounding source cell centres.
/// Destination points outside the source box are clamped to its border.
RegridResult bilinear_regrid(const GridField& src, const GridSpec& dst);

namespace reference {
GridField project_stations(std::span<const StationValue> stations, const GridSpec& grid, double d_km);
}

}  // namespace aqcast
