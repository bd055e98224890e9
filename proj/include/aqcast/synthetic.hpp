#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "aqcast/datasets.hpp"

namespace aqcast {

struct SynthConfig {
    GridSpec grid{44.0, 2.0, 0.5, 0.5, 16, 16};
    std::size_t stations = 40;
    Timestamp start{};  // 00:00 UTC of the first day
    std::size_t days = 90;

    // Wind regime: mean speed and the direction the wind blows towards.
    double wind_speed_ms = 5.0;
    double wind_direction_deg = 60.0;
    std::size_t plume_sources = 4;

    std::size_t weather_horizon_h = 120;
    std::size_t aqpcm_horizon_h = 120;

    double station_noise = 0.05;  // log-scale sd
    double missing_rate = 0.01;
    double spike_rate = 0.0005;
    double aqpcm_sigma_start = 0.1;  // log-scale error sd at lead 0
    double aqpcm_sigma_end = 0.5;    // at the end of the AQPCM horizon

    SynthConfig();
    void validate() const;
    static SynthConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    Timestamp end() const;  // last hourly reading
};

/// Closed-form ground truth: per-cell baseline with a daily cycle and a
/// multi-day synoptic modulation, diluted by the boundary layer, plus
/// Gaussian plumes from fixed sources advected along the wind.
class SyntheticTruth {
public:
    SyntheticTruth(const SynthConfig& cfg, std::uint64_t seed);

    double concentration(Pollutant p, LatLon at, Timestamp t) const;
    GridField field(Pollutant p, const GridSpec& grid, Timestamp t) const;

    // True weather in covariate order.
    std::array<double, kNumWeather> weather(LatLon at, Timestamp t) const;

private:
    struct Source {
        LatLon location;
        std::array<double, kNumPollutants> strength;
    };
    struct Wave {
        double amplitude, period_h, phase;
    };
    double hours_since_start(Timestamp t) const;
    double synoptic(std::size_t p, double h) const;
    double wind_angle(double h) const;
    double pbl_height(LatLon at, double h) const;

    SynthConfig cfg_;
    std::vector<Source> sources_;
    std::array<std::vector<Wave>, kNumPollutants> synoptic_;
    std::vector<Wave> wind_waves_;
    std::array<double, kNumPollutants> phase_lat_{}, phase_lon_{};
    std::uint64_t noise_seed_ = 0;
};

struct SyntheticData {
    SynthConfig config;
    std::uint64_t seed = 0;
    std::vector<StationReading> readings;
    std::vector<ForecastRun> weather;
    std::vector<ForecastRun> aqpcm;
};

SyntheticData generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

// measurements.csv, weather.csv, aqpcm.csv and a manifest.json pointing at them.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace aqcast
