#include "aqcast/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numbers>
#include <random>

#include "aqcast/dataset_io.hpp"
#include "aqcast/error.hpp"

namespace aqcast {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDeg = std::numbers::pi / 180.0;

constexpr std::array<double, kNumPollutants> kLevel{25.0, 55.0, 12.0, 20.0};
// Daily cycle amplitude and peak hour per pollutant.
constexpr std::array<double, kNumPollutants> kDiurnalAmp{0.4, 0.45, 0.2, 0.25};
constexpr std::array<double, kNumPollutants> kDiurnalPeak{8.0, 15.0, 9.0, 10.0};
// Boundary-layer dilution exponent; ozone is not emitted locally.
constexpr std::array<double, kNumPollutants> kDilution{0.35, 0.0, 0.3, 0.3};

// Forecast error scale per weather feature.
constexpr std::array<double, kNumWeather> kWeatherNoise{1.5, 5.0, 1.0, 1.0, 100.0, 0.3};

double lead_hours(Timestamp run, Timestamp valid) { return std::chrono::duration<double, std::ratio<3600>>(valid - run).count(); }

// Deterministic uniform in [0, 1) from integer keys.
double hash_unit(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL) * 0xBF58476D1CE4E5B9ULL ^
                      (c + 0x85EBCA77C2B2AE63ULL) * 0x94D049BB133111EBULL;
    x ^= x >> 31;
    x *= 0xD6E8FEB86659FD93ULL;
    x ^= x >> 32;
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

GridSpec native_grid(const GridSpec& g, double step, double margin) {
    GridSpec n;
    n.lat0 = g.lat0 - margin;
    n.lon0 = g.lon0 - margin;
    n.dlat = step;
    n.dlon = step;
    n.ny = static_cast<std::size_t>(std::ceil((static_cast<double>(g.ny - 1) * g.dlat + 2 * margin) / step)) + 1;
    n.nx = static_cast<std::size_t>(std::ceil((static_cast<double>(g.nx - 1) * g.dlon + 2 * margin) / step)) + 1;
    return n;
}

}  // namespace

// ---- config ----------------------------------------------------------------

SynthConfig::SynthConfig() {
    using namespace std::chrono;
    start = sys_days{year{2019} / February / 1};
}

void SynthConfig::validate() const {
    grid.validate();
    if (stations == 0) throw ConfigError("synthetic config needs at least one station");
    if (days == 0) throw ConfigError("synthetic config needs at least one day");
    if (!aligned_to_step(start) || hour_of_day(start) != 0) throw ConfigError("synthetic start must be 00:00 UTC");
    if (weather_horizon_h < 3 || aqpcm_horizon_h < 3) throw ConfigError("forecast horizons must be >= 3 h");
    if (missing_rate < 0 || missing_rate >= 1 || spike_rate < 0 || spike_rate >= 1)
        throw ConfigError("missing and spike rates must be in [0, 1)");
    if (station_noise < 0 || aqpcm_sigma_start < 0 || aqpcm_sigma_end < 0 || wind_speed_ms <= 0)
        throw ConfigError("noise scales must be non-negative and wind speed positive");
}

Timestamp SynthConfig::end() const { return start + std::chrono::days{days} - hours{1}; }

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    try {
        if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
        c.stations = j.value("stations", c.stations);
        if (j.contains("start")) c.start = parse_time(j.at("start").get<std::string>());
        c.days = j.value("days", c.days);
        c.wind_speed_ms = j.value("wind_speed_ms", c.wind_speed_ms);
        c.wind_direction_deg = j.value("wind_direction_deg", c.wind_direction_deg);
        c.plume_sources = j.value("plume_sources", c.plume_sources);
        c.weather_horizon_h = j.value("weather_horizon_h", c.weather_horizon_h);
        c.aqpcm_horizon_h = j.value("aqpcm_horizon_h", c.aqpcm_horizon_h);
        c.station_noise = j.value("station_noise", c.station_noise);
        c.missing_rate = j.value("missing_rate", c.missing_rate);
        c.spike_rate = j.value("spike_rate", c.spike_rate);
        c.aqpcm_sigma_start = j.value("aqpcm_sigma_start", c.aqpcm_sigma_start);
        c.aqpcm_sigma_end = j.value("aqpcm_sigma_end", c.aqpcm_sigma_end);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json SynthConfig::to_json() const {
    return {{"grid", grid_to_json(grid)},
            {"stations", stations},
            {"start", format_time(start)},
            {"days", days},
            {"wind_speed_ms", wind_speed_ms},
            {"wind_direction_deg", wind_direction_deg},
            {"plume_sources", plume_sources},
            {"weather_horizon_h", weather_horizon_h},
            {"aqpcm_horizon_h", aqpcm_horizon_h},
            {"station_noise", station_noise},
            {"missing_rate", missing_rate},
            {"spike_rate", spike_rate},
            {"aqpcm_sigma_start", aqpcm_sigma_start},
            {"aqpcm_sigma_end", aqpcm_sigma_end}};
}

// ---- truth -----------------------------------------------------------------

SyntheticTruth::SyntheticTruth(const SynthConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto& g = cfg_.grid;
    const double lat_span = static_cast<double>(g.ny - 1) * g.dlat;
    const double lon_span = static_cast<double>(g.nx - 1) * g.dlon;
    for (std::size_t k = 0; k < cfg_.plume_sources; ++k) {
        Source s;
        s.location = {g.lat0 + u01(rng) * lat_span, g.lon0 + u01(rng) * lon_span};
        for (std::size_t p = 0; p < kNumPollutants; ++p) s.strength[p] = (p == 1 ? 0.1 : 0.6) + 0.8 * u01(rng);
        sources_.push_back(s);
    }
    for (auto& waves : synoptic_)
        for (int k = 0; k < 3; ++k) waves.push_back({0.2 + 0.1 * u01(rng), 40.0 + 160.0 * u01(rng), kTwoPi * u01(rng)});
    for (int k = 0; k < 2; ++k) wind_waves_.push_back({1.0, 60.0 + 120.0 * u01(rng), kTwoPi * u01(rng)});
    for (std::size_t p = 0; p < kNumPollutants; ++p) {
        phase_lat_[p] = kTwoPi * u01(rng);
        phase_lon_[p] = kTwoPi * u01(rng);
    }
    noise_seed_ = rng();
}

double SyntheticTruth::hours_since_start(Timestamp t) const {
    return std::chrono::duration<double, std::ratio<3600>>(t - cfg_.start).count();
}

double SyntheticTruth::synoptic(std::size_t p, double h) const {
    double s = 0.0;
    for (const auto& w : synoptic_[p]) s += w.amplitude * std::sin(kTwoPi * h / w.period_h + w.phase);
    return std::exp(s);
}

double SyntheticTruth::wind_angle(double h) const {
    double a = cfg_.wind_direction_deg * kDeg;
    a += 1.2 * std::sin(kTwoPi * h / wind_waves_[0].period_h + wind_waves_[0].phase);
    return a;
}

double SyntheticTruth::pbl_height(LatLon at, double h) const {
    const double hd = std::fmod(h, 24.0);
    const double day = std::max(0.0, std::sin(kTwoPi * (hd - 6.0) / 24.0));
    const double synop = 1.0 + 0.3 * std::sin(kTwoPi * h / wind_waves_[1].period_h + wind_waves_[1].phase);
    return (250.0 + 1000.0 * day * synop) * (1.0 + 0.05 * (at.lat - cfg_.grid.lat0));
}

std::array<double, kNumWeather> SyntheticTruth::weather(LatLon at, Timestamp t) const {
    const double h = hours_since_start(t);
    const double hd = std::fmod(h, 24.0);
    const double synop = std::sin(kTwoPi * h / wind_waves_[1].period_h + wind_waves_[1].phase);
    const double speed =
        cfg_.wind_speed_ms * (1.0 + 0.4 * std::sin(kTwoPi * h / wind_waves_[1].period_h + wind_waves_[0].phase));
    const double angle = wind_angle(h);
    std::array<double, kNumWeather> w{};
    w[0] = 283.0 + 6.0 * std::sin(kTwoPi * (hd - 9.0) / 24.0) + 4.0 * synop - 0.6 * (at.lat - cfg_.grid.lat0);
    w[1] = std::clamp(70.0 - 15.0 * std::sin(kTwoPi * (hd - 9.0) / 24.0) + 10.0 * synop, 5.0, 100.0);
    w[2] = speed * std::cos(angle);
    w[3] = speed * std::sin(angle);
    w[4] = pbl_height(at, h);
    w[5] = std::max(0.0, 2.0 * std::sin(kTwoPi * h / 80.0 + wind_waves_[0].phase) - 1.2);
    return w;
}

double SyntheticTruth::concentration(Pollutant pol, LatLon at, Timestamp t) const {
    const auto p = static_cast<std::size_t>(pol);
    const double h = hours_since_start(t);
    const double hd = std::fmod(h, 24.0);
    const auto& g = cfg_.grid;
    const double baseline = 1.0 + 0.3 * std::sin(kTwoPi * (at.lat - g.lat0) / 4.0 + phase_lat_[p]) *
                                      std::cos(kTwoPi * (at.lon - g.lon0) / 5.0 + phase_lon_[p]);
    const double diurnal = 1.0 + kDiurnalAmp[p] * std::cos(kTwoPi * (hd - kDiurnalPeak[p]) / 24.0);
    const double dilution = std::pow(700.0 / pbl_height(at, h), kDilution[p]);

    // Steady plumes along the current wind, decaying over ~30 km per m/s.
    const auto wx = weather(at, t);
    const double speed = std::hypot(wx[2], wx[3]);
    const double ex = wx[2] / speed, ey = wx[3] / speed;
    const double decay_km = 30.0 * speed;
    double plume = 0.0;
    for (const auto& s : sources_) {
        const double dy = kEarthRadiusKm * (at.lat - s.location.lat) * kDeg;
        const double dx = kEarthRadiusKm * std::cos(0.5 * (at.lat + s.location.lat) * kDeg) *
                          (at.lon - s.location.lon) * kDeg;
        const double along = dx * ex + dy * ey;
        const double cross = -dx * ey + dy * ex;
        double c = std::exp(-(dx * dx + dy * dy) / (2.0 * 15.0 * 15.0));
        if (along > 0.0) {
            const double sigma = 10.0 + 0.2 * along;
            c += std::exp(-along / decay_km) * std::exp(-cross * cross / (2.0 * sigma * sigma));
        }
        plume += s.strength[p] * c;
    }
    const auto step = static_cast<std::uint64_t>(std::max(0.0, std::floor(h)));
    const double noise = 0.5 * hash_unit(noise_seed_, p, step);
    const double value = kLevel[p] * (baseline * diurnal * synoptic(p, h) + plume) * dilution + noise;
    return std::max(0.0, value);
}

GridField SyntheticTruth::field(Pollutant p, const GridSpec& grid, Timestamp t) const {
    Tensor v({grid.ny, grid.nx});
    for (std::size_t j = 0; j < grid.ny; ++j)
        for (std::size_t i = 0; i < grid.nx; ++i) v.at({j, i}) = concentration(p, grid.center(j, i), t);
    return GridField(grid, std::move(v));
}

// ---- generator -------------------------------------------------------------

namespace {

std::vector<Timestamp> weather_valid_times(Timestamp run, std::size_t horizon_h) {
    // 3-hourly to 72 h, 6-hourly afterwards.
    std::vector<Timestamp> out;
    for (std::size_t h = 0; h <= horizon_h; h += h < 72 ? 3 : 6) out.push_back(run + hours{h});
    return out;
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SyntheticData data;
    data.config = cfg;
    data.seed = seed;
    const SyntheticTruth truth(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto& g = cfg.grid;

    // Stations anywhere inside the grid's cell boundaries.
    std::vector<LatLon> stations;
    for (std::size_t k = 0; k < cfg.stations; ++k) {
        const double lat = g.lat0 - 0.5 * g.dlat + u01(rng) * static_cast<double>(g.ny) * g.dlat;
        const double lon = g.lon0 - 0.5 * g.dlon + u01(rng) * static_cast<double>(g.nx) * g.dlon;
        stations.push_back({lat, lon});
    }
    const auto hours_total = cfg.days * 24;
    for (std::size_t k = 0; k < stations.size(); ++k) {
        const auto id = fmt::format("S{:03d}", k + 1);
        for (auto p : kPollutants)
            for (std::size_t hh = 0; hh < hours_total; ++hh) {
                const auto t = cfg.start + hours{hh};
                const double eps = normal(rng);
                const double miss = u01(rng);
                const double spike = u01(rng);
                if (miss < cfg.missing_rate) continue;
                double value = truth.concentration(p, stations[k], t) * std::exp(cfg.station_noise * eps);
                if (spike < cfg.spike_rate) value *= 25.0;
                data.readings.push_back({id, stations[k].lat, stations[k].lon, t, p, value});
            }
    }

    // One run of each kind per day at 00 UTC, starting the day before the data.
    const auto wgrid = native_grid(g, 1.0, 1.0);
    const auto qgrid = native_grid(g, 0.5, 0.75);
    for (std::size_t d = 0; d <= cfg.days; ++d) {
        const Timestamp run = cfg.start + std::chrono::days{d} - std::chrono::days{1};

        ForecastRun w;
        w.run_time = run;
        w.kind = ForecastKind::weather;
        w.grid = wgrid;
        w.valid_times = weather_valid_times(run, cfg.weather_horizon_h);
        w.values = Tensor({w.valid_times.size(), wgrid.ny, wgrid.nx, kNumWeather});
        for (std::size_t t = 0; t < w.valid_times.size(); ++t) {
            const double growth = 0.2 + lead_hours(run, w.valid_times[t]) / static_cast<double>(cfg.weather_horizon_h);
            for (std::size_t j = 0; j < wgrid.ny; ++j)
                for (std::size_t i = 0; i < wgrid.nx; ++i) {
                    auto v = truth.weather(wgrid.center(j, i), w.valid_times[t]);
                    for (std::size_t f = 0; f < kNumWeather; ++f) v[f] += kWeatherNoise[f] * growth * normal(rng);
                    v[1] = std::clamp(v[1], 0.0, 100.0);
                    v[4] = std::max(v[4], 50.0);
                    v[5] = std::max(v[5], 0.0);
                    for (std::size_t f = 0; f < kNumWeather; ++f) w.values.at({t, j, i, f}) = v[f];
                }
        }
        data.weather.push_back(std::move(w));

        ForecastRun q;
        q.run_time = run;
        q.kind = ForecastKind::aqpcm;
        q.grid = qgrid;
        for (std::size_t h = 0; h <= cfg.aqpcm_horizon_h; h += 3) q.valid_times.push_back(run + hours{h});
        q.values = Tensor({q.valid_times.size(), qgrid.ny, qgrid.nx, kNumPollutants});
        for (std::size_t t = 0; t < q.valid_times.size(); ++t) {
            const double frac = lead_hours(run, q.valid_times[t]) / static_cast<double>(cfg.aqpcm_horizon_h);
            const double sigma = cfg.aqpcm_sigma_start + (cfg.aqpcm_sigma_end - cfg.aqpcm_sigma_start) * frac;
            // Half of the log-variance is a field-wide bias, half is per cell.
            const double s = sigma * std::sqrt(0.5);
            std::array<double, kNumPollutants> bias{};
            for (auto& b : bias) b = s * normal(rng);
            for (std::size_t j = 0; j < qgrid.ny; ++j)
                for (std::size_t i = 0; i < qgrid.nx; ++i)
                    for (std::size_t p = 0; p < kNumPollutants; ++p) {
                        const double c = truth.concentration(kPollutants[p], qgrid.center(j, i), q.valid_times[t]);
                        const double e = bias[p] + s * normal(rng);
                        q.values.at({t, j, i, p}) = c * std::exp(e - 0.5 * sigma * sigma);
                    }
        }
        data.aqpcm.push_back(std::move(q));
    }
    return data;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_measurements_csv(dir / "measurements.csv", data.readings);
    write_forecasts_csv(dir / "weather.csv", data.weather);
    write_forecasts_csv(dir / "aqpcm.csv", data.aqpcm);
    DatasetManifest m;
    m.measurements = {"measurements.csv"};
    m.weather = {"weather.csv"};
    m.aqpcm = {"aqpcm.csv"};
    m.grid = data.config.grid;
    m.start = data.config.start;
    m.end = data.config.end();
    save_manifest(m, dir / "manifest.json");
    nlohmann::json info = data.config.to_json();
    info["seed"] = data.seed;
    std::ofstream(dir / "synth_config.json") << info.dump(2) << "\n";
}

}  // namespace aqcast
