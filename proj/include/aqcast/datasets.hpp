#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aqcast/geogrid.hpp"
#include "aqcast/tensor.hpp"
#include "aqcast/timeutil.hpp"

namespace aqcast {

// ---- channel layout --------------------------------------------------------
//
// Concentration channels: NO2, O3, PM2.5, PM10.
// Covariate channels: the six weather features below, then the four AQPCM
// pollutant channels in concentration order.

enum class WeatherFeature { temperature = 0, relative_humidity, wind_u, wind_v, pbl_height, precipitation };
inline constexpr std::size_t kNumWeather = 6;
inline constexpr std::size_t kNumCovariates = kNumWeather + kNumPollutants;
inline constexpr std::array<const char*, kNumWeather> kWeatherNames{"temp_k",    "rh_pct", "wind_u_ms",
                                                                   "wind_v_ms", "pblh_m", "precip_mmh"};

std::optional<std::size_t> weather_index(std::string_view name);

/// One sample: n_in projected measurement steps ending at t0, then n_out
/// covariate and target steps at t0 + 3h ... t0 + n_out 3h.
struct Observation {
    Timestamp t0{};
    Tensor history;                // (n_in, ny, nx, 4)
    Tensor covariates;             // (n_out, ny, nx, 10)
    std::optional<Tensor> target;  // (n_out, ny, nx, 4); absent at inference

    std::size_t ny() const { return history.dim(1); }
    std::size_t nx() const { return history.dim(2); }
};

// ---- measurements ----------------------------------------------------------

struct IngestStats {
    std::size_t rows = 0;
    std::size_t accepted = 0;
    std::size_t missing_value = 0;
    std::size_t unsupported_pollutant = 0;
    std::size_t malformed = 0;

    std::size_t warnings() const { return missing_value + unsupported_pollutant + malformed; }
};

// CSV with header station_id,lat,lon,time_utc,pollutant,value_ugm3.
// Rows with an empty value, an unsupported pollutant or a parse failure are
// skipped and counted. DataError when the file cannot be read.
std::vector<StationReading> ingest_measurements(const std::filesystem::path& path, IngestStats* stats = nullptr);
std::vector<StationReading> parse_measurements(std::istream& in, IngestStats* stats = nullptr);
void write_measurements_csv(const std::filesystem::path& path, std::span<const StationReading> readings);

struct OutlierConfig {
    // Upper physical bound per pollutant, ug/m3.
    std::array<double, kNumPollutants> upper_bound{1000.0, 800.0, 1500.0, 2000.0};
    hours window{24};
    double mad_factor = 8.0;
    std::size_t min_window_points = 8;
};

/// Two-stage filter over one station/pollutant series sorted by time:
/// physical bounds, then a rolling-median spike test. Survivors are
/// returned unchanged and in order.
std::vector<StationReading> filter_outliers(std::span<const StationReading> series, const OutlierConfig& cfg = {});

// Groups by station and pollutant, sorts by time and filters each series.
std::vector<StationReading> filter_all_outliers(std::span<const StationReading> readings,
                                                const OutlierConfig& cfg = {});

/// Hourly station readings indexed for 3-hourly sampling.
class MeasurementStore {
public:
    MeasurementStore() = default;
    explicit MeasurementStore(std::span<const StationReading> readings);

    // Each station's value at `at`, or its nearest reading within +-1 h.
    std::vector<StationValue> sample(Pollutant p, Timestamp at) const;

    std::size_t station_count() const { return stations_.size(); }
    std::optional<std::pair<Timestamp, Timestamp>> time_range() const;

private:
    struct Series {
        LatLon location;
        std::array<std::vector<std::pair<Timestamp, double>>, kNumPollutants> values;
    };
    std::vector<Series> stations_;
};

// ---- gridded forecasts -----------------------------------------------------

enum class ForecastKind { weather, aqpcm };

/// One provider run on its native grid. values: (n_valid, ny, nx, n_vars)
/// with variables in covariate order (weather features or pollutants).
struct ForecastRun {
    Timestamp run_time{};
    ForecastKind kind = ForecastKind::weather;
    GridSpec grid;
    std::vector<Timestamp> valid_times;
    Tensor values;

    std::size_t variables() const { return kind == ForecastKind::weather ? kNumWeather : kNumPollutants; }
};

struct ForecastIngestStats {
    std::size_t rows = 0;
    std::size_t malformed = 0;
    std::size_t unknown_variable = 0;
    std::size_t incomplete_valid_times = 0;
    std::size_t runs = 0;
};

// Long-format CSV: run_time_utc,valid_time_utc,lat,lon,variable,value.
// Runs are grouped by (kind, run_time); the native grid is inferred from
// the coordinates and must be regular.
std::vector<ForecastRun> ingest_forecasts(const std::filesystem::path& path, ForecastIngestStats* stats = nullptr);
std::vector<ForecastRun> parse_forecasts(std::istream& in, ForecastIngestStats* stats = nullptr);
void write_forecasts_csv(const std::filesystem::path& path, std::span<const ForecastRun> runs);

/// Native fields of a run at time `at`: the exact valid time when present,
/// linear interpolation between bracketing valid times more than 3 h apart,
/// otherwise the nearest one. nullopt outside the run's horizon.
std::optional<Tensor> forecast_at(const ForecastRun& run, Timestamp at);

class ForecastStore {
public:
    ForecastStore() = default;
    explicit ForecastStore(std::vector<ForecastRun> runs);

    void add(ForecastRun run);
    // Latest run issued at or before t.
    const ForecastRun* latest(ForecastKind kind, Timestamp t) const;
    std::span<const ForecastRun> runs(ForecastKind kind) const;

private:
    std::vector<ForecastRun> weather_;
    std::vector<ForecastRun> aqpcm_;
};

// ---- assembled, grid-projected archive -------------------------------------

/// Covariates of one run regridded to the engine grid at 3-hourly steps
/// first_step + s 3h, first_step being the first aligned time >= issued.
/// fields: (steps, ny, nx, C).
struct RegriddedRun {
    Timestamp issued{};
    Timestamp first_step{};
    Tensor fields;
    std::vector<std::uint8_t> valid;  // per step
};

/// Everything needed to assemble observations without re-projecting: the
/// 3-hourly projected measurement timeline and every forecast run on the
/// engine grid.
struct GriddedArchive {
    GridSpec grid;
    Timestamp start{};
    std::size_t steps = 0;
    Tensor measurements;                 // (steps, ny, nx, 4)
    std::vector<std::uint8_t> available;  // (steps, 4)
    std::vector<RegriddedRun> weather_runs;
    std::vector<RegriddedRun> aqpcm_runs;
    std::size_t clamped_regrid_points = 0;

    Timestamp time_of(std::size_t step) const { return start + kStep * static_cast<int>(step); }
    std::optional<std::size_t> step_of(Timestamp t) const;
};

struct ArchiveOptions {
    double kernel_distance_km = kDefaultKernelDistanceKm;
    // Aligned steps kept per run (covers t0 offsets up to this minus n_out).
    std::size_t run_steps = 48;
};

GriddedArchive build_archive(const MeasurementStore& measurements, const ForecastStore& forecasts,
                             const GridSpec& grid, Timestamp start, Timestamp end, const ArchiveOptions& opt = {});

enum class RejectReason { none, missing_history, missing_target, no_weather_run, no_aqpcm_run, not_aligned };
std::string_view reject_reason_name(RejectReason r);

struct AssemblyResult {
    std::optional<Observation> observation;
    RejectReason reason = RejectReason::none;
};

AssemblyResult assemble_observation(const GriddedArchive& archive, Timestamp t0, std::size_t n_in,
                                    std::size_t n_out, bool with_target = true);

// Same checks as assemble_observation without materializing tensors.
RejectReason check_observation(const GriddedArchive& archive, Timestamp t0, std::size_t n_in, std::size_t n_out,
                               bool with_target = true);

struct ObservationScan {
    std::vector<Timestamp> accepted;
    std::map<RejectReason, std::size_t> rejected;
};

// Every aligned t0 of the archive timeline, accepted or counted by reason.
ObservationScan scan_observations(const GriddedArchive& archive, std::size_t n_in, std::size_t n_out);

/// Single-observation assembly straight from the stores. Throws DataError
/// naming the rejection reason.
Observation assemble_observation(Timestamp t0, const MeasurementStore& measurements, const ForecastStore& forecasts,
                                 const GridSpec& grid, std::size_t n_in, std::size_t n_out, bool with_target,
                                 const ArchiveOptions& opt = {});

// ---- split, crops ----------------------------------------------------------

struct SplitConfig {
    std::set<unsigned> eval_months{3, 6, 9, 12};
    int buffer_days = 4;

    void validate() const;
};

struct Split {
    std::vector<Timestamp> train;
    std::vector<Timestamp> eval;
};

/// eval: t0 in an eval month. train: the rest, minus anything closer than
/// buffer_days to an eval t0. Output is sorted.
Split split_train_eval(std::span<const Timestamp> t0s, const SplitConfig& cfg);

/// Same uniformly drawn window cut from history, covariates and target.
Observation sample_subgrid(const Observation& obs, std::mt19937_64& rng, std::size_t height = 20,
                           std::size_t width = 20);
Observation crop(const Observation& obs, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width);

// ---- observation sets ------------------------------------------------------

struct FeatureMask {
    bool zero_weather = false;
    bool zero_aqpcm = false;
};

/// Observations assembled on demand from a shared archive.
class ObservationSet {
public:
    ObservationSet() = default;
    ObservationSet(std::shared_ptr<const GriddedArchive> archive, std::vector<Timestamp> t0s, std::size_t n_in,
                   std::size_t n_out, FeatureMask mask = {});

    std::size_t size() const { return t0s_.size(); }
    bool empty() const { return t0s_.empty(); }
    Timestamp t0(std::size_t i) const { return t0s_.at(i); }
    std::span<const Timestamp> t0s() const { return t0s_; }
    std::size_t n_in() const { return n_in_; }
    std::size_t n_out() const { return n_out_; }
    const GridSpec& grid() const { return archive_->grid; }
    const GriddedArchive& archive() const { return *archive_; }
    FeatureMask mask() const { return mask_; }

    Observation get(std::size_t i) const;

    ObservationSet with_history(std::size_t n_in) const;
    ObservationSet with_mask(FeatureMask mask) const;

private:
    std::shared_ptr<const GriddedArchive> archive_;
    std::vector<Timestamp> t0s_;
    std::size_t n_in_ = 8;
    std::size_t n_out_ = 32;
    FeatureMask mask_;
};

}  // namespace aqcast
