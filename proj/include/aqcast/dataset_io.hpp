#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aqcast/datasets.hpp"

namespace aqcast {

nlohmann::json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const nlohmann::json& j);  // ConfigError

/// Input of dataset building. Relative file paths resolve against base_dir
/// (the manifest's directory when loaded from disk).
struct DatasetManifest {
    std::vector<std::filesystem::path> measurements;
    std::vector<std::filesystem::path> weather;
    std::vector<std::filesystem::path> aqpcm;
    GridSpec grid;
    Timestamp start{};
    Timestamp end{};
    std::size_t n_in = 8;
    std::size_t n_out = 32;
    SplitConfig split;
    double kernel_distance_km = kDefaultKernelDistanceKm;
    std::filesystem::path base_dir;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path base_dir = {});
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

struct BuildReport {
    IngestStats measurements;
    ForecastIngestStats forecasts;
    std::size_t outliers_dropped = 0;
    std::map<RejectReason, std::size_t> rejected;
    std::size_t accepted = 0;
    std::size_t train = 0;
    std::size_t eval = 0;
    std::size_t split_discarded = 0;
    std::size_t clamped_regrid_points = 0;

    std::string summary() const;
};

/// Archive plus the split of its accepted observation times.
struct Dataset {
    std::shared_ptr<const GriddedArchive> archive;
    std::size_t n_in = 8;
    std::size_t n_out = 32;
    SplitConfig split;
    std::vector<Timestamp> train;
    std::vector<Timestamp> eval;

    ObservationSet train_set() const { return {archive, train, n_in, n_out}; }
    ObservationSet eval_set() const { return {archive, eval, n_in, n_out}; }
};

// Filter, project, assemble and split already-parsed inputs.
Dataset build_dataset(std::span<const StationReading> readings, std::vector<ForecastRun> runs, const GridSpec& grid,
                      Timestamp start, Timestamp end, std::size_t n_in, std::size_t n_out, const SplitConfig& split,
                      double kernel_distance_km = kDefaultKernelDistanceKm, BuildReport* report = nullptr);

// Ingest the manifest's files, then as above.
Dataset build_dataset(const DatasetManifest& manifest, BuildReport* report = nullptr);

// dataset.json (metadata and split) and archive.bin in `dir`.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Stores read from a directory holding a manifest (as written by synth).
struct StoreBundle {
    MeasurementStore measurements;
    ForecastStore forecasts;
    GridSpec grid;
};
StoreBundle load_stores(const std::filesystem::path& dir);

}  // namespace aqcast
