#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aqcast/dataset_io.hpp"
#include "aqcast/engine.hpp"

namespace aqcast {

// ---- benchmark forecasters ---------------------------------------------------

// Repeats the last history field (N_in, ny, nx, 4) for n_out steps.
Tensor constant_benchmark(const Tensor& history, std::size_t n_out);

inline constexpr std::size_t kSlotsPerDay = 8;  // 3 h slots
std::size_t slot_of(Timestamp t);

/// Daily-cycle ratios per pollutant and cell. Stores the mean concentration
/// of each 3 h slot; factor(h0 -> h1) = mean[h1] / mean[h0], and 1 wherever
/// either mean is non-positive, for h0 == h1, or outside the fitted grid.
class AdjustmentFactors {
public:
    AdjustmentFactors() = default;
    // Identity factors (every mean equal) for an ny x nx grid.
    AdjustmentFactors(std::size_t ny, std::size_t nx);
    explicit AdjustmentFactors(Tensor slot_means);  // (ny, nx, 4, 8)

    double factor(Pollutant p, std::size_t y, std::size_t x, std::size_t from_slot, std::size_t to_slot) const;
    const Tensor& slot_means() const { return means_; }
    std::size_t ny() const { return means_.rank() ? means_.dim(0) : 0; }
    std::size_t nx() const { return means_.rank() ? means_.dim(1) : 0; }

    // (pollutant, cell) pairs where some slot mean was non-positive.
    std::size_t fallback_cells = 0;
    std::vector<std::string> warnings;

private:
    Tensor means_;
};

// Slot means over every history timestep of every observation in the set.
AdjustmentFactors fit_adjustment_factors(const ObservationSet& train);

// forecast[t] = last history field * factor(slot(t0) -> slot(t0 + (t+1)*3h)).
Tensor adjusted_benchmark(const Tensor& history, Timestamp t0, const AdjustmentFactors& factors, std::size_t n_out);

// ---- evaluation --------------------------------------------------------------

// Maps one observation to a (N_out, ny, nx, 4) forecast. Must be safe to call
// concurrently.
using Forecaster = std::function<Tensor(const Observation&)>;

struct NamedForecaster {
    std::string name;
    Forecaster forecast;
};

inline constexpr const char* kConstantName = "Cst";
inline constexpr const char* kAdjustedName = "Cst adj.";
inline constexpr const char* kModelName = "Model";

NamedForecaster constant_forecaster(std::size_t n_out);
NamedForecaster adjusted_forecaster(AdjustmentFactors factors, std::size_t n_out);
NamedForecaster model_forecaster(const ModelParams& params);

/// Mean MSLE per (forecaster, pollutant, horizon step) over observations and
/// cells, with 24 h and 96 h aggregates.
struct EvalReport {
    std::vector<std::string> forecasters;
    std::size_t n_out = 0;
    std::size_t observations = 0;
    Tensor msle;  // (forecasters, 4, n_out)

    std::size_t index_of(const std::string& forecaster) const;  // ContractError if absent
    double entry(std::size_t f, Pollutant p, std::size_t step) const;  // step is 1-based
    // Mean over steps with step * 3 h <= hours.
    double aggregate(std::size_t f, Pollutant p, int hours) const;
    // Mean of aggregate() over pollutants.
    double global(std::size_t f, int hours) const;
    double global(const std::string& forecaster, int hours) const { return global(index_of(forecaster), hours); }

    // Long CSV: forecaster,pollutant,horizon_h,msle (one row per entry).
    std::string per_horizon_csv() const;
    // pollutant,horizon,<forecaster>... with 24 h and 96 h aggregates and a global row.
    std::string summary_csv() const;
    std::string table() const;
};

// Full-grid evaluation. ConfigError on an empty set or no forecasters.
EvalReport evaluate(std::span<const NamedForecaster> forecasters, const ObservationSet& eval);

// ---- ablations ---------------------------------------------------------------

enum class Ablation { all_features, no_history, no_aqpcm, no_weather, kernel1, kernel3, kernel5 };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);  // ConfigError
std::vector<Ablation> all_ablations();

struct AblationResult {
    Ablation variant{};
    ModelConfig config;
    std::size_t parameters = 0;
    TrainHistory history;
    EvalReport report;  // single "Model" column
};

/// Trains and evaluates one variant. The base config's grid, n_in and n_out
/// are taken from the dataset; the seed is left untouched so that variants
/// differ only in what the variant changes.
AblationResult run_ablation(const Dataset& data, const ModelConfig& base, Ablation variant);

// Rows per variant: parameters, 24 h and 96 h global MSLE.
std::string ablation_table(std::span<const AblationResult> results);
std::string ablation_csv(std::span<const AblationResult> results);

}  // namespace aqcast
