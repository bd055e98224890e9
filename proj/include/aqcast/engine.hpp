#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aqcast/datasets.hpp"
#include "aqcast/nn.hpp"

namespace aqcast {

struct LayerSpec {
    std::size_t hidden = 32;
    std::size_t kernel = 3;
    bool operator==(const LayerSpec&) const = default;
};

struct ModelConfig {
    GridSpec grid;
    std::size_t n_in = 8;
    std::size_t n_out = 32;
    std::vector<LayerSpec> encoder{{64, 3}, {32, 3}};
    std::vector<LayerSpec> f_encoder{{64, 3}, {32, 3}};
    std::vector<LayerSpec> decoder{{64, 3}, {32, 3}};
    std::size_t batch_size = 16;
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::size_t subgrid_height = 20;
    std::size_t subgrid_width = 20;
    std::uint64_t seed = 2019;
    // Divide concentration inputs by the per-pollutant training mean and
    // multiply the head output back; see docs/model.md.
    bool scale_concentrations = true;

    void validate() const;  // ConfigError
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);  // unspecified keys keep their defaults

    // Same kernel size in every block of the three stacks.
    ModelConfig with_kernel(std::size_t k) const;
};

/// Per-channel input transforms fitted on the training set.
struct Normalization {
    std::array<double, kNumWeather> weather_mean{};
    std::array<double, kNumWeather> weather_std{1, 1, 1, 1, 1, 1};
    std::array<double, kNumPollutants> concentration_scale{1, 1, 1, 1};
    bool fitted = false;
};

struct ConvLstmStack {
    std::vector<nn::ConvLstmParams> blocks;
    std::vector<nn::BatchNormParams> norms;
};

struct ModelParams {
    ModelConfig config;
    ConvLstmStack encoder;
    ConvLstmStack f_encoder;
    ConvLstmStack decoder;
    Tensor head_w;  // (1, 1, H_dec + H_f_enc, 4)
    Tensor head_b;  // (4)
    Normalization norm;

    // Learnable tensors in a fixed order, with stable names.
    std::vector<Tensor*> trainable();
    std::vector<const Tensor*> trainable() const;
    std::vector<std::string> trainable_names() const;
    std::size_t parameter_count() const;
};

ModelParams build_model(const ModelConfig& cfg);

// Mean/std of every weather channel and mean of every target pollutant over
// the observations.
Normalization fit_normalization(const ObservationSet& set, bool scale_concentrations);

/// Observations stacked on a batch axis after time:
/// history (N_in, B, H, W, 4), covariates (N_out, B, H, W, 10), target (N_out, B, H, W, 4).
struct Batch {
    Tensor history;
    Tensor covariates;
    std::optional<Tensor> target;
};
Batch make_batch(std::span<const Observation> obs);

/// Graph of the full model on `tape`. Inputs are raw (unnormalized); the
/// prediction is in ug/m3 with shape (N_out, B, H, W, 4). Train mode updates
/// the batch-norm running statistics in `params`.
ad::Var forward_graph(ad::Tape& tape, ModelParams& params, std::span<const ad::Var> vars, const Tensor& history,
                      const Tensor& covariates, nn::NormMode mode);

// Inference forward. history (N_in, H, W, 4) or (N_in, B, H, W, 4); output matches.
Tensor forward(const ModelParams& params, const Tensor& history, const Tensor& covariates);

struct TrainOptions {
    const ObservationSet* eval = nullptr;  // per-epoch eval loss when set
    std::optional<std::size_t> epochs;     // overrides config.epochs
    std::function<void(std::size_t epoch, double train_loss, std::optional<double> eval_loss)> on_epoch;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> eval_loss;
    std::size_t steps = 0;
};

/// Seeded shuffle, one random crop per observation, MSLE, Adam. Fits the
/// normalization first unless params.norm is already fitted. ConfigError on
/// an empty set; NumericalError on a non-finite loss.
TrainHistory train(ModelParams& params, const ObservationSet& train_set, const TrainOptions& options = {});

// Full-grid MSLE averaged over observations (infer mode).
double mean_loss(const ModelParams& params, const ObservationSet& set);

struct Forecast {
    Timestamp t0{};
    GridSpec grid;
    std::vector<Timestamp> valid_times;
    Tensor values;  // (N_out, ny, nx, 4), ug/m3
};

Forecast predict(const ModelParams& params, const MeasurementStore& measurements, const ForecastStore& forecasts,
                 Timestamp t0);

inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);  // FormatError, VersionError

}  // namespace aqcast
