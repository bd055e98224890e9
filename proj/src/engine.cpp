#include "aqcast/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <numeric>
#include <type_traits>

#include "aqcast/container.hpp"
#include "aqcast/dataset_io.hpp"
#include "aqcast/error.hpp"

namespace aqcast {

// ---- config ----------------------------------------------------------------

namespace {

void validate_stack(const std::vector<LayerSpec>& stack, const char* name) {
    if (stack.empty()) throw ConfigError(std::string(name) + " stack needs at least one block");
    for (const auto& l : stack) {
        if (l.hidden == 0) throw ConfigError(std::string(name) + " block hidden size must be positive");
        if (l.kernel == 0 || l.kernel % 2 == 0)
            throw ConfigError(std::string(name) + " block kernel size must be odd, got " + std::to_string(l.kernel));
    }
}

nlohmann::json stack_to_json(const std::vector<LayerSpec>& s) {
    auto a = nlohmann::json::array();
    for (const auto& l : s) a.push_back({{"hidden", l.hidden}, {"kernel", l.kernel}});
    return a;
}

std::vector<LayerSpec> stack_from_json(const nlohmann::json& j) {
    std::vector<LayerSpec> s;
    for (const auto& e : j) s.push_back({e.at("hidden").get<std::size_t>(), e.value("kernel", std::size_t{3})});
    return s;
}

}  // namespace

void ModelConfig::validate() const {
    grid.validate();
    validate_stack(encoder, "encoder");
    validate_stack(f_encoder, "forecasts encoder");
    validate_stack(decoder, "decoder");
    if (n_in == 0 || n_out == 0) throw ConfigError("n_in and n_out must be positive");
    if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (subgrid_height == 0 || subgrid_width == 0) throw ConfigError("subgrid must be at least 1x1");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"grid", grid_to_json(grid)},
            {"n_in", n_in},
            {"n_out", n_out},
            {"encoder", stack_to_json(encoder)},
            {"f_encoder", stack_to_json(f_encoder)},
            {"decoder", stack_to_json(decoder)},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"lr", lr},
            {"subgrid", {subgrid_height, subgrid_width}},
            {"seed", seed},
            {"scale_concentrations", scale_concentrations}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
        c.n_in = j.value("n_in", c.n_in);
        c.n_out = j.value("n_out", c.n_out);
        if (j.contains("encoder")) c.encoder = stack_from_json(j.at("encoder"));
        if (j.contains("f_encoder")) c.f_encoder = stack_from_json(j.at("f_encoder"));
        if (j.contains("decoder")) c.decoder = stack_from_json(j.at("decoder"));
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.lr = j.value("lr", c.lr);
        if (j.contains("subgrid")) {
            const auto& s = j.at("subgrid");
            c.subgrid_height = s.is_array() ? s.at(0).get<std::size_t>() : s.get<std::size_t>();
            c.subgrid_width = s.is_array() ? s.at(1).get<std::size_t>() : s.get<std::size_t>();
        }
        c.seed = j.value("seed", c.seed);
        c.scale_concentrations = j.value("scale_concentrations", c.scale_concentrations);
        if (j.contains("kernel")) c = c.with_kernel(j.at("kernel").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::with_kernel(std::size_t k) const {
    ModelConfig c = *this;
    for (auto* s : {&c.encoder, &c.f_encoder, &c.decoder})
        for (auto& l : *s) l.kernel = k;
    return c;
}

// ---- parameters ------------------------------------------------------------

namespace {

ConvLstmStack build_stack(const std::vector<LayerSpec>& spec, std::size_t c_in, std::mt19937_64& rng) {
    ConvLstmStack s;
    for (const auto& l : spec) {
        s.blocks.push_back(nn::ConvLstmParams::glorot(l.kernel, c_in, l.hidden, rng));
        s.norms.push_back(nn::BatchNormParams::identity(l.hidden));
        c_in = l.hidden;
    }
    return s;
}

constexpr const char* kStackNames[3] = {"encoder", "f_encoder", "decoder"};

template <class P>
auto trainable_of(P& p) {
    using Ptr = std::conditional_t<std::is_const_v<P>, const Tensor*, Tensor*>;
    std::vector<Ptr> out;
    for (auto* s : {&p.encoder, &p.f_encoder, &p.decoder})
        for (std::size_t b = 0; b < s->blocks.size(); ++b) {
            out.push_back(&s->blocks[b].w_x);
            out.push_back(&s->blocks[b].w_h);
            out.push_back(&s->blocks[b].bias);
            out.push_back(&s->norms[b].gamma);
            out.push_back(&s->norms[b].beta);
        }
    out.push_back(&p.head_w);
    out.push_back(&p.head_b);
    return out;
}

}  // namespace

std::vector<Tensor*> ModelParams::trainable() { return trainable_of(*this); }
std::vector<const Tensor*> ModelParams::trainable() const { return trainable_of(*this); }

std::vector<std::string> ModelParams::trainable_names() const {
    std::vector<std::string> out;
    const ConvLstmStack* stacks[3] = {&encoder, &f_encoder, &decoder};
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t b = 0; b < stacks[s]->blocks.size(); ++b)
            for (const char* t : {"w_x", "w_h", "bias", "bn/gamma", "bn/beta"})
                out.push_back(fmt::format("{}/{}/{}", kStackNames[s], b, t));
    out.push_back("head/w");
    out.push_back("head/b");
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : trainable()) n += t->size();
    return n;
}

ModelParams build_model(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    ModelParams p;
    p.config = cfg;
    p.encoder = build_stack(cfg.encoder, kNumPollutants, rng);
    p.f_encoder = build_stack(cfg.f_encoder, kNumCovariates, rng);
    p.decoder = build_stack(cfg.decoder, cfg.encoder.back().hidden, rng);
    const std::size_t features = cfg.decoder.back().hidden + cfg.f_encoder.back().hidden;
    p.head_w = Tensor({1, 1, features, kNumPollutants});
    const double limit = std::sqrt(6.0 / static_cast<double>(features + kNumPollutants));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& w : p.head_w.values()) w = u(rng);
    // Starts the relu head in its active region at about the mean level.
    p.head_b = Tensor({kNumPollutants}, 1.0);
    return p;
}

Normalization fit_normalization(const ObservationSet& set, bool scale_concentrations) {
    if (set.empty()) throw ConfigError("cannot fit normalization on an empty set");
    std::array<double, kNumWeather> sum{}, sq{};
    std::array<double, kNumPollutants> conc{};
    double n_cov = 0.0, n_conc = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto obs = set.get(i);
        const auto& cov = obs.covariates;
        for (std::size_t r = 0; r < cov.rows(); ++r)
            for (std::size_t f = 0; f < kNumWeather; ++f) {
                const double v = cov[r * kNumCovariates + f];
                sum[f] += v;
                sq[f] += v * v;
            }
        n_cov += static_cast<double>(cov.rows());
        const auto& t = *obs.target;
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t p = 0; p < kNumPollutants; ++p) conc[p] += t[r * kNumPollutants + p];
        n_conc += static_cast<double>(t.rows());
    }
    Normalization n;
    for (std::size_t f = 0; f < kNumWeather; ++f) {
        n.weather_mean[f] = sum[f] / n_cov;
        const double var = std::max(0.0, sq[f] / n_cov - n.weather_mean[f] * n.weather_mean[f]);
        n.weather_std[f] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    for (std::size_t p = 0; p < kNumPollutants; ++p) {
        const double m = conc[p] / n_conc;
        n.concentration_scale[p] = scale_concentrations && m > 0.0 ? m : 1.0;
    }
    n.fitted = true;
    return n;
}

// ---- forward ---------------------------------------------------------------

Batch make_batch(std::span<const Observation> obs) {
    if (obs.empty()) throw ContractError("empty batch");
    const auto stack_seq = [&](auto get) {
        const Tensor& first = get(obs[0]);
        const std::size_t T = first.dim(0), slab = first.size() / T;
        Shape shape{T, obs.size()};
        shape.insert(shape.end(), first.shape().begin() + 1, first.shape().end());
        Tensor out(shape);
        for (std::size_t b = 0; b < obs.size(); ++b) {
            const Tensor& x = get(obs[b]);
            if (x.shape() != first.shape()) throw ContractError("batch observations must share shapes");
            for (std::size_t t = 0; t < T; ++t)
                std::memcpy(out.data() + (t * obs.size() + b) * slab, x.data() + t * slab, slab * sizeof(double));
        }
        return out;
    };
    Batch b;
    b.history = stack_seq([](const Observation& o) -> const Tensor& { return o.history; });
    b.covariates = stack_seq([](const Observation& o) -> const Tensor& { return o.covariates; });
    if (std::all_of(obs.begin(), obs.end(), [](const auto& o) { return o.target.has_value(); }))
        b.target = stack_seq([](const Observation& o) -> const Tensor& { return *o.target; });
    return b;
}

namespace {

ad::Var run_stack(ad::Var x, ConvLstmStack& stack, std::span<const ad::Var> vars, std::size_t& cursor,
                  nn::NormMode mode, bool final_state_only) {
    for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
        const bool last = b + 1 == stack.blocks.size();
        nn::ConvLstmVars v{vars[cursor], vars[cursor + 1], vars[cursor + 2], stack.blocks[b].hidden};
        nn::BatchNormVars bn{vars[cursor + 3], vars[cursor + 4]};
        cursor += 5;
        x = nn::convlstm_block_forward(x, v, !(last && final_state_only));
        x = nn::batch_norm(x, bn, stack.norms[b], mode);
    }
    return x;
}

void check_inputs(const ModelConfig& cfg, const Tensor& history, const Tensor& covariates) {
    const auto& h = history.shape();
    const auto& c = covariates.shape();
    if (h.size() != 5 || h[0] != cfg.n_in || h[4] != kNumPollutants)
        throw ContractError(fmt::format("history must be ({}, B, H, W, 4), got {}", cfg.n_in, shape_string(h)));
    if (c.size() != 5 || c[0] != cfg.n_out || c[4] != kNumCovariates || c[1] != h[1] || c[2] != h[2] || c[3] != h[3])
        throw ContractError(fmt::format("covariates must be ({}, {}, {}, {}, 10), got {}", cfg.n_out, h[1], h[2], h[3],
                                        shape_string(c)));
}

}  // namespace

ad::Var forward_graph(ad::Tape& tape, ModelParams& params, std::span<const ad::Var> vars, const Tensor& history,
                      const Tensor& covariates, nn::NormMode mode) {
    const auto& cfg = params.config;
    check_inputs(cfg, history, covariates);
    const auto& n = params.norm;

    Tensor h = history;
    for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t p = 0; p < kNumPollutants; ++p) h[r * kNumPollutants + p] /= n.concentration_scale[p];
    Tensor c = covariates;
    for (std::size_t r = 0; r < c.rows(); ++r) {
        double* row = c.data() + r * kNumCovariates;
        for (std::size_t f = 0; f < kNumWeather; ++f) row[f] = (row[f] - n.weather_mean[f]) / n.weather_std[f];
        for (std::size_t p = 0; p < kNumPollutants; ++p) row[kNumWeather + p] /= n.concentration_scale[p];
    }

    std::size_t cursor = 0;
    const auto enc = run_stack(tape.constant(std::move(h)), params.encoder, vars, cursor, mode, true);
    const auto fenc = run_stack(tape.constant(std::move(c)), params.f_encoder, vars, cursor, mode, false);
    const std::vector<ad::Var> repeated(cfg.n_out, enc);
    const auto dec = run_stack(ad::stack(repeated), params.decoder, vars, cursor, mode, false);
    const auto out = nn::forecast_head(ad::concat_channels(dec, fenc), vars[cursor], vars[cursor + 1]);
    Tensor scale({kNumPollutants});
    for (std::size_t p = 0; p < kNumPollutants; ++p) scale[p] = n.concentration_scale[p];
    return ad::mul(out, tape.constant(std::move(scale)));
}

Tensor forward(const ModelParams& params, const Tensor& history, const Tensor& covariates) {
    const bool single = history.rank() == 4;
    const auto batched = [](const Tensor& x) {
        Shape s = x.shape();
        s.insert(s.begin() + 1, 1);
        return x.reshaped(s);
    };
    ModelParams local = params;
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto* t : local.trainable()) vars.push_back(tape.constant(*t));
    const auto pred = forward_graph(tape, local, vars, single ? batched(history) : history,
                                    single ? batched(covariates) : covariates, nn::NormMode::infer);
    if (!single) return pred.value();
    Shape s = pred.shape();
    s.erase(s.begin() + 1);
    return pred.value().reshaped(s);
}

// ---- training --------------------------------------------------------------

double mean_loss(const ModelParams& params, const ObservationSet& set) {
    if (set.empty()) throw ConfigError("cannot evaluate on an empty set");
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto obs = set.get(i);
        total += nn::msle(forward(params, obs.history, obs.covariates), *obs.target);
    }
    return total / static_cast<double>(set.size());
}

TrainHistory train(ModelParams& params, const ObservationSet& train_set, const TrainOptions& options) {
    const auto& cfg = params.config;
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    if (train_set.n_in() != cfg.n_in || train_set.n_out() != cfg.n_out)
        throw ConfigError(fmt::format("observation set has n_in={} n_out={}, model expects {} and {}",
                                      train_set.n_in(), train_set.n_out(), cfg.n_in, cfg.n_out));
    if (!params.norm.fitted) params.norm = fit_normalization(train_set, cfg.scale_concentrations);

    std::mt19937_64 rng(cfg.seed);
    auto weights = params.trainable();
    auto adam = nn::AdamState::for_params(weights, cfg.lr);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainHistory history;
    const std::size_t epochs = options.epochs.value_or(cfg.epochs);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch_id = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<Observation> crops;
            for (std::size_t k = start; k < end; ++k)
                crops.push_back(sample_subgrid(train_set.get(order[k]), rng, cfg.subgrid_height, cfg.subgrid_width));
            const auto batch = make_batch(crops);

            ad::Tape tape;
            std::vector<ad::Var> vars;
            for (auto* w : weights) vars.push_back(tape.variable(*w));
            const auto diverged = [&] {
                std::string ids;
                for (const auto& o : crops) ids += " " + format_time(o.t0);
                return NumericalError(fmt::format("non-finite loss at epoch {} batch {} (t0:{})", epoch, batch_id, ids));
            };
            const auto pred = forward_graph(tape, params, vars, batch.history, batch.covariates, nn::NormMode::train);
            // msle would reject a NaN prediction as a domain error; report it as divergence.
            const auto& pv = pred.value().values();
            if (!std::all_of(pv.begin(), pv.end(), [](double v) { return std::isfinite(v); })) throw diverged();
            const auto loss = nn::msle(pred, tape.constant(*batch.target));
            const double value = loss.value().item();
            if (!std::isfinite(value)) throw diverged();
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(vars.size());
            for (const auto& v : vars) grads.push_back(tape.grad(v));
            nn::adam_step(weights, grads, adam);
            epoch_loss += value * static_cast<double>(end - start);
            ++history.steps;
        }
        history.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        std::optional<double> eval_loss;
        if (options.eval && !options.eval->empty()) {
            eval_loss = mean_loss(params, *options.eval);
            history.eval_loss.push_back(*eval_loss);
        }
        if (options.on_epoch) options.on_epoch(epoch, history.train_loss.back(), eval_loss);
    }
    return history;
}

// ---- inference -------------------------------------------------------------

Forecast predict(const ModelParams& params, const MeasurementStore& measurements, const ForecastStore& forecasts,
                 Timestamp t0) {
    const auto& cfg = params.config;
    const auto obs = assemble_observation(t0, measurements, forecasts, cfg.grid, cfg.n_in, cfg.n_out, false);
    Forecast f;
    f.t0 = t0;
    f.grid = cfg.grid;
    for (std::size_t k = 1; k <= cfg.n_out; ++k) f.valid_times.push_back(t0 + kStep * static_cast<int>(k));
    f.values = forward(params, obs.history, obs.covariates);
    return f;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "AQCK";

template <std::size_t N>
std::vector<double> to_vec(const std::array<double, N>& a) {
    return {a.begin(), a.end()};
}

template <std::size_t N>
std::array<double, N> to_array(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != N) throw FormatError("normalization vector has the wrong length");
    std::array<double, N> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const auto weights = params.trainable();
    const auto names = params.trainable_names();
    std::vector<NamedTensor> tensors;
    for (std::size_t k = 0; k < weights.size(); ++k) tensors.emplace_back(names[k], weights[k]);
    const ConvLstmStack* stacks[3] = {&params.encoder, &params.f_encoder, &params.decoder};
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t b = 0; b < stacks[s]->norms.size(); ++b) {
            const auto& bn = stacks[s]->norms[b];
            tensors.emplace_back(fmt::format("{}/{}/bn/running_mean", kStackNames[s], b), &bn.running_mean);
            tensors.emplace_back(fmt::format("{}/{}/bn/running_var", kStackNames[s], b), &bn.running_var);
        }
    const auto& n = params.norm;
    const auto& bn0 = params.encoder.norms.front();
    nlohmann::json header{{"format_version", kCheckpointVersion},
                          {"config", params.config.to_json()},
                          {"normalization",
                           {{"weather_mean", to_vec(n.weather_mean)},
                            {"weather_std", to_vec(n.weather_std)},
                            {"concentration_scale", to_vec(n.concentration_scale)},
                            {"fitted", n.fitted}}},
                          {"batch_norm", {{"momentum", bn0.momentum}, {"epsilon", bn0.epsilon}}}};
    write_container(path, kCheckpointMagic, kCheckpointVersion, std::move(header), tensors);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    const auto c = read_container(path, kCheckpointMagic, {kCheckpointVersion});
    ModelParams p;
    try {
        if (c.header.at("format_version").get<std::uint32_t>() != c.version)
            throw VersionError(path.string() + ": header and preamble versions differ");
        p = build_model(ModelConfig::from_json(c.header.at("config")));
        const auto& n = c.header.at("normalization");
        p.norm.weather_mean = to_array<kNumWeather>(n.at("weather_mean"));
        p.norm.weather_std = to_array<kNumWeather>(n.at("weather_std"));
        p.norm.concentration_scale = to_array<kNumPollutants>(n.at("concentration_scale"));
        p.norm.fitted = n.at("fitted").get<bool>();
        const double momentum = c.header.at("batch_norm").at("momentum").get<double>();
        const double epsilon = c.header.at("batch_norm").at("epsilon").get<double>();

        const auto assign = [&](Tensor& dst, const std::string& name) {
            const auto& src = c.tensor(name);
            if (src.shape() != dst.shape())
                throw FormatError(fmt::format("{}: tensor '{}' has shape {}, config implies {}", path.string(), name,
                                              shape_string(src.shape()), shape_string(dst.shape())));
            dst = src;
        };
        const auto weights = p.trainable();
        const auto names = p.trainable_names();
        for (std::size_t k = 0; k < weights.size(); ++k) assign(*weights[k], names[k]);
        ConvLstmStack* stacks[3] = {&p.encoder, &p.f_encoder, &p.decoder};
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t b = 0; b < stacks[s]->norms.size(); ++b) {
                auto& bn = stacks[s]->norms[b];
                assign(bn.running_mean, fmt::format("{}/{}/bn/running_mean", kStackNames[s], b));
                assign(bn.running_var, fmt::format("{}/{}/bn/running_var", kStackNames[s], b));
                bn.momentum = momentum;
                bn.epsilon = epsilon;
            }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": corrupt checkpoint header: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path.string() + ": invalid checkpoint config: " + e.what());
    }
    return p;
}

}  // namespace aqcast
