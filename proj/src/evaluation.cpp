#include <cmath>
#include <exception>

#include <fmt/format.h>

#include "aqcast/error.hpp"
#include "aqcast/evaluation.hpp"

namespace aqcast {

std::size_t EvalReport::index_of(const std::string& forecaster) const {
    for (std::size_t f = 0; f < forecasters.size(); ++f)
        if (forecasters[f] == forecaster) return f;
    throw ContractError("no forecaster named '" + forecaster + "' in the report");
}

double EvalReport::entry(std::size_t f, Pollutant p, std::size_t step) const {
    if (step == 0 || step > n_out) throw ContractError("horizon step is 1-based and at most n_out");
    return msle.at({f, static_cast<std::size_t>(p), step - 1});
}

double EvalReport::aggregate(std::size_t f, Pollutant p, int hours) const {
    const auto steps = std::min(n_out, static_cast<std::size_t>(std::max(hours, 0) / kStep.count()));
    if (steps == 0) throw ContractError(fmt::format("no horizon within {} h", hours));
    double s = 0.0;
    for (std::size_t k = 1; k <= steps; ++k) s += entry(f, p, k);
    return s / static_cast<double>(steps);
}

double EvalReport::global(std::size_t f, int hours) const {
    double s = 0.0;
    for (auto p : kPollutants) s += aggregate(f, p, hours);
    return s / static_cast<double>(kNumPollutants);
}

std::string EvalReport::per_horizon_csv() const {
    std::string out = "forecaster,pollutant,horizon_h,msle\n";
    for (std::size_t f = 0; f < forecasters.size(); ++f)
        for (auto p : kPollutants)
            for (std::size_t k = 1; k <= n_out; ++k)
                out += fmt::format("{},{},{},{}\n", forecasters[f], pollutant_name(p), k * kStep.count(),
                                   entry(f, p, k));
    return out;
}

namespace {

constexpr std::array<int, 2> kAggregateHours{24, 96};

}  // namespace

std::string EvalReport::summary_csv() const {
    std::string out = "pollutant,horizon_h";
    for (const auto& f : forecasters) out += "," + f;
    out += "\n";
    for (int h : kAggregateHours) {
        for (auto p : kPollutants) {
            out += fmt::format("{},{}", pollutant_name(p), h);
            for (std::size_t f = 0; f < forecasters.size(); ++f) out += fmt::format(",{}", aggregate(f, p, h));
            out += "\n";
        }
        out += fmt::format("global,{}", h);
        for (std::size_t f = 0; f < forecasters.size(); ++f) out += fmt::format(",{}", global(f, h));
        out += "\n";
    }
    return out;
}

std::string EvalReport::table() const {
    const std::size_t F = forecasters.size();
    std::size_t width = 8;
    for (const auto& f : forecasters) width = std::max(width, f.size());
    const std::size_t block = F * (width + 2);

    std::string out = fmt::format("{:<10}", "");
    for (int h : kAggregateHours) {
        const std::string label = static_cast<std::size_t>(h / kStep.count()) > n_out
                                      ? fmt::format("{} hours (to {} h)", h, n_out * kStep.count())
                                      : fmt::format("{} hours", h);
        out += fmt::format("| {:^{}}", label, block);
    }
    out += "\n" + fmt::format("{:<10}", "Pollutant");
    for (std::size_t a = 0; a < kAggregateHours.size(); ++a) {
        out += "| ";
        for (const auto& f : forecasters) out += fmt::format("{:>{}}  ", f, width);
    }
    out += "\n" + std::string(10 + kAggregateHours.size() * (block + 2), '-') + "\n";

    const auto row = [&](std::string_view name, auto value) {
        out += fmt::format("{:<10}", name);
        for (int h : kAggregateHours) {
            out += "| ";
            for (std::size_t f = 0; f < F; ++f) out += fmt::format("{:>{}.4f}  ", value(f, h), width);
        }
        out += "\n";
    };
    for (auto p : kPollutants) row(pollutant_label(p), [&](std::size_t f, int h) { return aggregate(f, p, h); });
    row("Global", [&](std::size_t f, int h) { return global(f, h); });
    out += fmt::format("MSLE over {} observations, full grid.\n", observations);
    return out;
}

EvalReport evaluate(std::span<const NamedForecaster> forecasters, const ObservationSet& eval) {
    if (eval.empty()) throw ConfigError("cannot evaluate on an empty set");
    if (forecasters.empty()) throw ConfigError("no forecaster to evaluate");
    const std::size_t F = forecasters.size(), n_out = eval.n_out(), n_obs = eval.size();
    const std::size_t per_obs = F * kNumPollutants * n_out;

    // Per-observation partials, reduced afterwards in index order so the
    // result does not depend on the thread schedule.
    std::vector<double> partial(n_obs * per_obs, 0.0);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n_obs; ++i) {
        try {
            const auto obs = eval.get(i);
            const Tensor& target = *obs.target;
            const std::size_t cells = target.dim(1) * target.dim(2);
            for (std::size_t f = 0; f < F; ++f) {
                const Tensor pred = forecasters[f].forecast(obs);
                if (pred.shape() != target.shape())
                    throw ContractError(fmt::format("forecaster '{}' returned {}, expected {}", forecasters[f].name,
                                                    shape_string(pred.shape()), shape_string(target.shape())));
                double* out = partial.data() + i * per_obs + f * kNumPollutants * n_out;
                for (std::size_t t = 0; t < n_out; ++t)
                    for (std::size_t c = 0; c < cells; ++c)
                        for (std::size_t p = 0; p < kNumPollutants; ++p) {
                            const std::size_t k = (t * cells + c) * kNumPollutants + p;
                            const double d = std::log1p(pred[k]) - std::log1p(target[k]);
                            out[p * n_out + t] += d * d;
                        }
                for (std::size_t k = 0; k < kNumPollutants * n_out; ++k) out[k] /= static_cast<double>(cells);
            }
        } catch (...) {
#pragma omp critical(aqcast_evaluate_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    EvalReport r;
    for (const auto& f : forecasters) r.forecasters.push_back(f.name);
    r.n_out = n_out;
    r.observations = n_obs;
    r.msle = Tensor({F, kNumPollutants, n_out});
    for (std::size_t i = 0; i < n_obs; ++i)
        for (std::size_t k = 0; k < per_obs; ++k) r.msle[k] += partial[i * per_obs + k];
    for (auto& v : r.msle.values()) {
        v /= static_cast<double>(n_obs);
        if (!std::isfinite(v)) throw NumericalError("non-finite MSLE in evaluation");
    }
    return r;
}

// ---- ablations ---------------------------------------------------------------

namespace {

constexpr std::array<std::pair<Ablation, const char*>, 7> kAblationNames{{
    {Ablation::all_features, "all"},
    {Ablation::no_history, "no-history"},
    {Ablation::no_aqpcm, "no-aqpcm"},
    {Ablation::no_weather, "no-weather"},
    {Ablation::kernel1, "kernel-1"},
    {Ablation::kernel3, "kernel-3"},
    {Ablation::kernel5, "kernel-5"},
}};

}  // namespace

std::string ablation_name(Ablation a) {
    for (const auto& [v, n] : kAblationNames)
        if (v == a) return n;
    throw ContractError("unknown ablation");
}

Ablation parse_ablation(const std::string& name) {
    for (const auto& [v, n] : kAblationNames)
        if (name == n) return v;
    std::string known;
    for (const auto& [v, n] : kAblationNames) known += std::string(known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation variant '" + name + "' (expected one of " + known + ")");
}

std::vector<Ablation> all_ablations() {
    std::vector<Ablation> out;
    for (const auto& [v, n] : kAblationNames) out.push_back(v);
    return out;
}

AblationResult run_ablation(const Dataset& data, const ModelConfig& base, Ablation variant) {
    ModelConfig cfg = base;
    cfg.grid = data.archive->grid;
    cfg.n_in = data.n_in;
    cfg.n_out = data.n_out;
    auto train_set = data.train_set();
    auto eval_set = data.eval_set();
    switch (variant) {
        case Ablation::all_features:
            break;
        case Ablation::no_history:
            // Last known measurements only.
            cfg.n_in = 1;
            train_set = train_set.with_history(1);
            eval_set = eval_set.with_history(1);
            break;
        case Ablation::no_aqpcm:
        case Ablation::no_weather: {
            FeatureMask mask;
            mask.zero_aqpcm = variant == Ablation::no_aqpcm;
            mask.zero_weather = variant == Ablation::no_weather;
            train_set = train_set.with_mask(mask);
            eval_set = eval_set.with_mask(mask);
            break;
        }
        case Ablation::kernel1: cfg = cfg.with_kernel(1); break;
        case Ablation::kernel3: cfg = cfg.with_kernel(3); break;
        case Ablation::kernel5: cfg = cfg.with_kernel(5); break;
    }
    AblationResult r;
    r.variant = variant;
    r.config = cfg;
    auto params = build_model(cfg);
    r.parameters = params.parameter_count();
    r.history = train(params, train_set);
    const std::array<NamedForecaster, 1> model{model_forecaster(params)};
    r.report = evaluate(model, eval_set);
    return r;
}

std::string ablation_table(std::span<const AblationResult> results) {
    std::string out = fmt::format("{:<12}{:>12}{:>12}{:>12}\n", "Variant", "Parameters", "24 hours", "96 hours");
    out += std::string(48, '-') + "\n";
    for (const auto& r : results)
        out += fmt::format("{:<12}{:>12}{:>12.4f}{:>12.4f}\n", ablation_name(r.variant), r.parameters,
                           r.report.global(0, 24), r.report.global(0, 96));
    return out;
}

std::string ablation_csv(std::span<const AblationResult> results) {
    std::string out = "variant,parameters,global_24h,global_96h,final_train_loss\n";
    for (const auto& r : results)
        out += fmt::format("{},{},{},{},{}\n", ablation_name(r.variant), r.parameters, r.report.global(0, 24),
                           r.report.global(0, 96), r.history.train_loss.empty() ? 0.0 : r.history.train_loss.back());
    return out;
}

}  // namespace aqcast
