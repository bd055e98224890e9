#include <cstring>
#include <set>

#include <fmt/format.h>

#include "aqcast/error.hpp"
#include "aqcast/evaluation.hpp"

namespace aqcast {

std::size_t slot_of(Timestamp t) { return static_cast<std::size_t>(hour_of_day(t)) / 3; }

Tensor constant_benchmark(const Tensor& history, std::size_t n_out) {
    if (history.rank() != 4 || history.dim(0) == 0)
        throw ContractError("history must be (N_in, ny, nx, C) with N_in >= 1");
    const std::size_t slab = history.size() / history.dim(0);
    const double* last = history.data() + (history.dim(0) - 1) * slab;
    Tensor out({n_out, history.dim(1), history.dim(2), history.dim(3)});
    for (std::size_t t = 0; t < n_out; ++t) std::memcpy(out.data() + t * slab, last, slab * sizeof(double));
    return out;
}

AdjustmentFactors::AdjustmentFactors(std::size_t ny, std::size_t nx)
    : means_({ny, nx, kNumPollutants, kSlotsPerDay}, 1.0) {}

AdjustmentFactors::AdjustmentFactors(Tensor slot_means) : means_(std::move(slot_means)) {
    if (means_.rank() != 4 || means_.dim(2) != kNumPollutants || means_.dim(3) != kSlotsPerDay)
        throw ContractError("slot means must be (ny, nx, 4, 8)");
}

double AdjustmentFactors::factor(Pollutant p, std::size_t y, std::size_t x, std::size_t from_slot,
                                 std::size_t to_slot) const {
    if (from_slot >= kSlotsPerDay || to_slot >= kSlotsPerDay) throw ContractError("slot index out of range");
    if (from_slot == to_slot || y >= ny() || x >= nx()) return 1.0;
    const auto pi = static_cast<std::size_t>(p);
    const double from = means_.at({y, x, pi, from_slot});
    const double to = means_.at({y, x, pi, to_slot});
    if (!(from > 0.0) || !(to > 0.0)) return 1.0;
    return to / from;
}

AdjustmentFactors fit_adjustment_factors(const ObservationSet& train) {
    if (train.empty()) throw ConfigError("cannot fit adjustment factors on an empty set");
    const std::size_t ny = train.grid().ny, nx = train.grid().nx, n_in = train.n_in();
    const std::size_t plane = ny * nx * kNumPollutants;
    Tensor sums({ny, nx, kNumPollutants, kSlotsPerDay});
    std::array<double, kSlotsPerDay> counts{};
    // Overlapping history windows would weight timesteps unevenly.
    std::set<Timestamp> seen;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto obs = train.get(i);
        for (std::size_t k = 0; k < n_in; ++k) {
            const Timestamp t = obs.t0 - kStep * static_cast<int>(n_in - 1 - k);
            if (!seen.insert(t).second) continue;
            const std::size_t s = slot_of(t);
            const double* field = obs.history.data() + k * plane;
            for (std::size_t c = 0; c < plane; ++c) sums[c * kSlotsPerDay + s] += field[c];
            counts[s] += 1.0;
        }
    }
    std::size_t fallback = 0;
    for (std::size_t c = 0; c < plane; ++c) {
        bool degenerate = false;
        for (std::size_t s = 0; s < kSlotsPerDay; ++s) {
            double& m = sums[c * kSlotsPerDay + s];
            m = counts[s] > 0.0 ? m / counts[s] : 0.0;
            degenerate = degenerate || !(m > 0.0);
        }
        fallback += degenerate ? 1 : 0;
    }
    AdjustmentFactors f(std::move(sums));
    f.fallback_cells = fallback;
    if (fallback > 0)
        f.warnings.push_back(fmt::format(
            "{} (pollutant, cell) pairs have a zero or unseen slot mean; factors involving that slot fall back to 1",
            fallback));
    return f;
}

Tensor adjusted_benchmark(const Tensor& history, Timestamp t0, const AdjustmentFactors& factors, std::size_t n_out) {
    Tensor out = constant_benchmark(history, n_out);
    const std::size_t ny = history.dim(1), nx = history.dim(2), C = history.dim(3);
    if (C != kNumPollutants) throw ContractError("adjusted benchmark expects 4 pollutant channels");
    const std::size_t from = slot_of(t0);
    for (std::size_t t = 0; t < n_out; ++t) {
        const std::size_t to = slot_of(t0 + kStep * static_cast<int>(t + 1));
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t x = 0; x < nx; ++x)
                for (std::size_t p = 0; p < C; ++p)
                    out.at({t, y, x, p}) *= factors.factor(static_cast<Pollutant>(p), y, x, from, to);
    }
    return out;
}

NamedForecaster constant_forecaster(std::size_t n_out) {
    return {kConstantName, [n_out](const Observation& o) { return constant_benchmark(o.history, n_out); }};
}

NamedForecaster adjusted_forecaster(AdjustmentFactors factors, std::size_t n_out) {
    auto shared = std::make_shared<const AdjustmentFactors>(std::move(factors));
    return {kAdjustedName,
            [shared, n_out](const Observation& o) { return adjusted_benchmark(o.history, o.t0, *shared, n_out); }};
}

NamedForecaster model_forecaster(const ModelParams& params) {
    auto shared = std::make_shared<const ModelParams>(params);
    return {kModelName, [shared](const Observation& o) { return forward(*shared, o.history, o.covariates); }};
}

}  // namespace aqcast
