#include <algorithm>
#include <cstring>

#include "aqcast/datasets.hpp"
#include "aqcast/error.hpp"

namespace aqcast {

namespace {

Timestamp ceil_to_step(Timestamp t) {
    const auto f = floor_to_step(t);
    return f == t ? f : f + kStep;
}

std::size_t steps_between(Timestamp a, Timestamp b) { return static_cast<std::size_t>((b - a) / kStep); }

RegriddedRun regrid_run(const ForecastRun& run, const GridSpec& grid, std::size_t max_steps, std::size_t& clamped) {
    RegriddedRun out;
    out.issued = run.run_time;
    out.first_step = ceil_to_step(run.run_time);
    std::size_t count = 0;
    while (count < max_steps && out.first_step + kStep * static_cast<int>(count) <= run.valid_times.back()) ++count;
    const std::size_t C = run.variables();
    out.fields = Tensor({std::max<std::size_t>(count, 1), grid.ny, grid.nx, C});
    out.valid.assign(count, 0);
    for (std::size_t s = 0; s < count; ++s) {
        auto native = forecast_at(run, out.first_step + kStep * static_cast<int>(s));
        if (!native) continue;
        auto r = bilinear_regrid(GridField(run.grid, std::move(*native)), grid);
        clamped += r.clamped_points;
        out.fields.set_slab(s, r.field.values);
        out.valid[s] = 1;
    }
    return out;
}

// Runs that can be the latest one at or before some t in [start, end].
std::vector<const ForecastRun*> relevant_runs(std::span<const ForecastRun> runs, Timestamp start, Timestamp end) {
    std::vector<const ForecastRun*> out;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        if (runs[k].run_time > end) break;
        const bool superseded = k + 1 < runs.size() && runs[k + 1].run_time <= start;
        if (!superseded) out.push_back(&runs[k]);
    }
    return out;
}

const RegriddedRun* latest_run(const std::vector<RegriddedRun>& runs, Timestamp t0) {
    auto pos = std::upper_bound(runs.begin(), runs.end(), t0,
                                [](Timestamp x, const RegriddedRun& r) { return x < r.issued; });
    if (pos == runs.begin()) return nullptr;
    return &*std::prev(pos);
}

// First stack index of the covariates for t0, or nullopt when the run does not
// cover t0 + 3h .. t0 + n_out 3h.
std::optional<std::size_t> run_offset(const RegriddedRun& run, Timestamp t0, std::size_t n_out) {
    const Timestamp first = t0 + kStep;
    if (first < run.first_step) return std::nullopt;
    const std::size_t k = steps_between(run.first_step, first);
    if (k + n_out > run.valid.size()) return std::nullopt;
    for (std::size_t s = k; s < k + n_out; ++s)
        if (!run.valid[s]) return std::nullopt;
    return k;
}

bool steps_available(const GriddedArchive& a, std::size_t first, std::size_t count) {
    if (first + count > a.steps) return false;
    for (std::size_t s = first; s < first + count; ++s)
        for (std::size_t p = 0; p < kNumPollutants; ++p)
            if (!a.available[s * kNumPollutants + p]) return false;
    return true;
}

Tensor timeline_window(const GriddedArchive& a, std::size_t first, std::size_t count) {
    const std::size_t slab = a.grid.cells() * kNumPollutants;
    Tensor out({count, a.grid.ny, a.grid.nx, kNumPollutants});
    std::memcpy(out.data(), a.measurements.data() + first * slab, count * slab * sizeof(double));
    return out;
}

}  // namespace

std::optional<std::size_t> GriddedArchive::step_of(Timestamp t) const {
    if (t < start || !aligned_to_step(t)) return std::nullopt;
    const std::size_t s = steps_between(start, t);
    if (s >= steps) return std::nullopt;
    return s;
}

GriddedArchive build_archive(const MeasurementStore& measurements, const ForecastStore& forecasts,
                             const GridSpec& grid, Timestamp start, Timestamp end, const ArchiveOptions& opt) {
    grid.validate();
    if (!(opt.kernel_distance_km > 0.0)) throw ConfigError("kernel distance must be positive");
    start = ceil_to_step(start);
    end = floor_to_step(end);
    if (end < start) throw ConfigError("archive range " + format_time(start) + " .. " + format_time(end) + " is empty");

    GriddedArchive a;
    a.grid = grid;
    a.start = start;
    a.steps = steps_between(start, end) + 1;
    a.measurements = Tensor({a.steps, grid.ny, grid.nx, kNumPollutants});
    a.available.assign(a.steps * kNumPollutants, 0);
    const std::size_t cells = grid.cells();
    for (std::size_t s = 0; s < a.steps; ++s) {
        const auto t = a.time_of(s);
        for (std::size_t p = 0; p < kNumPollutants; ++p) {
            const auto values = measurements.sample(kPollutants[p], t);
            if (values.empty()) continue;
            const auto field = project_stations(values, grid, opt.kernel_distance_km);
            double* dst = a.measurements.data() + s * cells * kNumPollutants;
            for (std::size_t c = 0; c < cells; ++c) dst[c * kNumPollutants + p] = field.values[c];
            a.available[s * kNumPollutants + p] = 1;
        }
    }
    for (const auto* run : relevant_runs(forecasts.runs(ForecastKind::weather), start, end))
        a.weather_runs.push_back(regrid_run(*run, grid, opt.run_steps, a.clamped_regrid_points));
    for (const auto* run : relevant_runs(forecasts.runs(ForecastKind::aqpcm), start, end))
        a.aqpcm_runs.push_back(regrid_run(*run, grid, opt.run_steps, a.clamped_regrid_points));
    return a;
}

std::string_view reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::none: return "accepted";
        case RejectReason::missing_history: return "missing_history";
        case RejectReason::missing_target: return "missing_target";
        case RejectReason::no_weather_run: return "no_weather_run";
        case RejectReason::no_aqpcm_run: return "no_aqpcm_run";
        case RejectReason::not_aligned: return "not_aligned";
    }
    return "?";
}

RejectReason check_observation(const GriddedArchive& a, Timestamp t0, std::size_t n_in, std::size_t n_out,
                               bool with_target) {
    if (n_in == 0 || n_out == 0) throw ConfigError("n_in and n_out must be positive");
    if (!aligned_to_step(t0)) return RejectReason::not_aligned;
    const auto s0 = a.step_of(t0);
    if (!s0 || *s0 + 1 < n_in || !steps_available(a, *s0 + 1 - n_in, n_in)) return RejectReason::missing_history;
    if (with_target && !steps_available(a, *s0 + 1, n_out)) return RejectReason::missing_target;
    const auto* w = latest_run(a.weather_runs, t0);
    if (!w || !run_offset(*w, t0, n_out)) return RejectReason::no_weather_run;
    const auto* q = latest_run(a.aqpcm_runs, t0);
    if (!q || !run_offset(*q, t0, n_out)) return RejectReason::no_aqpcm_run;
    return RejectReason::none;
}

AssemblyResult assemble_observation(const GriddedArchive& a, Timestamp t0, std::size_t n_in, std::size_t n_out,
                                    bool with_target) {
    const auto reason = check_observation(a, t0, n_in, n_out, with_target);
    if (reason != RejectReason::none) return {std::nullopt, reason};
    const std::size_t s0 = *a.step_of(t0);
    Observation obs;
    obs.t0 = t0;
    obs.history = timeline_window(a, s0 + 1 - n_in, n_in);
    if (with_target) obs.target = timeline_window(a, s0 + 1, n_out);

    const auto& w = *latest_run(a.weather_runs, t0);
    const auto& q = *latest_run(a.aqpcm_runs, t0);
    const std::size_t kw = *run_offset(w, t0, n_out);
    const std::size_t kq = *run_offset(q, t0, n_out);
    const std::size_t cells = a.grid.cells();
    obs.covariates = Tensor({n_out, a.grid.ny, a.grid.nx, kNumCovariates});
    double* dst = obs.covariates.data();
    for (std::size_t t = 0; t < n_out; ++t) {
        const double* ws = w.fields.data() + (kw + t) * cells * kNumWeather;
        const double* qs = q.fields.data() + (kq + t) * cells * kNumPollutants;
        for (std::size_t c = 0; c < cells; ++c) {
            double* row = dst + (t * cells + c) * kNumCovariates;
            std::copy_n(ws + c * kNumWeather, kNumWeather, row);
            std::copy_n(qs + c * kNumPollutants, kNumPollutants, row + kNumWeather);
        }
    }
    return {std::move(obs), RejectReason::none};
}

Observation assemble_observation(Timestamp t0, const MeasurementStore& measurements, const ForecastStore& forecasts,
                                 const GridSpec& grid, std::size_t n_in, std::size_t n_out, bool with_target,
                                 const ArchiveOptions& opt) {
    if (!aligned_to_step(t0)) throw DataError("t0 " + format_time(t0) + " is not aligned to 3 h");
    if (n_in == 0 || n_out == 0) throw ConfigError("n_in and n_out must be positive");
    const Timestamp first = t0 - kStep * static_cast<int>(n_in - 1);
    const Timestamp last = with_target ? t0 + kStep * static_cast<int>(n_out) : t0;
    ArchiveOptions o = opt;
    o.run_steps = std::max(o.run_steps, n_out + 16);
    const auto archive = build_archive(measurements, forecasts, grid, first, last, o);
    auto r = assemble_observation(archive, t0, n_in, n_out, with_target);
    if (!r.observation)
        throw DataError("observation at " + format_time(t0) + " rejected: " + std::string(reject_reason_name(r.reason)));
    return std::move(*r.observation);
}

ObservationScan scan_observations(const GriddedArchive& archive, std::size_t n_in, std::size_t n_out) {
    ObservationScan scan;
    for (std::size_t s = 0; s < archive.steps; ++s) {
        const auto t0 = archive.time_of(s);
        const auto reason = check_observation(archive, t0, n_in, n_out, true);
        if (reason == RejectReason::none)
            scan.accepted.push_back(t0);
        else
            ++scan.rejected[reason];
    }
    return scan;
}

// ---- split -----------------------------------------------------------------

void SplitConfig::validate() const {
    for (auto m : eval_months)
        if (m < 1 || m > 12) throw ConfigError("eval month " + std::to_string(m) + " is outside 1..12");
    if (buffer_days < 0) throw ConfigError("buffer_days must be non-negative");
}

Split split_train_eval(std::span<const Timestamp> t0s, const SplitConfig& cfg) {
    cfg.validate();
    Split out;
    std::vector<Timestamp> rest;
    for (auto t : t0s) (cfg.eval_months.count(month_of(t)) ? out.eval : rest).push_back(t);
    std::sort(out.eval.begin(), out.eval.end());
    std::sort(rest.begin(), rest.end());
    const auto buffer = std::chrono::duration_cast<seconds>(std::chrono::days{cfg.buffer_days});
    for (auto t : rest) {
        auto it = std::lower_bound(out.eval.begin(), out.eval.end(), t);
        bool near = false;
        if (it != out.eval.end() && *it - t < buffer) near = true;
        if (it != out.eval.begin() && t - *std::prev(it) < buffer) near = true;
        if (!near) out.train.push_back(t);
    }
    return out;
}

// ---- crops -----------------------------------------------------------------

namespace {

Tensor crop_sequence(const Tensor& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    const std::size_t T = x.dim(0), W = x.dim(2), C = x.dim(3), H = x.dim(1);
    Tensor out({T, h, w, C});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < h; ++j)
            std::memcpy(out.data() + ((t * h + j) * w) * C, x.data() + ((t * H + y0 + j) * W + x0) * C,
                        w * C * sizeof(double));
    return out;
}

}  // namespace

Observation crop(const Observation& obs, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0 || y0 + height > obs.ny() || x0 + width > obs.nx())
        throw ContractError("crop window outside the observation grid");
    Observation out;
    out.t0 = obs.t0;
    out.history = crop_sequence(obs.history, y0, x0, height, width);
    out.covariates = crop_sequence(obs.covariates, y0, x0, height, width);
    if (obs.target) out.target = crop_sequence(*obs.target, y0, x0, height, width);
    return out;
}

Observation sample_subgrid(const Observation& obs, std::mt19937_64& rng, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ConfigError("subgrid must be at least 1x1");
    if (obs.ny() < height || obs.nx() < width)
        throw ConfigError("grid " + std::to_string(obs.ny()) + "x" + std::to_string(obs.nx()) +
                          " is smaller than the " + std::to_string(height) + "x" + std::to_string(width) + " subgrid");
    const auto y0 = std::uniform_int_distribution<std::size_t>(0, obs.ny() - height)(rng);
    const auto x0 = std::uniform_int_distribution<std::size_t>(0, obs.nx() - width)(rng);
    return crop(obs, y0, x0, height, width);
}

// ---- observation sets ------------------------------------------------------

ObservationSet::ObservationSet(std::shared_ptr<const GriddedArchive> archive, std::vector<Timestamp> t0s,
                               std::size_t n_in, std::size_t n_out, FeatureMask mask)
    : archive_(std::move(archive)), t0s_(std::move(t0s)), n_in_(n_in), n_out_(n_out), mask_(mask) {
    if (!archive_) throw ContractError("observation set needs an archive");
    if (n_in_ == 0 || n_out_ == 0) throw ConfigError("n_in and n_out must be positive");
}

Observation ObservationSet::get(std::size_t i) const {
    auto r = assemble_observation(*archive_, t0s_.at(i), n_in_, n_out_, true);
    if (!r.observation)
        throw DataError("observation at " + format_time(t0s_[i]) +
                        " rejected: " + std::string(reject_reason_name(r.reason)));
    auto& cov = r.observation->covariates;
    if (mask_.zero_weather || mask_.zero_aqpcm)
        for (std::size_t row = 0; row < cov.rows(); ++row) {
            double* v = cov.data() + row * kNumCovariates;
            if (mask_.zero_weather) std::fill_n(v, kNumWeather, 0.0);
            if (mask_.zero_aqpcm) std::fill_n(v + kNumWeather, kNumPollutants, 0.0);
        }
    return std::move(*r.observation);
}

ObservationSet ObservationSet::with_history(std::size_t n_in) const {
    if (n_in == 0 || n_in > n_in_) throw ConfigError("history length can only be shortened");
    return ObservationSet(archive_, t0s_, n_in, n_out_, mask_);
}

ObservationSet ObservationSet::with_mask(FeatureMask mask) const {
    return ObservationSet(archive_, t0s_, n_in_, n_out_, mask);
}

}  // namespace aqcast
