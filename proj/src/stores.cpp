#include <algorithm>
#include <cmath>
#include <map>

#include "aqcast/datasets.hpp"
#include "aqcast/error.hpp"

namespace aqcast {

// ---- outlier filter --------------------------------------------------------

namespace {

double median_of(std::vector<double>& v) {
    const auto n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
    const double hi = v[n / 2];
    if (n % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
    return 0.5 * (lo + hi);
}

}  // namespace

std::vector<StationReading> filter_outliers(std::span<const StationReading> series, const OutlierConfig& cfg) {
    std::vector<StationReading> bounded;
    bounded.reserve(series.size());
    for (const auto& r : series) {
        const double hi = cfg.upper_bound[static_cast<std::size_t>(r.pollutant)];
        if (r.value >= 0.0 && r.value <= hi) bounded.push_back(r);
    }

    // Centred window of +-window/2 around each reading, the reading included.
    const auto half = std::chrono::duration_cast<seconds>(cfg.window) / 2;
    std::vector<StationReading> out;
    out.reserve(bounded.size());
    std::vector<double> window, dev;
    std::size_t lo = 0, hi = 0;
    for (std::size_t k = 0; k < bounded.size(); ++k) {
        const auto t = bounded[k].time;
        while (bounded[lo].time < t - half) ++lo;
        while (hi < bounded.size() && bounded[hi].time <= t + half) ++hi;
        bool keep = true;
        if (hi - lo >= cfg.min_window_points) {
            window.clear();
            for (std::size_t m = lo; m < hi; ++m) window.push_back(bounded[m].value);
            const double med = median_of(window);
            dev.clear();
            for (std::size_t m = lo; m < hi; ++m) dev.push_back(std::abs(bounded[m].value - med));
            const double mad = median_of(dev);
            if (mad > 0.0 && std::abs(bounded[k].value - med) > cfg.mad_factor * mad) keep = false;
        }
        if (keep) out.push_back(bounded[k]);
    }
    return out;
}

std::vector<StationReading> filter_all_outliers(std::span<const StationReading> readings, const OutlierConfig& cfg) {
    std::map<std::pair<std::string, int>, std::vector<StationReading>> series;
    for (const auto& r : readings) series[{r.station_id, static_cast<int>(r.pollutant)}].push_back(r);
    std::vector<StationReading> out;
    for (auto& [key, s] : series) {
        std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
        auto kept = filter_outliers(s, cfg);
        out.insert(out.end(), kept.begin(), kept.end());
    }
    return out;
}

// ---- measurement store -----------------------------------------------------

MeasurementStore::MeasurementStore(std::span<const StationReading> readings) {
    std::map<std::string, std::size_t> index;
    for (const auto& r : readings) {
        auto [it, fresh] = index.try_emplace(r.station_id, stations_.size());
        if (fresh) stations_.push_back(Series{r.location(), {}});
        stations_[it->second].values[static_cast<std::size_t>(r.pollutant)].emplace_back(r.time, r.value);
    }
    for (auto& s : stations_)
        for (auto& v : s.values) {
            std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            // Duplicate timestamps keep the first reading.
            v.erase(std::unique(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first == b.first; }),
                    v.end());
        }
}

std::vector<StationValue> MeasurementStore::sample(Pollutant p, Timestamp at) const {
    std::vector<StationValue> out;
    const auto tolerance = std::chrono::duration_cast<seconds>(hours{1});
    for (const auto& s : stations_) {
        const auto& v = s.values[static_cast<std::size_t>(p)];
        auto it = std::lower_bound(v.begin(), v.end(), at, [](const auto& e, Timestamp t) { return e.first < t; });
        const std::pair<Timestamp, double>* best = nullptr;
        auto consider = [&](const std::pair<Timestamp, double>& e) {
            const auto d = e.first > at ? e.first - at : at - e.first;
            if (d > tolerance) return;
            // Ties between before and after go to the earlier reading.
            if (!best) {
                best = &e;
                return;
            }
            const auto bd = best->first > at ? best->first - at : at - best->first;
            if (d < bd) best = &e;
        };
        if (it != v.begin()) consider(*std::prev(it));
        if (it != v.end()) consider(*it);
        if (best) out.push_back({s.location, best->second});
    }
    return out;
}

std::optional<std::pair<Timestamp, Timestamp>> MeasurementStore::time_range() const {
    std::optional<std::pair<Timestamp, Timestamp>> range;
    for (const auto& s : stations_)
        for (const auto& v : s.values) {
            if (v.empty()) continue;
            if (!range) range = {v.front().first, v.back().first};
            range->first = std::min(range->first, v.front().first);
            range->second = std::max(range->second, v.back().first);
        }
    return range;
}

// ---- forecast store --------------------------------------------------------

std::optional<Tensor> forecast_at(const ForecastRun& run, Timestamp at) {
    const auto& vt = run.valid_times;
    if (vt.empty() || at < vt.front() || at > vt.back()) return std::nullopt;
    auto it = std::lower_bound(vt.begin(), vt.end(), at);
    const auto hi = static_cast<std::size_t>(it - vt.begin());
    if (*it == at) return run.values.slab(hi);
    const std::size_t lo = hi - 1;
    const auto gap = vt[hi] - vt[lo];
    if (gap > kStep) {
        const double w = std::chrono::duration<double>(at - vt[lo]) / std::chrono::duration<double>(gap);
        Tensor a = run.values.slab(lo);
        const Tensor b = run.values.slab(hi);
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = (1.0 - w) * a[k] + w * b[k];
        return a;
    }
    return run.values.slab(at - vt[lo] <= vt[hi] - at ? lo : hi);
}

ForecastStore::ForecastStore(std::vector<ForecastRun> runs) {
    for (auto& r : runs) add(std::move(r));
}

void ForecastStore::add(ForecastRun run) {
    if (run.values.rank() != 4 || run.values.dim(0) != run.valid_times.size() || run.values.dim(1) != run.grid.ny ||
        run.values.dim(2) != run.grid.nx || run.values.dim(3) != run.variables())
        throw ContractError("forecast run values of shape " + shape_string(run.values.shape()) +
                            " do not match its grid, valid times and kind");
    if (!std::is_sorted(run.valid_times.begin(), run.valid_times.end()))
        throw ContractError("forecast valid times must be sorted");
    auto& list = run.kind == ForecastKind::weather ? weather_ : aqpcm_;
    auto pos = std::upper_bound(list.begin(), list.end(), run.run_time,
                                [](Timestamp t, const ForecastRun& r) { return t < r.run_time; });
    list.insert(pos, std::move(run));
}

const ForecastRun* ForecastStore::latest(ForecastKind kind, Timestamp t) const {
    const auto& list = kind == ForecastKind::weather ? weather_ : aqpcm_;
    auto pos = std::upper_bound(list.begin(), list.end(), t,
                                [](Timestamp x, const ForecastRun& r) { return x < r.run_time; });
    if (pos == list.begin()) return nullptr;
    return &*std::prev(pos);
}

std::span<const ForecastRun> ForecastStore::runs(ForecastKind kind) const {
    return kind == ForecastKind::weather ? std::span<const ForecastRun>(weather_) : std::span<const ForecastRun>(aqpcm_);
}

}  // namespace aqcast
