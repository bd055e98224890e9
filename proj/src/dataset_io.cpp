#include "aqcast/dataset_io.hpp"

#include <fmt/format.h>
#include <fstream>

#include "aqcast/container.hpp"
#include "aqcast/error.hpp"

namespace aqcast {

namespace {

constexpr std::string_view kArchiveMagic = "AQDS";
constexpr std::uint32_t kArchiveVersion = 1;

template <class T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": field '" + key + "': " + e.what());
    }
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

std::vector<std::string> time_strings(std::span<const Timestamp> ts) {
    std::vector<std::string> out;
    for (auto t : ts) out.push_back(format_time(t));
    return out;
}

std::vector<Timestamp> parse_times(const nlohmann::json& j) {
    std::vector<Timestamp> out;
    for (const auto& s : j) out.push_back(parse_time(s.get<std::string>()));
    return out;
}

Tensor bytes_to_tensor(const std::vector<std::uint8_t>& v) {
    Tensor t({std::max<std::size_t>(v.size(), 1)});
    for (std::size_t k = 0; k < v.size(); ++k) t[k] = v[k];
    return t;
}

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t, std::size_t n) {
    if (t.size() < n) throw FormatError("mask tensor too short");
    std::vector<std::uint8_t> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = t[k] != 0.0;
    return v;
}

}  // namespace

nlohmann::json grid_to_json(const GridSpec& g) {
    return {{"lat0", g.lat0}, {"lon0", g.lon0}, {"dlat", g.dlat}, {"dlon", g.dlon}, {"ny", g.ny}, {"nx", g.nx}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
    GridSpec g;
    g.lat0 = field<double>(j, "lat0", "grid");
    g.lon0 = field<double>(j, "lon0", "grid");
    g.dlat = j.value("dlat", g.dlat);
    g.dlon = j.value("dlon", g.dlon);
    g.ny = field<std::size_t>(j, "ny", "grid");
    g.nx = field<std::size_t>(j, "nx", "grid");
    g.validate();
    return g;
}

// ---- manifest --------------------------------------------------------------

void DatasetManifest::validate() const {
    grid.validate();
    split.validate();
    if (measurements.empty() || weather.empty() || aqpcm.empty())
        throw ConfigError("manifest must list measurement, weather and aqpcm files");
    if (end < start) throw ConfigError("manifest end precedes start");
    if (n_in == 0 || n_out == 0) throw ConfigError("n_in and n_out must be positive");
    if (!(kernel_distance_km > 0.0)) throw ConfigError("kernel distance must be positive");
}

nlohmann::json DatasetManifest::to_json() const {
    auto paths = [](const std::vector<std::filesystem::path>& v) {
        std::vector<std::string> out;
        for (const auto& p : v) out.push_back(p.generic_string());
        return out;
    };
    return {{"measurements", paths(measurements)},
            {"weather", paths(weather)},
            {"aqpcm", paths(aqpcm)},
            {"grid", grid_to_json(grid)},
            {"start", format_time(start)},
            {"end", format_time(end)},
            {"n_in", n_in},
            {"n_out", n_out},
            {"split",
             {{"eval_months", std::vector<unsigned>(split.eval_months.begin(), split.eval_months.end())},
              {"buffer_days", split.buffer_days}}},
            {"kernel_distance_km", kernel_distance_km}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
    DatasetManifest m;
    const auto paths = [&](const char* key) {
        std::vector<std::filesystem::path> out;
        const auto& v = j.at(key);
        if (v.is_string())
            out.emplace_back(v.get<std::string>());
        else
            for (const auto& s : v) out.emplace_back(s.get<std::string>());
        return out;
    };
    try {
        m.measurements = paths("measurements");
        m.weather = paths("weather");
        m.aqpcm = paths("aqpcm");
        m.grid = grid_from_json(j.at("grid"));
        m.start = parse_time(j.at("start").get<std::string>());
        m.end = parse_time(j.at("end").get<std::string>());
        m.n_in = j.value("n_in", m.n_in);
        m.n_out = j.value("n_out", m.n_out);
        m.kernel_distance_km = j.value("kernel_distance_km", m.kernel_distance_km);
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.contains("eval_months")) {
                m.split.eval_months.clear();
                for (const auto& x : s.at("eval_months")) m.split.eval_months.insert(x.get<unsigned>());
            }
            m.split.buffer_days = s.value("buffer_days", m.split.buffer_days);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    } catch (const DataError& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    m.base_dir = std::move(base_dir);
    m.validate();
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    return DatasetManifest::from_json(read_json(path), path.parent_path());
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) { write_json(m.to_json(), path); }

// ---- building --------------------------------------------------------------

std::string BuildReport::summary() const {
    std::string s = fmt::format(
        "measurement rows {} accepted {} (missing value {}, unsupported pollutant {}, malformed {})\n"
        "forecast rows {} runs {} (malformed {}, unknown variable {}, incomplete valid times {})\n"
        "outliers dropped {}\n"
        "observations accepted {}",
        measurements.rows, measurements.accepted, measurements.missing_value, measurements.unsupported_pollutant,
        measurements.malformed, forecasts.rows, forecasts.runs, forecasts.malformed, forecasts.unknown_variable,
        forecasts.incomplete_valid_times, outliers_dropped, accepted);
    for (const auto& [reason, n] : rejected) s += fmt::format(", {} {}", reject_reason_name(reason), n);
    s += fmt::format("\nsplit train {} eval {} (buffer discarded {})", train, eval, split_discarded);
    if (clamped_regrid_points > 0) s += fmt::format("\nwarning: {} regridded points outside forecast coverage", clamped_regrid_points);
    return s;
}

Dataset build_dataset(std::span<const StationReading> readings, std::vector<ForecastRun> runs, const GridSpec& grid,
                      Timestamp start, Timestamp end, std::size_t n_in, std::size_t n_out, const SplitConfig& split,
                      double kernel_distance_km, BuildReport* report) {
    BuildReport local;
    BuildReport& r = report ? *report : local;
    const auto filtered = filter_all_outliers(readings);
    r.outliers_dropped = readings.size() - filtered.size();
    const MeasurementStore mstore(filtered);
    const ForecastStore fstore(std::move(runs));

    ArchiveOptions opt;
    opt.kernel_distance_km = kernel_distance_km;
    opt.run_steps = std::max(opt.run_steps, n_out + 16);
    auto archive = std::make_shared<GriddedArchive>(build_archive(mstore, fstore, grid, start, end, opt));
    r.clamped_regrid_points = archive->clamped_regrid_points;

    const auto scan = scan_observations(*archive, n_in, n_out);
    r.accepted = scan.accepted.size();
    r.rejected = scan.rejected;
    auto s = split_train_eval(scan.accepted, split);
    r.train = s.train.size();
    r.eval = s.eval.size();
    r.split_discarded = r.accepted - r.train - r.eval;

    Dataset d;
    d.archive = std::move(archive);
    d.n_in = n_in;
    d.n_out = n_out;
    d.split = split;
    d.train = std::move(s.train);
    d.eval = std::move(s.eval);
    return d;
}

namespace {

std::vector<StationReading> ingest_all_measurements(const DatasetManifest& m, IngestStats& st) {
    std::vector<StationReading> out;
    for (const auto& p : m.measurements) {
        auto part = ingest_measurements(m.base_dir / p, &st);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

std::vector<ForecastRun> ingest_all_forecasts(const DatasetManifest& m, ForecastIngestStats& st) {
    std::vector<ForecastRun> runs;
    std::size_t total = 0;
    for (const auto* list : {&m.weather, &m.aqpcm})
        for (const auto& p : *list) {
            auto part = ingest_forecasts(m.base_dir / p, &st);
            total += part.size();
            runs.insert(runs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
    st.runs = total;
    return runs;
}

}  // namespace

Dataset build_dataset(const DatasetManifest& m, BuildReport* report) {
    m.validate();
    BuildReport local;
    BuildReport& r = report ? *report : local;
    const auto readings = ingest_all_measurements(m, r.measurements);
    auto runs = ingest_all_forecasts(m, r.forecasts);
    const auto forecasts = r.forecasts;
    auto d = build_dataset(readings, std::move(runs), m.grid, m.start, m.end, m.n_in, m.n_out, m.split,
                           m.kernel_distance_km, &r);
    r.forecasts = forecasts;
    return d;
}

StoreBundle load_stores(const std::filesystem::path& dir) {
    const auto m = load_manifest(dir / "manifest.json");
    IngestStats ms;
    ForecastIngestStats fs;
    const auto readings = filter_all_outliers(ingest_all_measurements(m, ms));
    return {MeasurementStore(readings), ForecastStore(ingest_all_forecasts(m, fs)), m.grid};
}

// ---- persistence -----------------------------------------------------------

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& a = *d.archive;
    nlohmann::json meta{{"format_version", kArchiveVersion},
                        {"grid", grid_to_json(a.grid)},
                        {"n_in", d.n_in},
                        {"n_out", d.n_out},
                        {"start", format_time(a.start)},
                        {"steps", a.steps},
                        {"split",
                         {{"eval_months", std::vector<unsigned>(d.split.eval_months.begin(), d.split.eval_months.end())},
                          {"buffer_days", d.split.buffer_days}}},
                        {"train", time_strings(d.train)},
                        {"eval", time_strings(d.eval)}};
    write_json(meta, dir / "dataset.json");

    std::vector<Tensor> owned;
    owned.reserve(1 + a.weather_runs.size() + a.aqpcm_runs.size());
    std::vector<NamedTensor> tensors{{"measurements", &a.measurements}};
    owned.push_back(bytes_to_tensor(a.available));
    tensors.emplace_back("available", &owned.back());
    nlohmann::json runs_meta = nlohmann::json::object();
    for (auto [kind, list] : {std::pair{"weather", &a.weather_runs}, std::pair{"aqpcm", &a.aqpcm_runs}}) {
        auto entries = nlohmann::json::array();
        for (std::size_t k = 0; k < list->size(); ++k) {
            const auto& run = (*list)[k];
            entries.push_back({{"issued", format_time(run.issued)},
                               {"first_step", format_time(run.first_step)},
                               {"steps", run.valid.size()}});
            const auto base = fmt::format("{}/{}", kind, k);
            tensors.emplace_back(base + "/fields", &run.fields);
            owned.push_back(bytes_to_tensor(run.valid));
            tensors.emplace_back(base + "/valid", &owned.back());
        }
        runs_meta[kind] = std::move(entries);
    }
    nlohmann::json header{{"grid", grid_to_json(a.grid)},
                          {"start", format_time(a.start)},
                          {"steps", a.steps},
                          {"clamped_regrid_points", a.clamped_regrid_points},
                          {"runs", runs_meta}};
    write_container(dir / "archive.bin", kArchiveMagic, kArchiveVersion, std::move(header), tensors);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto meta = read_json(dir / "dataset.json");
    const auto c = read_container(dir / "archive.bin", kArchiveMagic, {kArchiveVersion});
    auto a = std::make_shared<GriddedArchive>();
    Dataset d;
    try {
        const auto& h = c.header;
        a->grid = grid_from_json(h.at("grid"));
        a->start = parse_time(h.at("start").get<std::string>());
        a->steps = h.at("steps").get<std::size_t>();
        a->clamped_regrid_points = h.value("clamped_regrid_points", std::size_t{0});
        a->measurements = c.tensor("measurements");
        if (a->measurements.shape() != Shape{a->steps, a->grid.ny, a->grid.nx, kNumPollutants})
            throw FormatError("measurement timeline shape does not match the archive header");
        a->available = tensor_to_bytes(c.tensor("available"), a->steps * kNumPollutants);
        for (auto [kind, list] : {std::pair{"weather", &a->weather_runs}, std::pair{"aqpcm", &a->aqpcm_runs}}) {
            const auto& entries = h.at("runs").at(kind);
            for (std::size_t k = 0; k < entries.size(); ++k) {
                RegriddedRun run;
                run.issued = parse_time(entries[k].at("issued").get<std::string>());
                run.first_step = parse_time(entries[k].at("first_step").get<std::string>());
                const auto base = fmt::format("{}/{}", kind, k);
                run.fields = c.tensor(base + "/fields");
                run.valid = tensor_to_bytes(c.tensor(base + "/valid"), entries[k].at("steps").get<std::size_t>());
                list->push_back(std::move(run));
            }
        }
        d.n_in = meta.at("n_in").get<std::size_t>();
        d.n_out = meta.at("n_out").get<std::size_t>();
        d.split.eval_months.clear();
        for (const auto& m : meta.at("split").at("eval_months")) d.split.eval_months.insert(m.get<unsigned>());
        d.split.buffer_days = meta.at("split").at("buffer_days").get<int>();
        d.train = parse_times(meta.at("train"));
        d.eval = parse_times(meta.at("eval"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + ": corrupt dataset metadata: " + e.what());
    }
    d.archive = std::move(a);
    return d;
}

}  // namespace aqcast
