// aqcast command-line interface. Exit codes: 0 success, 1 usage or
// configuration error, 2 data error, 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

#include "aqcast/dataset_io.hpp"
#include "aqcast/engine.hpp"
#include "aqcast/error.hpp"
#include "aqcast/evaluation.hpp"
#include "aqcast/gradcheck.hpp"
#include "aqcast/synthetic.hpp"

namespace fs = std::filesystem;
using namespace aqcast;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto out = fmt::output_file(path.string());
    out.print("{}", text);
}

struct Options {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_in, n_out;

    fs::path synth_config, out;
    fs::path manifest;
    fs::path dataset, model_config, loss_csv;
    std::optional<std::size_t> epochs;
    fs::path checkpoint;
    std::string benchmark;
    fs::path stores;
    std::string t0;
    std::string format = "csv";
    double tolerance = 1e-4;
    std::vector<std::string> variants;
};

ModelConfig model_config_for(const Options& o, const Dataset& d) {
    ModelConfig cfg = o.model_config.empty() ? ModelConfig{} : ModelConfig::from_json(read_json(o.model_config));
    cfg.grid = d.archive->grid;
    cfg.n_in = d.n_in;
    cfg.n_out = d.n_out;
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.epochs = *o.epochs;
    cfg.validate();
    return cfg;
}

int cmd_synth(const Options& o) {
    SynthConfig cfg = o.synth_config.empty() ? SynthConfig{} : SynthConfig::from_json(read_json(o.synth_config));
    cfg.validate();
    const auto seed = o.seed.value_or(2019);
    const auto data = generate_synthetic(cfg, seed);
    write_synthetic(data, o.out);
    fmt::print("wrote {} readings, {} weather runs, {} AQPCM runs to {} (seed {})\n", data.readings.size(),
               data.weather.size(), data.aqpcm.size(), o.out.string(), seed);
    return 0;
}

int cmd_build(const Options& o) {
    auto manifest = load_manifest(o.manifest);
    if (o.n_in) manifest.n_in = *o.n_in;
    if (o.n_out) manifest.n_out = *o.n_out;
    BuildReport report;
    const auto d = build_dataset(manifest, &report);
    save_dataset(d, o.out);
    fmt::print("{}\n", report.summary());
    fmt::print("dataset written to {}\n", o.out.string());
    return 0;
}

int cmd_train(const Options& o) {
    const auto d = load_dataset(o.dataset);
    auto params = build_model(model_config_for(o, d));
    const auto train_set = d.train_set();
    const auto eval_set = d.eval_set();
    fmt::print("training {} parameters on {} observations ({} eval)\n", params.parameter_count(), train_set.size(),
               eval_set.size());

    std::string csv = "epoch,train_loss,eval_loss\n";
    TrainOptions opt;
    if (!eval_set.empty()) opt.eval = &eval_set;
    opt.on_epoch = [&](std::size_t e, double loss, std::optional<double> eval) {
        const std::string ev = eval ? fmt::format("{}", *eval) : "";
        csv += fmt::format("{},{},{}\n", e + 1, loss, ev);
        fmt::print("epoch {:>3}  train {:.5f}{}\n", e + 1, loss, eval ? fmt::format("  eval {:.5f}", *eval) : "");
        std::fflush(stdout);
    };
    train(params, train_set, opt);
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    save_checkpoint(params, o.out);
    const fs::path loss_path = o.loss_csv.empty() ? fs::path(o.out.string() + ".loss.csv") : o.loss_csv;
    write_text(loss_path, csv);
    fmt::print("checkpoint {}\nloss history {}\n", o.out.string(), loss_path.string());
    return 0;
}

int cmd_evaluate(const Options& o) {
    const auto d = load_dataset(o.dataset);
    auto eval_set = d.eval_set();
    std::vector<NamedForecaster> fs;
    if (o.benchmark.empty() || o.benchmark == "constant") fs.push_back(constant_forecaster(d.n_out));
    if (o.benchmark.empty() || o.benchmark == "adjusted") {
        auto factors = fit_adjustment_factors(d.train_set());
        for (const auto& w : factors.warnings) fmt::print(stderr, "warning: {}\n", w);
        fs.push_back(adjusted_forecaster(std::move(factors), d.n_out));
    }
    if (!o.checkpoint.empty()) {
        const auto params = load_checkpoint(o.checkpoint);
        if (params.config.grid != d.archive->grid || params.config.n_out != d.n_out || params.config.n_in > d.n_in)
            throw ConfigError("checkpoint grid or horizons do not match the dataset");
        // A no-history model sees only the last measurements; the benchmarks
        // only ever use the last step, so they are unaffected.
        if (params.config.n_in < d.n_in) eval_set = eval_set.with_history(params.config.n_in);
        fs.push_back(model_forecaster(params));
    }
    const auto report = evaluate(fs, eval_set);
    fmt::print("{}", report.table());
    if (!o.out.empty()) {
        write_text(o.out / "summary.csv", report.summary_csv());
        write_text(o.out / "per_horizon.csv", report.per_horizon_csv());
    } else {
        fmt::print("\n{}", report.summary_csv());
    }
    return 0;
}

// Binary 8-bit PGM, north row first; grey = value / scale.
void write_pgm(const fs::path& path, const Tensor& values, std::size_t t, std::size_t p, double scale) {
    const std::size_t ny = values.dim(1), nx = values.dim(2);
    std::string bytes = fmt::format("P5\n{} {}\n255\n", nx, ny);
    for (std::size_t row = 0; row < ny; ++row) {
        const std::size_t y = ny - 1 - row;
        for (std::size_t x = 0; x < nx; ++x) {
            const double v = scale > 0.0 ? values.at({t, y, x, p}) / scale : 0.0;
            bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
        }
    }
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

int cmd_forecast(const Options& o) {
    if (o.format != "csv" && o.format != "pgm") throw ConfigError("--format must be csv or pgm");
    const auto params = load_checkpoint(o.checkpoint);
    const auto stores = load_stores(o.stores);
    const auto fc = predict(params, stores.measurements, stores.forecasts, parse_time(o.t0));
    fs::create_directories(o.out);
    const auto& g = fc.grid;
    if (o.format == "csv") {
        auto out = fmt::output_file((o.out / "forecast.csv").string());
        out.print("valid_time,pollutant,lat,lon,value\n");
        for (std::size_t t = 0; t < fc.valid_times.size(); ++t)
            for (auto p : kPollutants)
                for (std::size_t y = 0; y < g.ny; ++y)
                    for (std::size_t x = 0; x < g.nx; ++x) {
                        const auto c = g.center(y, x);
                        out.print("{},{},{},{},{}\n", format_time(fc.valid_times[t]), pollutant_name(p), c.lat, c.lon,
                                  fc.values.at({t, y, x, static_cast<std::size_t>(p)}));
                    }
    } else {
        // One grey scale per pollutant so timesteps stay comparable.
        for (auto p : kPollutants) {
            const auto pi = static_cast<std::size_t>(p);
            double scale = 0.0;
            for (std::size_t k = pi; k < fc.values.size(); k += kNumPollutants) scale = std::max(scale, fc.values[k]);
            for (std::size_t t = 0; t < fc.valid_times.size(); ++t)
                write_pgm(o.out / fmt::format("{}_{:03}.pgm", pollutant_name(p), t + 1), fc.values, t, pi, scale);
            fmt::print("{}: grey 255 = {:.2f} ug/m3\n", pollutant_label(p), scale);
        }
    }
    fmt::print("forecast from {} ({} steps) written to {}\n", format_time(fc.t0), fc.valid_times.size(),
               o.out.string());
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const auto cases = run_gradcheck_suite(o.tolerance, o.seed.value_or(2019));
    bool ok = true;
    for (const auto& c : cases) {
        fmt::print("{:<4} {:<60} rel err {:.3e} ({} coords)\n", c.passed ? "ok" : "FAIL", c.name,
                   c.result.max_rel_error, c.result.coords_checked);
        ok = ok && c.passed;
    }
    fmt::print("{} of {} cases within {:g}\n", std::count_if(cases.begin(), cases.end(), [](auto& c) { return c.passed; }),
               cases.size(), o.tolerance);
    return ok ? 0 : kExitNumerical;
}

int cmd_ablate(const Options& o) {
    const auto d = load_dataset(o.dataset);
    const auto base = model_config_for(o, d);
    std::vector<Ablation> variants;
    for (const auto& v : o.variants) {
        if (v == "all-variants") {
            const auto all = all_ablations();
            variants.insert(variants.end(), all.begin(), all.end());
        } else {
            variants.push_back(parse_ablation(v));
        }
    }
    std::vector<AblationResult> results;
    for (auto v : variants) {
        fmt::print("variant {} ...\n", ablation_name(v));
        std::fflush(stdout);
        results.push_back(run_ablation(d, base, v));
    }
    fmt::print("{}", ablation_table(results));
    if (!o.out.empty()) write_text(o.out / "ablation.csv", ablation_csv(results));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aqcast: gridded air-quality forecasting with ConvLSTM encoder-decoders"};
    app.require_subcommand(1);
    app.fallthrough();  // --seed is accepted after the subcommand too
    Options o;
    app.add_option("--seed", o.seed, "Seed for every random draw (data generation, init, shuffling, crops)");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", o.synth_config, "Synthetic generator config (JSON)")->check(CLI::ExistingFile);
    synth->add_option("--out", o.out, "Output directory")->required();

    auto* build = app.add_subcommand("build-dataset", "Ingest, filter, assemble and split");
    build->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
    build->add_option("--out", o.out, "Output directory")->required();
    build->add_option("--n-in", o.n_in, "Override the manifest's history length");
    build->add_option("--n-out", o.n_out, "Override the manifest's forecast length");

    auto* tr = app.add_subcommand("train", "Train a model; writes a checkpoint and a per-epoch loss CSV");
    tr->add_option("--dataset", o.dataset, "Built dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--config", o.model_config, "Model config (JSON)")->check(CLI::ExistingFile);
    tr->add_option("--out", o.out, "Checkpoint path")->required();
    tr->add_option("--loss-csv", o.loss_csv, "Loss history path (default <out>.loss.csv)");
    tr->add_option("--epochs", o.epochs, "Override the configured epoch count");

    auto* ev = app.add_subcommand("evaluate", "Per-pollutant, per-horizon MSLE report");
    ev->add_option("--dataset", o.dataset, "Built dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
    ev->add_option("--benchmark", o.benchmark, "Only this benchmark (default: both)")
        ->check(CLI::IsMember({"constant", "adjusted"}));
    ev->add_option("--out", o.out, "Directory for summary.csv and per_horizon.csv");

    auto* fc = app.add_subcommand("forecast", "Forecast grids from raw stores");
    fc->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    fc->add_option("--stores", o.stores, "Directory with manifest.json and its input files")
        ->required()
        ->check(CLI::ExistingDirectory);
    fc->add_option("--t0", o.t0, "Forecast issue time, ISO 8601 on a 3 h boundary")->required();
    fc->add_option("--out", o.out, "Output directory")->required();
    fc->add_option("--format", o.format, "csv or pgm")->check(CLI::IsMember({"csv", "pgm"}));

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gc->add_option("--tolerance", o.tolerance, "Maximum relative error");

    auto* ab = app.add_subcommand("ablate", "Feature and kernel ablations");
    ab->add_option("--dataset", o.dataset, "Built dataset directory")->required()->check(CLI::ExistingDirectory);
    ab->add_option("--config", o.model_config, "Base model config (JSON)")->check(CLI::ExistingFile);
    ab->add_option("--variant", o.variants,
                   "all, no-history, no-aqpcm, no-weather, kernel-1, kernel-3, kernel-5 or all-variants")
        ->required();
    ab->add_option("--epochs", o.epochs, "Override the configured epoch count");
    ab->add_option("--out", o.out, "Directory for ablation.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*build) return cmd_build(o);
        if (*tr) return cmd_train(o);
        if (*ev) return cmd_evaluate(o);
        if (*fc) return cmd_forecast(o);
        if (*gc) return cmd_gradcheck(o);
        if (*ab) return cmd_ablate(o);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return kExitUsage;
    } catch (const ContractError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const NumericalError& e) {
        fmt::print(stderr, "numerical failure: {}\n", e.what());
        return kExitNumerical;
    } catch (const DomainError& e) {
        fmt::print(stderr, "numerical failure: {}\n", e.what());
        return kExitNumerical;
    } catch (const std::system_error& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
