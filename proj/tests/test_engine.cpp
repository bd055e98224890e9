#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "aqcast/dataset_io.hpp"
#include "aqcast/engine.hpp"
#include "aqcast/error.hpp"
#include "aqcast/gradcheck.hpp"
#include "aqcast/synthetic.hpp"
#include "test_util.hpp"

using namespace aqcast;
using aqcast::testing::random_tensor;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("aqcast_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ModelConfig tiny_config(const GridSpec& grid) {
    ModelConfig c;
    c.grid = grid;
    c.n_in = 2;
    c.n_out = 4;
    c.encoder = {{4, 3}, {3, 3}};
    c.f_encoder = c.encoder;
    c.decoder = c.encoder;
    c.batch_size = 3;
    c.epochs = 2;
    c.subgrid_height = 6;
    c.subgrid_width = 6;
    c.lr = 3e-3;
    return c;
}

void fit_plausible_norm(ModelParams& p) {
    p.norm.weather_mean = {280, 60, 0, 0, 700, 0.2};
    p.norm.weather_std = {5, 15, 3, 3, 400, 0.5};
    p.norm.concentration_scale = {20, 50, 10, 15};
    p.norm.fitted = true;
}

// Inputs in realistic physical ranges for a (ny, nx) grid.
std::pair<Tensor, Tensor> random_inputs(const ModelConfig& c, std::size_t ny, std::size_t nx, std::mt19937_64& rng) {
    Tensor history = random_tensor({c.n_in, ny, nx, kNumPollutants}, rng, 2.0, 60.0);
    Tensor cov({c.n_out, ny, nx, kNumCovariates});
    const std::array<double, kNumCovariates> lo{270, 30, -8, -8, 200, 0, 5, 20, 2, 5};
    const std::array<double, kNumCovariates> hi{290, 90, 8, 8, 1500, 2, 60, 90, 30, 50};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < cov.rows(); ++r)
        for (std::size_t f = 0; f < kNumCovariates; ++f) cov[r * kNumCovariates + f] = lo[f] + (hi[f] - lo[f]) * u(rng);
    return {history, cov};
}

Tensor crop_cells(const Tensor& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    const auto& s = x.shape();
    Tensor out({s[0], h, w, s[3]});
    for (std::size_t t = 0; t < s[0]; ++t)
        for (std::size_t j = 0; j < h; ++j)
            for (std::size_t i = 0; i < w; ++i)
                for (std::size_t c = 0; c < s[3]; ++c) out.at({t, j, i, c}) = x.at({t, y0 + j, x0 + i, c});
    return out;
}

// Small synthetic archive shared by the training tests.
struct Fixture {
    SynthConfig synth;
    SyntheticData data;
    Dataset dataset;

    Fixture() {
        synth.grid = GridSpec{44.0, 2.0, 0.5, 0.5, 8, 8};
        synth.stations = 16;
        synth.days = 4;
        synth.weather_horizon_h = 72;
        synth.aqpcm_horizon_h = 72;
        data = generate_synthetic(synth, 11);
        std::vector<ForecastRun> runs = data.weather;
        runs.insert(runs.end(), data.aqpcm.begin(), data.aqpcm.end());
        SplitConfig split;
        split.eval_months = {};
        dataset = build_dataset(data.readings, runs, synth.grid, synth.start, synth.end(), 2, 4, split);
    }

    ObservationSet first(std::size_t n) const {
        std::vector<Timestamp> t0s(dataset.train.begin(), dataset.train.begin() + static_cast<long>(n));
        return ObservationSet(dataset.archive, t0s, 2, 4);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

}  // namespace

TEST_CASE("model config") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.encoder[0].kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.decoder.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    ModelConfig d;
    d.grid = GridSpec{40, 1, 0.25, 0.25, 30, 20};
    d.n_in = 4;
    d.encoder = {{16, 5}};
    d.seed = 99;
    const auto back = ModelConfig::from_json(d.to_json());
    CHECK(back.grid == d.grid);
    CHECK(back.n_in == 4);
    CHECK(back.encoder == d.encoder);
    CHECK(back.decoder == d.decoder);
    CHECK(back.seed == 99);
    CHECK(back.scale_concentrations);

    const auto k5 = ModelConfig{}.with_kernel(5);
    for (const auto* s : {&k5.encoder, &k5.f_encoder, &k5.decoder})
        for (const auto& l : *s) CHECK(l.kernel == 5);
    CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json{{"n_in", "eight"}}), ConfigError);
}

TEST_CASE("parameter count") {
    ModelConfig c;
    c.grid = GridSpec{0, 0, 0.5, 0.5, 20, 20};
    const auto a = build_model(c);
    CHECK(a.encoder.blocks[0].parameter_count() == 156928);
    CHECK(a.encoder.blocks[0].parameter_count() == nn::convlstm_parameter_count(3, 4, 64));

    // Grid size never enters the parameter shapes.
    c.grid = GridSpec{0, 0, 0.5, 0.5, 40, 40};
    const auto b = build_model(c);
    CHECK(a.parameter_count() == b.parameter_count());

    std::size_t expected = 0;
    const auto stack_count = [&](const std::vector<LayerSpec>& s, std::size_t c_in) {
        for (const auto& l : s) {
            expected += nn::convlstm_parameter_count(l.kernel, c_in, l.hidden) + 2 * l.hidden;
            c_in = l.hidden;
        }
    };
    stack_count(c.encoder, kNumPollutants);
    stack_count(c.f_encoder, kNumCovariates);
    stack_count(c.decoder, c.encoder.back().hidden);
    expected += (c.decoder.back().hidden + c.f_encoder.back().hidden) * kNumPollutants + kNumPollutants;
    CHECK(a.parameter_count() == expected);
    CHECK(a.trainable_names().size() == a.trainable().size());
    CHECK(a.trainable_names().front() == "encoder/0/w_x");
    CHECK(a.trainable_names().back() == "head/b");
}

TEST_CASE("initialization") {
    const auto cfg = tiny_config(GridSpec{0, 0, 0.5, 0.5, 6, 6});
    const auto a = build_model(cfg);
    const auto b = build_model(cfg);
    auto ta = a.trainable();
    auto tb = b.trainable();
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(*ta[i] == *tb[i]);

    auto other = cfg;
    other.seed += 1;
    CHECK_FALSE(*build_model(other).trainable()[0] == *ta[0]);

    // Forget-gate bias slice is +1, other gates 0.
    const auto& bias = a.encoder.blocks[0].bias;
    const std::size_t h = cfg.encoder[0].hidden;
    for (std::size_t i = 0; i < 4 * h; ++i) CHECK(bias[i] == (i >= h && i < 2 * h ? 1.0 : 0.0));
    for (std::size_t p = 0; p < kNumPollutants; ++p) CHECK(a.head_b[p] == 1.0);
}

TEST_CASE("forward") {
    std::mt19937_64 rng(4);
    const auto cfg = tiny_config(GridSpec{0, 0, 0.5, 0.5, 7, 5});
    auto params = build_model(cfg);
    fit_plausible_norm(params);
    const auto [history, cov] = random_inputs(cfg, 7, 5, rng);

    const auto out = forward(params, history, cov);
    CHECK(out.shape() == Shape{cfg.n_out, 7, 5, kNumPollutants});
    for (double v : out.values()) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }
    CHECK(forward(params, history, cov) == out);

    SUBCASE("batched input matches single") {
        const auto [h2, c2] = random_inputs(cfg, 7, 5, rng);
        const Observation o1{{}, history, cov, std::nullopt}, o2{{}, h2, c2, std::nullopt};
        const std::vector<Observation> obs{o1, o2};
        const auto batch = make_batch(obs);
        const auto both = forward(params, batch.history, batch.covariates);
        CHECK(both.shape() == Shape{cfg.n_out, 2, 7, 5, kNumPollutants});
        const auto second = forward(params, h2, c2);
        const std::size_t slab = 7 * 5 * kNumPollutants;
        double diff = 0.0;
        for (std::size_t t = 0; t < cfg.n_out; ++t)
            for (std::size_t k = 0; k < slab; ++k)
                diff = std::max(diff, std::abs(both[(t * 2) * slab + k] - out[t * slab + k]) +
                                          std::abs(both[(t * 2 + 1) * slab + k] - second[t * slab + k]));
        CHECK(diff < 1e-12);
    }

    SUBCASE("covariates reach the output") {
        Tensor zero_cov(cov.shape());
        CHECK(max_abs_diff(forward(params, history, zero_cov), out) > 1e-6);
        Tensor zero_hist(history.shape());
        CHECK(max_abs_diff(forward(params, zero_hist, cov), out) > 1e-6);
    }

    SUBCASE("shape mismatches are contract errors") {
        CHECK_THROWS_AS(forward(params, random_tensor({3, 7, 5, 4}, rng), cov), ContractError);
        CHECK_THROWS_AS(forward(params, history, random_tensor({cfg.n_out, 7, 5, 9}, rng)), ContractError);
        CHECK_THROWS_AS(forward(params, history, random_tensor({cfg.n_out, 6, 5, 10}, rng)), ContractError);
    }
}

TEST_CASE("forward is translation-equivariant away from the border") {
    // Infer-mode batch norm is per-channel affine, so every op is a local
    // stencil: a crop's prediction matches the full grid wherever the
    // receptive field stays inside the crop.
    std::mt19937_64 rng(8);
    auto cfg = tiny_config(GridSpec{0, 0, 0.5, 0.5, 22, 22});
    auto params = build_model(cfg);
    fit_plausible_norm(params);
    params.encoder.norms[0].running_mean = random_tensor({4}, rng);
    params.encoder.norms[0].running_var = random_tensor({4}, rng, 0.5, 2.0);
    const auto [history, cov] = random_inputs(cfg, 22, 22, rng);
    const auto full = forward(params, history, cov);

    // A 3x3 stack of L layers over T steps widens the receptive field by
    // L + T - 1 cells; the decoder starts from the encoder state, so the two
    // add. The forecasts encoder is narrower than the decoder path.
    const std::size_t encoder_radius = cfg.encoder.size() + cfg.n_in - 1;
    const std::size_t radius = encoder_radius + cfg.decoder.size() + cfg.n_out - 1;
    const std::size_t y0 = 2, x0 = 1, h = 19, w = 20;
    auto crop_cfg = cfg;
    crop_cfg.grid.ny = h;
    crop_cfg.grid.nx = w;
    const auto part = forward(params, crop_cells(history, y0, x0, h, w), crop_cells(cov, y0, x0, h, w));
    REQUIRE(2 * radius < h);
    double worst = 0.0;
    for (std::size_t t = 0; t < cfg.n_out; ++t)
        for (std::size_t j = radius; j < h - radius; ++j)
            for (std::size_t i = radius; i < w - radius; ++i)
                for (std::size_t c = 0; c < kNumPollutants; ++c)
                    worst = std::max(worst, std::abs(part.at({t, j, i, c}) - full.at({t, y0 + j, x0 + i, c})));
    CHECK(worst < 1e-6);
    // Border cells do feel the zero padding.
    CHECK(std::abs(part.at({0, 0, 0, 0}) - full.at({0, y0, x0, 0})) > 0.0);
}

TEST_CASE("end-to-end gradient check") {
    const auto cases = run_gradcheck_suite(1e-4, 2019);
    REQUIRE(!cases.empty());
    bool saw_model = false;
    for (const auto& c : cases) {
        INFO(c.name << " rel error " << c.result.max_rel_error);
        CHECK(c.passed);
        CHECK(c.result.coords_checked > 0);
        saw_model = saw_model || c.name.rfind("model", 0) == 0;
    }
    CHECK(saw_model);
}

TEST_CASE("normalization fit") {
    const auto& f = fixture();
    const auto set = f.first(3);
    const auto n = fit_normalization(set, true);
    CHECK(n.fitted);
    // Oracle: direct mean over every target value of pollutant 0.
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto obs = set.get(i);
        const auto& t = *obs.target;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            sum += t[r * kNumPollutants];
            count += 1.0;
        }
    }
    CHECK(n.concentration_scale[0] == doctest::Approx(sum / count).epsilon(1e-12));
    for (double s : n.weather_std) CHECK(s > 0.0);
    const auto unscaled = fit_normalization(set, false);
    for (double s : unscaled.concentration_scale) CHECK(s == 1.0);
    CHECK_THROWS_AS(fit_normalization(ObservationSet(f.dataset.archive, {}, 2, 4), true), ConfigError);
}

TEST_CASE("training") {
    const auto& f = fixture();
    const auto set = f.first(5);
    auto cfg = tiny_config(f.synth.grid);

    SUBCASE("history length, finite losses, learning") {
        auto params = build_model(cfg);
        std::size_t calls = 0;
        TrainOptions opt;
        opt.eval = &set;
        opt.epochs = 6;
        opt.on_epoch = [&](std::size_t e, double loss, std::optional<double> eval) {
            CHECK(e == calls++);
            CHECK(std::isfinite(loss));
            CHECK(eval.has_value());
        };
        const auto h = train(params, set, opt);
        CHECK(h.train_loss.size() == 6);
        CHECK(h.eval_loss.size() == 6);
        CHECK(calls == 6);
        CHECK(h.steps == 6 * 2);  // 5 observations in batches of 3
        CHECK(params.norm.fitted);
        CHECK(h.train_loss.back() < h.train_loss.front());
    }

    SUBCASE("identical runs are bit-identical") {
        const auto dir = scratch("engine_det");
        auto a = build_model(cfg);
        auto b = build_model(cfg);
        const auto ha = train(a, set);
        const auto hb = train(b, set);
        CHECK(ha.train_loss == hb.train_loss);
        save_checkpoint(a, dir / "a.ckpt");
        save_checkpoint(b, dir / "b.ckpt");
        CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));

        auto c = build_model(cfg);
        c.config.seed = cfg.seed + 1;
        const auto hc = train(c, set);
        CHECK(hc.train_loss != ha.train_loss);
    }

    SUBCASE("failures") {
        auto params = build_model(cfg);
        CHECK_THROWS_AS(train(params, ObservationSet(f.dataset.archive, {}, 2, 4)), ConfigError);
        CHECK_THROWS_AS(train(params, set.with_history(1)), ConfigError);
        params.head_w[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(train(params, set), NumericalError);
    }
}

TEST_CASE("checkpoint") {
    const auto& f = fixture();
    const auto set = f.first(3);
    auto cfg = tiny_config(f.synth.grid);
    auto params = build_model(cfg);
    TrainOptions opt;
    opt.epochs = 1;
    train(params, set, opt);

    const auto dir = scratch("engine_ckpt");
    const auto path = dir / "model.ckpt";
    save_checkpoint(params, path);
    const auto back = load_checkpoint(path);
    CHECK(back.config.to_json() == params.config.to_json());
    CHECK(back.norm.concentration_scale == params.norm.concentration_scale);
    CHECK(back.norm.weather_std == params.norm.weather_std);
    const auto ta = params.trainable();
    const auto tb = back.trainable();
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(*ta[i] == *tb[i]);
    CHECK(back.encoder.norms[1].running_var == params.encoder.norms[1].running_var);
    const auto obs = set.get(0);
    CHECK(forward(back, obs.history, obs.covariates) == forward(params, obs.history, obs.covariates));

    const auto bytes = read_bytes(path);
    const auto write = [&](const std::filesystem::path& p, const std::string& b) {
        std::ofstream(p, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    write(dir / "short.ckpt", bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
    auto future = bytes;
    future[4] = static_cast<char>(kCheckpointVersion + 1);
    write(dir / "future.ckpt", future);
    CHECK_THROWS_AS(load_checkpoint(dir / "future.ckpt"), VersionError);
    auto magic = bytes;
    magic[0] = 'X';
    write(dir / "magic.ckpt", magic);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
}

TEST_CASE("predict") {
    const auto& f = fixture();
    auto cfg = tiny_config(f.synth.grid);
    auto params = build_model(cfg);
    fit_plausible_norm(params);

    const MeasurementStore measurements(f.data.readings);
    ForecastStore forecasts;
    for (const auto& r : f.data.weather) forecasts.add(r);
    for (const auto& r : f.data.aqpcm) forecasts.add(r);

    const auto t0 = f.dataset.train.at(2);
    const auto fc = predict(params, measurements, forecasts, t0);
    CHECK(fc.t0 == t0);
    CHECK(fc.grid == cfg.grid);
    REQUIRE(fc.valid_times.size() == cfg.n_out);
    CHECK(fc.valid_times.front() == t0 + kStep);
    CHECK(fc.valid_times.back() == t0 + kStep * static_cast<int>(cfg.n_out));
    CHECK(fc.values.shape() == Shape{cfg.n_out, cfg.grid.ny, cfg.grid.nx, kNumPollutants});
    for (double v : fc.values.values()) CHECK(v >= 0.0);
    CHECK(predict(params, measurements, forecasts, t0).values == fc.values);

    // Matches the model applied to the archive's assembled observation.
    const auto obs = ObservationSet(f.dataset.archive, {t0}, 2, 4).get(0);
    CHECK(max_abs_diff(forward(params, obs.history, obs.covariates), fc.values) < 1e-9);

    CHECK_THROWS_AS(predict(params, measurements, forecasts, f.synth.start - std::chrono::days{30}), DataError);
}
