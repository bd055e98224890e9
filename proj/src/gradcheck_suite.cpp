#include <array>
#include <functional>
#include <random>

#include "aqcast/engine.hpp"
#include "aqcast/gradcheck.hpp"
#include "aqcast/nn.hpp"

namespace aqcast {

namespace {

using ad::Tape;
using ad::Var;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// |v| in [0.1, 1], so relu kinks stay out of finite-difference reach.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

// Scalar probe sum(out * R) with a fixed random R, so every output element
// carries a distinct weight.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ad::sum(ad::mul(out, tape.constant(uniform(out.shape(), rng, -1.0, 1.0))));
}

struct Suite {
    double tolerance;
    std::mt19937_64 rng;
    std::vector<GradCheckCase> cases;

    void run(std::string name, const ScalarGraph& f, std::vector<Tensor> params) {
        GradCheckOptions opt;
        opt.seed = rng();
        auto r = finite_diff_check(f, params, opt);
        cases.push_back({std::move(name), r, r.max_rel_error <= tolerance});
    }

    // Unary op on one input, probed.
    void unary(std::string name, std::function<Var(Var)> op, Tensor x) {
        const auto seed = rng();
        run(std::move(name), [op, seed](Tape& t, std::span<const Var> p) { return probe(t, op(p[0]), seed); },
            {std::move(x)});
    }

    void binary(std::string name, std::function<Var(Var, Var)> op, Tensor x, Tensor y) {
        const auto seed = rng();
        run(std::move(name),
            [op, seed](Tape& t, std::span<const Var> p) { return probe(t, op(p[0], p[1]), seed); },
            {std::move(x), std::move(y)});
    }
};

void primitive_cases(Suite& s) {
    auto& rng = s.rng;
    s.run("conv2d_same",
          [seed = rng()](Tape& t, std::span<const Var> p) { return probe(t, ad::conv2d_same(p[0], p[1], p[2]), seed); },
          {uniform({2, 5, 4, 3}, rng, -1, 1), uniform({3, 3, 3, 2}, rng, -1, 1), uniform({2}, rng, -1, 1)});
    s.binary("conv2d_same k5 no bias", [](Var x, Var w) { return ad::conv2d_same(x, w); },
             uniform({4, 6, 2}, rng, -1, 1), uniform({5, 5, 2, 3}, rng, -1, 1));
    s.binary("add", ad::add, uniform({3, 4, 2}, rng, -1, 1), uniform({3, 4, 2}, rng, -1, 1));
    s.binary("add broadcast", ad::add, uniform({3, 4, 2}, rng, -1, 1), uniform({2}, rng, -1, 1));
    s.binary("sub", ad::sub, uniform({2, 3, 3}, rng, -1, 1), uniform({2, 3, 3}, rng, -1, 1));
    s.binary("sub broadcast", ad::sub, uniform({2, 3, 3}, rng, -1, 1), uniform({3}, rng, -1, 1));
    s.binary("mul", ad::mul, uniform({3, 2, 4}, rng, -1, 1), uniform({3, 2, 4}, rng, -1, 1));
    s.binary("mul broadcast", ad::mul, uniform({3, 2, 4}, rng, -1, 1), uniform({4}, rng, -1, 1));
    s.unary("scale", [](Var x) { return ad::scale(x, -2.5); }, uniform({4, 3}, rng, -1, 1));
    s.unary("sigmoid", ad::sigmoid, uniform({3, 4, 2}, rng, -4, 4));
    s.unary("tanh", ad::tanh, uniform({3, 4, 2}, rng, -3, 3));
    s.unary("relu", ad::relu, away_from_zero({3, 4, 2}, rng));
    s.unary("log1p", ad::log1p, uniform({3, 4, 2}, rng, -0.5, 3));
    s.unary("square", ad::square, uniform({3, 4, 2}, rng, -2, 2));
    s.run("sum", [](Tape&, std::span<const Var> p) { return ad::sum(ad::square(p[0])); },
          {uniform({3, 4}, rng, -1, 1)});
    s.run("mean", [](Tape&, std::span<const Var> p) { return ad::mean(ad::square(p[0])); },
          {uniform({3, 4}, rng, -1, 1)});
    s.unary("slice_channels", [](Var x) { return ad::slice_channels(x, 1, 3); }, uniform({2, 3, 5}, rng, -1, 1));
    s.binary("concat_channels", ad::concat_channels, uniform({2, 3, 2}, rng, -1, 1), uniform({2, 3, 3}, rng, -1, 1));
    s.unary("select", [](Var x) { return ad::select(x, 2); }, uniform({4, 3, 2}, rng, -1, 1));
    s.binary("stack",
             [](Var a, Var b) {
                 const std::vector<Var> items{a, b, a};
                 return ad::stack(items);
             },
             uniform({3, 2}, rng, -1, 1), uniform({3, 2}, rng, -1, 1));
}

void block_cases(Suite& s) {
    auto& rng = s.rng;
    s.unary("lstm_cell_state no c_prev", [](Var g) { return nn::lstm_cell_state(g, nullptr); },
            uniform({3, 3, 8}, rng, -2, 2));
    s.binary("lstm_cell_state", [](Var g, Var c) { return nn::lstm_cell_state(g, &c); },
             uniform({3, 3, 8}, rng, -2, 2), uniform({3, 3, 2}, rng, -2, 2));
    s.binary("lstm_hidden_state", nn::lstm_hidden_state, uniform({3, 3, 8}, rng, -2, 2),
             uniform({3, 3, 2}, rng, -2, 2));

    const auto cell = nn::ConvLstmParams::glorot(3, 2, 3, rng);
    s.run("convlstm_cell_step",
          [seed = rng()](Tape& t, std::span<const Var> p) {
              nn::ConvLstmVars v{p[3], p[4], p[5], 3};
              auto st = nn::convlstm_cell_step(p[0], p[1], p[2], v);
              return ad::add(probe(t, st.h, seed), probe(t, st.c, seed + 1));
          },
          {uniform({4, 4, 2}, rng, -1, 1), uniform({4, 4, 3}, rng, -0.9, 0.9), uniform({4, 4, 3}, rng, -1, 1),
           cell.w_x, cell.w_h, cell.bias});
    s.run("convlstm_block sequence",
          [seed = rng()](Tape& t, std::span<const Var> p) {
              nn::ConvLstmVars v{p[1], p[2], p[3], 3};
              return probe(t, nn::convlstm_block_forward(p[0], v, true), seed);
          },
          {uniform({3, 4, 4, 2}, rng, -1, 1), cell.w_x, cell.w_h, cell.bias});

    auto bn = nn::BatchNormParams::identity(3);
    s.run("batch_norm train",
          [seed = rng(), bn](Tape& t, std::span<const Var> p) mutable {
              return probe(t, nn::batch_norm(p[0], {p[1], p[2]}, bn, nn::NormMode::train), seed);
          },
          {uniform({2, 3, 4, 3}, rng, -2, 2), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng, -1, 1)});
    auto stats = nn::BatchNormParams::identity(3);
    stats.running_mean = uniform({3}, rng, -1, 1);
    stats.running_var = uniform({3}, rng, 0.5, 2);
    s.run("batch_norm infer",
          [seed = rng(), stats](Tape& t, std::span<const Var> p) mutable {
              return probe(t, nn::batch_norm(p[0], {p[1], p[2]}, stats, nn::NormMode::infer), seed);
          },
          {uniform({2, 3, 4, 3}, rng, -2, 2), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng, -1, 1)});

    // Bias keeps every pre-activation clear of the relu kink.
    s.run("forecast_head",
          [seed = rng()](Tape& t, std::span<const Var> p) { return probe(t, nn::forecast_head(p[0], p[1], p[2]), seed); },
          {uniform({3, 3, 5}, rng, -0.2, 0.2), uniform({1, 1, 5, 4}, rng, -0.1, 0.1), Tensor({4}, 1.0)});
    s.binary("msle", [](Var p, Var t) { return nn::msle(p, t); }, uniform({3, 4}, rng, 0.0, 5.0), uniform({3, 4}, rng, 0.0, 5.0));
}

ModelConfig gradcheck_model_config() {
    ModelConfig cfg;
    cfg.grid = GridSpec{0.0, 0.0, 0.5, 0.5, 5, 5};
    cfg.n_in = 2;
    cfg.n_out = 3;
    cfg.encoder = {{4, 3}, {3, 3}};
    cfg.f_encoder = cfg.encoder;
    cfg.decoder = cfg.encoder;
    cfg.batch_size = 2;
    cfg.subgrid_height = 5;
    cfg.subgrid_width = 5;
    return cfg;
}

GradCheckCase gradcheck_model(double tolerance, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto cfg = gradcheck_model_config();
    cfg.seed = rng();
    auto model = build_model(cfg);
    model.norm.concentration_scale = {20.0, 50.0, 10.0, 15.0};
    model.norm.weather_mean = {280, 60, 0, 0, 700, 0.2};
    model.norm.weather_std = {5, 15, 3, 3, 400, 0.5};
    model.norm.fitted = true;

    const std::size_t B = 2;
    Tensor history = uniform({cfg.n_in, B, 5, 5, kNumPollutants}, rng, 5.0, 60.0);
    Tensor cov({cfg.n_out, B, 5, 5, kNumCovariates});
    const std::array<double, kNumCovariates> lo{270, 30, -8, -8, 200, 0, 5, 20, 2, 5};
    const std::array<double, kNumCovariates> hi{290, 90, 8, 8, 1500, 2, 60, 90, 30, 50};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < cov.rows(); ++r)
        for (std::size_t c = 0; c < kNumCovariates; ++c) cov[r * kNumCovariates + c] = lo[c] + (hi[c] - lo[c]) * u(rng);
    Tensor target = uniform({cfg.n_out, B, 5, 5, kNumPollutants}, rng, 2.0, 80.0);

    std::vector<Tensor> params;
    for (const auto* t : model.trainable()) params.push_back(*t);
    const ScalarGraph f = [&](Tape& tape, std::span<const Var> vars) {
        auto pred = forward_graph(tape, model, vars, history, cov, nn::NormMode::train);
        return nn::msle(pred, tape.constant(target));
    };
    // Central-difference truncation error grows with curvature, which the
    // normalized deep graph has plenty of; at eps=1e-4 it alone reaches ~1e-4.
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.seed = rng();
    opt.max_coords_per_tensor = 24;
    auto r = finite_diff_check(f, params, opt);
    return {"model forward + msle (5x5, N_in=2, N_out=3, hidden 4/3)", r, r.max_rel_error <= tolerance};
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(double tolerance, std::uint64_t seed) {
    Suite s{tolerance, std::mt19937_64(seed), {}};
    primitive_cases(s);
    block_cases(s);
    s.cases.push_back(gradcheck_model(tolerance, s.rng()));
    return s.cases;
}

}  // namespace aqcast
