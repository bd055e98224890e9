#include <doctest.h>

#include <cmath>
#include <numbers>

#include "aqcast/error.hpp"
#include "aqcast/gradcheck.hpp"
#include "aqcast/nn.hpp"
#include "test_util.hpp"

using namespace aqcast;
using aqcast::testing::pick;
using aqcast::testing::random_tensor;

namespace {

nn::ConvLstmParams random_cell(std::size_t k, std::size_t c_in, std::size_t h, std::mt19937_64& rng,
                               double amp = 0.5) {
    auto p = nn::ConvLstmParams::zeros(k, c_in, h);
    p.w_x = random_tensor(p.w_x.shape(), rng, -amp, amp);
    p.w_h = random_tensor(p.w_h.shape(), rng, -amp, amp);
    p.bias = random_tensor(p.bias.shape(), rng, -amp, amp);
    return p;
}

// The cell update written with generic elementwise ops only.
nn::CellState composite_cell(ad::Var x, ad::Var h_prev, ad::Var c_prev, const nn::ConvLstmVars& p) {
    auto gates = ad::add(ad::conv2d_same(x, p.w_x, p.bias), ad::conv2d_same(h_prev, p.w_h));
    const auto h = p.hidden;
    auto i = ad::sigmoid(ad::slice_channels(gates, 0, h));
    auto f = ad::sigmoid(ad::slice_channels(gates, h, h));
    auto g = ad::tanh(ad::slice_channels(gates, 2 * h, h));
    auto o = ad::sigmoid(ad::slice_channels(gates, 3 * h, h));
    auto c = ad::add(ad::mul(f, c_prev), ad::mul(i, g));
    return {ad::mul(o, ad::tanh(c)), c};
}

}  // namespace

TEST_CASE("convlstm cell: zero parameters") {
    auto p = nn::ConvLstmParams::zeros(3, 2, 3);
    std::mt19937_64 rng(1);
    ad::Tape tape;
    auto vars = nn::bind(tape, p, false);
    auto x = tape.constant(random_tensor({4, 5, 2}, rng));
    auto zero = tape.constant(Tensor({4, 5, 3}));

    SUBCASE("zero state stays zero") {
        auto s = nn::convlstm_cell_step(x, zero, zero, vars);
        CHECK(s.h.value() == Tensor({4, 5, 3}));
        CHECK(s.c.value() == Tensor({4, 5, 3}));
    }
    SUBCASE("cell state halves, hidden is 0.5 tanh(0.5 C)") {
        auto c0 = random_tensor({4, 5, 3}, rng, -4, 4);
        auto s = nn::convlstm_cell_step(x, zero, tape.constant(c0), vars);
        for (std::size_t i = 0; i < c0.size(); ++i) {
            CHECK(s.c.value()[i] == doctest::Approx(0.5 * c0[i]).epsilon(1e-15));
            CHECK(s.h.value()[i] == doctest::Approx(0.5 * std::tanh(0.5 * c0[i])).epsilon(1e-15));
        }
    }
}

// Gate preactivations are kept below the point where sigmoid/tanh round to 1.
TEST_CASE("convlstm cell: hidden output stays in (-1, 1)") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto k = 2 * pick(rng, 0, 2) + 1, ci = pick(rng, 1, 3), h = pick(rng, 1, 4);
        auto p = random_cell(k, ci, h, rng, 1.0);
        ad::Tape tape;
        auto vars = nn::bind(tape, p, false);
        auto x = tape.constant(random_tensor({5, 4, ci}, rng, -3, 3));
        auto h0 = tape.constant(random_tensor({5, 4, h}, rng, -1, 1));
        auto c0 = tape.constant(random_tensor({5, 4, h}, rng, -8, 8));
        auto s = nn::convlstm_cell_step(x, h0, c0, vars);
        for (double v : s.h.value().values()) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("convlstm cell: fused update equals the composite of elementwise ops") {
    std::mt19937_64 rng(3);
    auto p = random_cell(3, 2, 3, rng);
    ad::Tape tape;
    auto vars = nn::bind(tape, p, false);
    auto x = tape.constant(random_tensor({4, 4, 2}, rng));
    auto h0 = tape.constant(random_tensor({4, 4, 3}, rng));
    auto c0 = tape.constant(random_tensor({4, 4, 3}, rng));
    auto fused = nn::convlstm_cell_step(x, h0, c0, vars);
    auto ref = composite_cell(x, h0, c0, vars);
    CHECK(max_abs_diff(fused.h.value(), ref.h.value()) < 1e-14);
    CHECK(max_abs_diff(fused.c.value(), ref.c.value()) < 1e-14);
}

TEST_CASE("convlstm cell: shape contract") {
    auto p = nn::ConvLstmParams::zeros(3, 2, 3);
    ad::Tape tape;
    auto vars = nn::bind(tape, p, false);
    auto state = tape.constant(Tensor({4, 4, 3}));
    CHECK_THROWS_AS(nn::convlstm_cell_step(tape.constant(Tensor({4, 4, 5})), state, state, vars), ContractError);
    CHECK_THROWS_AS(nn::convlstm_cell_step(tape.constant(Tensor({4, 4, 2})), tape.constant(Tensor({4, 3, 3})),
                                           state, vars),
                    ContractError);
    CHECK_THROWS_AS(nn::ConvLstmParams::zeros(2, 2, 3), ConfigError);
}

TEST_CASE("convlstm block") {
    std::mt19937_64 rng(4);
    auto p = random_cell(3, 2, 3, rng);
    SUBCASE("T=1 equals one step from zero state") {
        ad::Tape tape;
        auto vars = nn::bind(tape, p, false);
        auto x = random_tensor({1, 4, 5, 2}, rng);
        auto out = nn::convlstm_block_forward(tape.constant(x), vars, false);
        auto zero = tape.constant(Tensor({4, 5, 3}));
        auto step = nn::convlstm_cell_step(tape.constant(x.slab(0)), zero, zero, vars);
        CHECK(max_abs_diff(out.value(), step.h.value()) < 1e-15);
    }
    SUBCASE("last element of the sequence output equals the final state") {
        ad::Tape tape;
        auto vars = nn::bind(tape, p, false);
        auto seq = tape.constant(random_tensor({5, 4, 5, 2}, rng));
        auto all = nn::convlstm_block_forward(seq, vars, true);
        auto last = nn::convlstm_block_forward(seq, vars, false);
        CHECK(all.shape() == Shape{5, 4, 5, 3});
        CHECK(all.value().slab(4) == last.value());
    }
    SUBCASE("zero weights give zero outputs") {
        ad::Tape tape;
        auto vars = nn::bind(tape, nn::ConvLstmParams::zeros(3, 2, 3), false);
        auto out = nn::convlstm_block_forward(tape.constant(random_tensor({3, 4, 4, 2}, rng)), vars, true);
        for (double v : out.value().values()) CHECK(v == 0.0);
    }
    SUBCASE("batched leading axis runs items independently") {
        ad::Tape tape;
        auto vars = nn::bind(tape, p, false);
        auto a = random_tensor({3, 4, 4, 2}, rng);
        auto b = random_tensor({3, 4, 4, 2}, rng);
        Tensor batch({3, 2, 4, 4, 2});
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t i = 0; i < 32; ++i) {
                batch[(t * 2 + 0) * 32 + i] = a[t * 32 + i];
                batch[(t * 2 + 1) * 32 + i] = b[t * 32 + i];
            }
        auto joint = nn::convlstm_block_forward(tape.constant(batch), vars, false).value();
        auto only_b = nn::convlstm_block_forward(tape.constant(b), vars, false).value();
        CHECK(max_abs_diff(joint.slab(1), only_b) < 1e-15);
    }
}

TEST_CASE("convlstm parameter count") {
    std::mt19937_64 rng(5);
    CHECK(nn::convlstm_parameter_count(3, 4, 64) == 156928);
    for (int trial = 0; trial < 10; ++trial) {
        const auto k = 2 * pick(rng, 0, 2) + 1, ci = pick(rng, 1, 12), h = pick(rng, 1, 16);
        auto p = nn::ConvLstmParams::glorot(k, ci, h, rng);
        CHECK(p.parameter_count() == 4 * (k * k * (ci + h) * h + h));
    }
    auto p = nn::ConvLstmParams::glorot(3, 2, 4, rng);
    for (std::size_t j = 0; j < 16; ++j) CHECK(p.bias[j] == (j >= 4 && j < 8 ? 1.0 : 0.0));
    const double limit = std::sqrt(6.0 / (9.0 * 2 + 9.0 * 16));
    for (double v : p.w_x.values()) CHECK(std::abs(v) <= limit);
}

TEST_CASE("batch norm") {
    std::mt19937_64 rng(6);
    SUBCASE("constant input normalizes to zero") {
        auto p = nn::BatchNormParams::identity(3);
        ad::Tape tape;
        auto v = nn::bind(tape, p, false);
        auto out = nn::batch_norm(tape.constant(Tensor({4, 4, 3}, 7.0)), v, p, nn::NormMode::train);
        for (double x : out.value().values()) CHECK(x == 0.0);
    }
    SUBCASE("beta shifts the per-channel mean") {
        auto p = nn::BatchNormParams::identity(3);
        p.beta.fill(5.0);
        ad::Tape tape;
        auto v = nn::bind(tape, p, false);
        auto out = nn::batch_norm(tape.constant(random_tensor({2, 5, 4, 3}, rng, -3, 9)), v, p, nn::NormMode::train)
                       .value();
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0;
            for (std::size_t r = 0; r < out.rows(); ++r) m += out[r * 3 + c];
            CHECK(std::abs(m / static_cast<double>(out.rows()) - 5.0) < 1e-9);
        }
    }
    SUBCASE("train mode output has mean beta and variance near gamma^2") {
        auto p = nn::BatchNormParams::identity(2);
        p.gamma = Tensor({2}, std::vector<double>{0.5, 3.0});
        p.beta = Tensor({2}, std::vector<double>{-1.0, 2.0});
        ad::Tape tape;
        auto v = nn::bind(tape, p, false);
        auto out = nn::batch_norm(tape.constant(random_tensor({50, 2}, rng, 0, 40)), v, p, nn::NormMode::train)
                       .value();
        for (std::size_t c = 0; c < 2; ++c) {
            double m = 0, s = 0;
            for (std::size_t r = 0; r < 50; ++r) m += out[r * 2 + c];
            m /= 50;
            for (std::size_t r = 0; r < 50; ++r) s += (out[r * 2 + c] - m) * (out[r * 2 + c] - m);
            s /= 50;
            CHECK(m == doctest::Approx(p.beta[c]).epsilon(1e-9));
            CHECK(s == doctest::Approx(p.gamma[c] * p.gamma[c]).epsilon(1e-3));
        }
    }
    SUBCASE("infer mode with unit running statistics is nearly the identity") {
        auto p = nn::BatchNormParams::identity(3);
        ad::Tape tape;
        auto v = nn::bind(tape, p, false);
        auto x = random_tensor({4, 4, 3}, rng);
        auto out = nn::batch_norm(tape.constant(x), v, p, nn::NormMode::infer).value();
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-3)));
    }
    SUBCASE("running statistics follow the moving average and stay nonnegative") {
        auto p = nn::BatchNormParams::identity(1);
        ad::Tape tape;
        auto v = nn::bind(tape, p, false);
        Tensor x({4, 1}, std::vector<double>{1, 2, 3, 6});
        nn::batch_norm(tape.constant(x), v, p, nn::NormMode::train);
        CHECK(p.running_mean[0] == doctest::Approx(0.99 * 0 + 0.01 * 3.0));
        CHECK(p.running_var[0] == doctest::Approx(0.99 * 1 + 0.01 * 3.5));
        CHECK(p.running_var[0] >= 0.0);
    }
}

TEST_CASE("forecast head") {
    std::mt19937_64 rng(7);
    SUBCASE("negative preactivations give zeros") {
        ad::Tape tape;
        auto f = tape.constant(random_tensor({3, 3, 2}, rng, 0, 1));
        auto k = tape.constant(Tensor({1, 1, 2, 4}, 1.0));
        auto b = tape.constant(Tensor({4}, -10.0));
        for (double v : nn::forecast_head(f, k, b).value().values()) CHECK(v == 0.0);
    }
    SUBCASE("identity kernels pass nonnegative features") {
        ad::Tape tape;
        auto x = random_tensor({3, 3, 4}, rng, 0, 5);
        Tensor k({1, 1, 4, 4});
        for (std::size_t c = 0; c < 4; ++c) k.at({0, 0, c, c}) = 1.0;
        auto out = nn::forecast_head(tape.constant(x), tape.constant(k), tape.constant(Tensor({4}))).value();
        CHECK(out == x);
    }
    SUBCASE("each output cell depends only on its own features") {
        auto x = random_tensor({5, 5, 3}, rng);
        auto k = random_tensor({1, 1, 3, 4}, rng);
        auto b = random_tensor({4}, rng, 0.5, 1.0);
        auto run = [&](const Tensor& feat) {
            ad::Tape tape;
            return nn::forecast_head(tape.constant(feat), tape.constant(k), tape.constant(b)).value();
        };
        auto base = run(x);
        auto probe = x;
        for (std::size_t c = 0; c < 3; ++c) probe.at({1, 3, c}) += 10.0;
        auto moved = run(probe);
        for (std::size_t y = 0; y < 5; ++y)
            for (std::size_t xx = 0; xx < 5; ++xx)
                if (y != 1 || xx != 3)
                    for (std::size_t o = 0; o < 4; ++o) CHECK(moved.at({y, xx, o}) == base.at({y, xx, o}));
    }
    SUBCASE("rejects non-1x1 kernels") {
        ad::Tape tape;
        CHECK_THROWS_AS(nn::forecast_head(tape.constant(Tensor({3, 3, 2})), tape.constant(Tensor({3, 3, 2, 4})),
                                          tape.constant(Tensor({4}))),
                        ContractError);
    }
}

TEST_CASE("msle") {
    const double e = std::numbers::e;
    CHECK(nn::msle(Tensor({3}, 2.0), Tensor({3}, 2.0)) == 0.0);
    CHECK(nn::msle(Tensor({1}, e - 1), Tensor({1}, 0.0)) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(nn::msle(Tensor({1}, 0.0), Tensor({1}, e * e - 1)) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK_THROWS_AS(nn::msle(Tensor({1}, -1.0), Tensor({1}, 0.0)), DomainError);
    CHECK_THROWS_AS(nn::msle(Tensor({2}), Tensor({3})), ContractError);

    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_tensor({4, 3}, rng, 0, 100);
        auto b = random_tensor({4, 3}, rng, 0, 100);
        const double ab = nn::msle(a, b);
        CHECK(ab > 0.0);
        CHECK(ab == nn::msle(b, a));
        ad::Tape tape;
        CHECK(nn::msle(tape.constant(a), tape.constant(b)).value().item() == doctest::Approx(ab).epsilon(1e-14));
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient from a fresh state leaves params unchanged") {
        Tensor p({3}, std::vector<double>{1, -2, 3});
        std::vector<Tensor*> ps{&p};
        auto st = nn::AdamState::for_params(ps);
        std::vector<Tensor> g{Tensor({3})};
        nn::adam_step(ps, g, st);
        CHECK(p == Tensor({3}, std::vector<double>{1, -2, 3}));
        CHECK(st.t == 1);
    }
    SUBCASE("first step moves by lr against the gradient sign") {
        Tensor p({1}, 0.0);
        std::vector<Tensor*> ps{&p};
        auto st = nn::AdamState::for_params(ps, 0.001);
        std::vector<Tensor> g{Tensor({1}, 1.0)};
        nn::adam_step(ps, g, st);
        // m_hat = v_hat = 1 after bias correction.
        CHECK(p[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
    }
    SUBCASE("repeated positive gradients keep decreasing the parameter") {
        Tensor p({1}, 0.5);
        std::vector<Tensor*> ps{&p};
        auto st = nn::AdamState::for_params(ps);
        std::vector<Tensor> g{Tensor({1}, 0.3)};
        nn::adam_step(ps, g, st);
        const double after_one = p[0];
        nn::adam_step(ps, g, st);
        CHECK(after_one < 0.5);
        CHECK(p[0] < after_one);
        CHECK(st.t == 2);
        CHECK(st.v[0][0] >= 0.0);
    }
}

TEST_CASE("gradient checks through the blocks") {
    std::mt19937_64 rng(9);
    GradCheckOptions opt;
    opt.eps = 1e-4;
    using Span = std::span<const ad::Var>;

    SUBCASE("one ConvLSTM step") {
        auto p = random_cell(3, 2, 3, rng);
        auto x = random_tensor({4, 5, 2}, rng);
        auto h0 = random_tensor({4, 5, 3}, rng);
        auto c0 = random_tensor({4, 5, 3}, rng);
        auto weights = random_tensor({4, 5, 3}, rng);
        auto f = [&](ad::Tape& tape, Span v) {
            nn::ConvLstmVars vars{v[0], v[1], v[2], 3};
            auto s = nn::convlstm_cell_step(v[3], v[4], v[5], vars);
            auto w = tape.constant(weights);
            return ad::add(ad::sum(ad::mul(s.h, w)), ad::sum(ad::mul(s.c, w)));
        };
        auto r = finite_diff_check(f, std::vector<Tensor>{p.w_x, p.w_h, p.bias, x, h0, c0}, opt);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("block -> batch norm -> head -> msle") {
        auto p = random_cell(3, 2, 3, rng);
        auto bn = nn::BatchNormParams::identity(3);
        auto seq = random_tensor({3, 4, 4, 2}, rng);
        auto target = random_tensor({3, 4, 4, 2}, rng, 0.5, 3.0);
        auto f = [&](ad::Tape& tape, Span v) {
            nn::ConvLstmVars vars{v[0], v[1], v[2], 3};
            auto stats = bn;
            auto hs = nn::convlstm_block_forward(tape.constant(seq), vars, true);
            auto normed = nn::batch_norm(hs, {v[3], v[4]}, stats, nn::NormMode::train);
            auto pred = nn::forecast_head(normed, v[5], v[6]);
            return nn::msle(pred, tape.constant(target));
        };
        std::vector<Tensor> params{p.w_x,
                                   p.w_h,
                                   p.bias,
                                   random_tensor({3}, rng, 0.5, 1.5),
                                   random_tensor({3}, rng),
                                   random_tensor({1, 1, 3, 2}, rng, -0.3, 0.3),
                                   Tensor({2}, 2.0)};
        auto r = finite_diff_check(f, params, opt);
        INFO("err " << r.max_rel_error << " at tensor " << r.worst_tensor);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("batch norm in infer mode") {
        auto bn = nn::BatchNormParams::identity(3);
        bn.running_mean = random_tensor({3}, rng);
        bn.running_var = random_tensor({3}, rng, 0.5, 2.0);
        auto weights = random_tensor({5, 3}, rng);
        auto f = [&](ad::Tape& tape, Span v) {
            auto stats = bn;
            return ad::sum(ad::mul(nn::batch_norm(v[0], {v[1], v[2]}, stats, nn::NormMode::infer),
                                   tape.constant(weights)));
        };
        auto r = finite_diff_check(
            f, std::vector<Tensor>{random_tensor({5, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
            opt);
        CHECK(r.max_rel_error < 1e-4);
    }
}
