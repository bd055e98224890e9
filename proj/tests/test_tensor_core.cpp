#include <doctest.h>

#include <cmath>
#include <numbers>

#include "aqcast/autodiff.hpp"
#include "aqcast/error.hpp"
#include "aqcast/gradcheck.hpp"
#include "aqcast/kernels.hpp"
#include "test_util.hpp"

using namespace aqcast;
using aqcast::testing::away_from_zero;
using aqcast::testing::pick;
using aqcast::testing::random_tensor;

namespace {

Tensor conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    ad::Tape tape;
    return ad::conv2d_same(tape.constant(x), tape.constant(w), tape.constant(b)).value();
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), ContractError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), ContractError);
    Tensor t({2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.channels() == 4);
    CHECK(t.rows() == 6);
    t.at({1, 2, 3}) = 7.0;
    CHECK(t[23] == 7.0);
    CHECK(t.slab(1).shape() == Shape{3, 4});
    CHECK(t.slab(1)[11] == 7.0);
}

TEST_CASE("conv2d_same: 1x1 identity kernel leaves input unchanged") {
    std::mt19937_64 rng(1);
    auto x = random_tensor({4, 5, 1}, rng);
    Tensor w({1, 1, 1, 1}, 1.0);
    CHECK(conv(x, w, Tensor({1})) == x);
}

TEST_CASE("conv2d_same: all-ones 3x3 on all-ones field counts in-bounds taps") {
    Tensor x({5, 5, 1}, 1.0);
    Tensor w({3, 3, 1, 1}, 1.0);
    auto out = conv(x, w, Tensor({1}));
    // Oracle: number of window cells inside the 5x5 field.
    for (int y = 0; y < 5; ++y)
        for (int x0 = 0; x0 < 5; ++x0) {
            int inside = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    inside += (y + dy >= 0 && y + dy < 5 && x0 + dx >= 0 && x0 + dx < 5) ? 1 : 0;
            CHECK(out.at({std::size_t(y), std::size_t(x0), 0}) == inside);
        }
    CHECK(out.at({2, 2, 0}) == 9);
    CHECK(out.at({0, 0, 0}) == 4);
    CHECK(out.at({0, 2, 0}) == 6);
}

TEST_CASE("conv2d_same: zero kernel gives constant bias") {
    std::mt19937_64 rng(2);
    auto x = random_tensor({3, 4, 2}, rng);
    Tensor w({3, 3, 2, 3});
    Tensor b({3}, std::vector<double>{0.5, -1.0, 2.0});
    auto out = conv(x, w, b);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == b[i % 3]);
}

TEST_CASE("conv2d_same: errors") {
    ad::Tape tape;
    auto x = tape.constant(Tensor({4, 4, 2}));
    CHECK_THROWS_AS(ad::conv2d_same(x, tape.constant(Tensor({2, 2, 2, 1}))), ConfigError);
    CHECK_THROWS_AS(ad::conv2d_same(x, tape.constant(Tensor({3, 3, 3, 1}))), ContractError);
    CHECK_THROWS_AS(ad::conv2d_same(x, tape.constant(Tensor({3, 3, 2, 1})), tape.constant(Tensor({2}))),
                    ContractError);
}

TEST_CASE("parallel conv kernels match the serial reference") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        ConvGeometry g;
        g.batch = pick(rng, 1, 3);
        g.height = pick(rng, 1, 7);
        g.width = pick(rng, 1, 7);
        g.c_in = pick(rng, 1, 5);
        g.c_out = pick(rng, 1, 6);
        g.kernel = 2 * pick(rng, 0, 2) + 1;
        auto in = random_tensor({g.input_size()}, rng);
        auto w = random_tensor({g.weight_size()}, rng);
        auto b = random_tensor({g.c_out}, rng);
        auto go = random_tensor({g.output_size()}, rng);

        Tensor out_fast({g.output_size()}), out_ref({g.output_size()});
        kernels::conv2d_same_forward(g, in.values(), w.values(), b.values(), out_fast.values());
        reference::conv2d_same_forward(g, in.values(), w.values(), b.values(), out_ref.values());
        CHECK(max_abs_diff(out_fast, out_ref) < 1e-12);

        Tensor gi_fast({g.input_size()}), gi_ref({g.input_size()});
        kernels::conv2d_same_backward_input(g, go.values(), w.values(), gi_fast.values());
        reference::conv2d_same_backward_input(g, go.values(), w.values(), gi_ref.values());
        CHECK(max_abs_diff(gi_fast, gi_ref) < 1e-12);

        Tensor gw_fast({g.weight_size()}), gw_ref({g.weight_size()});
        Tensor gb_fast({g.c_out}), gb_ref({g.c_out});
        kernels::conv2d_same_backward_params(g, in.values(), go.values(), gw_fast.values(), gb_fast.values());
        reference::conv2d_same_backward_params(g, in.values(), go.values(), gw_ref.values(), gb_ref.values());
        CHECK(max_abs_diff(gw_fast, gw_ref) < 1e-12);
        CHECK(max_abs_diff(gb_fast, gb_ref) < 1e-12);
    }
}

TEST_CASE("conv2d_same is linear in its input") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = pick(rng, 1, 6), w = pick(rng, 1, 6), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
        const auto k = 2 * pick(rng, 0, 2) + 1;
        auto x1 = random_tensor({h, w, ci}, rng);
        auto x2 = random_tensor({h, w, ci}, rng);
        auto kern = random_tensor({k, k, ci, co}, rng);
        const double a = 1.7, b = -0.3;
        Tensor mix = Tensor::like(x1);
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + b * x2[i];
        Tensor zero_bias({co});
        auto lhs = conv(mix, kern, zero_bias);
        auto c1 = conv(x1, kern, zero_bias);
        auto c2 = conv(x2, kern, zero_bias);
        for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * c1[i] + b * c2[i])) < 1e-12);
        CHECK(lhs.shape() == Shape{h, w, co});
    }
}

TEST_CASE("elementwise values") {
    ad::Tape tape;
    CHECK(ad::relu(tape.constant(Tensor::scalar(-3.5))).value().item() == 0.0);
    CHECK(ad::sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);
    CHECK(ad::log1p(tape.constant(Tensor::scalar(std::numbers::e - 1.0))).value().item() ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(ad::log1p(tape.constant(Tensor::scalar(-1.0))), DomainError);
    CHECK_THROWS_AS(ad::log1p(tape.constant(Tensor::scalar(-2.0))), DomainError);
}

TEST_CASE("binary ops broadcast a trailing channel vector only") {
    ad::Tape tape;
    auto x = tape.constant(Tensor({2, 3}, 1.0));
    auto c = tape.constant(Tensor({3}, std::vector<double>{1, 2, 3}));
    auto y = ad::mul(x, c).value();
    CHECK(y[4] == 2.0);
    CHECK_THROWS_AS(ad::add(x, tape.constant(Tensor({2}))), ContractError);
}

TEST_CASE("backward: simple closed forms") {
    SUBCASE("sum gives ones") {
        ad::Tape tape;
        auto w = tape.variable(Tensor({2, 3}, 0.7));
        tape.backward(ad::sum(w));
        auto g = tape.grad(w);
        for (double v : g.values()) CHECK(v == 1.0);
    }
    SUBCASE("sum of squares at 3 is 6") {
        ad::Tape tape;
        auto w = tape.variable(Tensor({1}, 3.0));
        tape.backward(ad::sum(ad::mul(w, w)));
        CHECK(tape.grad(w).item() == 6.0);
    }
    SUBCASE("non-contributing nodes have zero adjoint") {
        ad::Tape tape;
        auto w = tape.variable(Tensor({2}, 1.0));
        auto unused = tape.variable(Tensor({3}, 2.0));
        auto side = ad::square(unused);
        tape.backward(ad::sum(w));
        CHECK(tape.grad(unused) == Tensor({3}));
        CHECK(tape.grad(side) == Tensor({3}));
    }
    SUBCASE("non-scalar loss is rejected") {
        ad::Tape tape;
        auto w = tape.variable(Tensor({2}, 1.0));
        CHECK_THROWS_AS(tape.backward(w), ContractError);
    }
}

TEST_CASE("finite_diff_check on closed-form functions") {
    std::mt19937_64 rng(5);
    std::vector<Tensor> params{random_tensor({3, 4}, rng), random_tensor({5}, rng)};
    SUBCASE("sum of squares is exact up to roundoff") {
        auto f = [](ad::Tape&, std::span<const ad::Var> p) {
            return ad::add(ad::sum(ad::square(p[0])), ad::sum(ad::square(p[1])));
        };
        GradCheckOptions opt;
        opt.eps = 1e-5;
        CHECK(finite_diff_check(f, params, opt).max_rel_error < 1e-7);
    }
    SUBCASE("constant function") {
        auto f = [](ad::Tape& tape, std::span<const ad::Var>) { return tape.constant(Tensor::scalar(3.0)); };
        auto r = finite_diff_check(f, params);
        CHECK(r.max_rel_error == 0.0);
        CHECK(r.analytic == 0.0);
        CHECK(r.numeric == 0.0);
    }
}

TEST_CASE("every primitive matches central differences on random shapes") {
    std::mt19937_64 rng(6);
    GradCheckOptions opt;
    opt.eps = 1e-4;
    for (int trial = 0; trial < 6; ++trial) {
        const auto h = pick(rng, 1, 6), w = pick(rng, 1, 6), c = pick(rng, 1, 4);
        const Shape s{h, w, c};
        // Random weighting makes every output coordinate matter in the loss.
        const auto weights = random_tensor(s, rng);
        auto weighted = [weights](ad::Tape& tape, ad::Var y) {
            auto wv = tape.constant(weights.shape() == y.shape() ? weights : Tensor(y.shape(), 0.5));
            return ad::sum(ad::mul(y, wv));
        };
        auto check = [&](const char* name, const ScalarGraph& f, std::vector<Tensor> params) {
            auto r = finite_diff_check(f, params, opt);
            INFO(name << " shape " << shape_string(s) << " err " << r.max_rel_error);
            CHECK(r.max_rel_error < 1e-4);
        };
        using Span = std::span<const ad::Var>;
        check("add", [&](ad::Tape& t, Span p) { return weighted(t, ad::add(p[0], p[1])); },
              {random_tensor(s, rng), random_tensor(s, rng)});
        check("add-bcast", [&](ad::Tape& t, Span p) { return weighted(t, ad::add(p[0], p[1])); },
              {random_tensor(s, rng), random_tensor({c}, rng)});
        check("sub", [&](ad::Tape& t, Span p) { return weighted(t, ad::sub(p[0], p[1])); },
              {random_tensor(s, rng), random_tensor(s, rng)});
        check("mul", [&](ad::Tape& t, Span p) { return weighted(t, ad::mul(p[0], p[1])); },
              {random_tensor(s, rng), random_tensor(s, rng)});
        check("mul-bcast", [&](ad::Tape& t, Span p) { return weighted(t, ad::mul(p[0], p[1])); },
              {random_tensor(s, rng), random_tensor({c}, rng)});
        check("scale", [&](ad::Tape& t, Span p) { return weighted(t, ad::scale(p[0], -2.5)); },
              {random_tensor(s, rng)});
        check("sigmoid", [&](ad::Tape& t, Span p) { return weighted(t, ad::sigmoid(p[0])); },
              {random_tensor(s, rng, -3, 3)});
        check("tanh", [&](ad::Tape& t, Span p) { return weighted(t, ad::tanh(p[0])); },
              {random_tensor(s, rng, -3, 3)});
        check("relu", [&](ad::Tape& t, Span p) { return weighted(t, ad::relu(p[0])); }, {away_from_zero(s, rng)});
        check("log1p", [&](ad::Tape& t, Span p) { return weighted(t, ad::log1p(p[0])); },
              {random_tensor(s, rng, -0.5, 3.0)});
        check("square", [&](ad::Tape& t, Span p) { return weighted(t, ad::square(p[0])); },
              {random_tensor(s, rng)});
        check("mean", [&](ad::Tape& t, Span p) { return ad::mean(ad::mul(p[0], p[0])); },
              {random_tensor(s, rng)});
        const auto cut = pick(rng, 0, c - 1);
        check("slice",
              [&](ad::Tape& t, Span p) { return ad::sum(ad::square(ad::slice_channels(p[0], cut, c - cut))); },
              {random_tensor(s, rng)});
        check("concat",
              [&](ad::Tape& t, Span p) { return ad::sum(ad::square(ad::concat_channels(p[0], p[1]))); },
              {random_tensor(s, rng), random_tensor({h, w, 2}, rng)});
        check("select-stack",
              [&](ad::Tape& t, Span p) {
                  std::vector<ad::Var> items{ad::select(p[0], 1), ad::select(p[0], 0), p[1]};
                  return weighted(t, ad::square(ad::stack(items)));
              },
              {random_tensor({2, w, c}, rng), random_tensor({w, c}, rng)});
        const auto k = 2 * pick(rng, 0, 2) + 1;
        const auto co = pick(rng, 1, 4);
        check("conv2d_same",
              [&](ad::Tape& t, Span p) { return weighted(t, ad::conv2d_same(p[0], p[1], p[2])); },
              {random_tensor(s, rng), random_tensor({k, k, c, co}, rng), random_tensor({co}, rng)});
    }
}

TEST_CASE("op output shapes follow their contracts") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t_n = pick(rng, 1, 3), h = pick(rng, 1, 6), w = pick(rng, 1, 6), c = pick(rng, 1, 4);
        ad::Tape tape;
        auto x = tape.constant(random_tensor({t_n, h, w, c}, rng));
        const auto co = pick(rng, 1, 5);
        const auto k = 2 * pick(rng, 0, 2) + 1;
        auto y = ad::conv2d_same(x, tape.constant(random_tensor({k, k, c, co}, rng)));
        CHECK(y.shape() == Shape{t_n, h, w, co});
        CHECK(ad::select(y, t_n - 1).shape() == Shape{h, w, co});
        CHECK(ad::concat_channels(x, y).shape() == Shape{t_n, h, w, c + co});
        CHECK(ad::sum(y).shape() == Shape{1});
        CHECK(ad::sigmoid(y).value().all_finite());
    }
}
