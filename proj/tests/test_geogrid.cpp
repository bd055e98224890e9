#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "aqcast/error.hpp"
#include "aqcast/geogrid.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aqcast;

namespace {

constexpr double kKmPerDegree = 6371.0 * std::numbers::pi / 180.0;  // 111.19492664...

std::vector<StationValue> random_stations(std::mt19937_64& rng, std::size_t n, const GridSpec& g) {
    std::uniform_real_distribution<double> lat(g.lat0 - 1.0, g.lat0 + g.dlat * static_cast<double>(g.ny) + 1.0);
    std::uniform_real_distribution<double> lon(g.lon0 - 1.0, g.lon0 + g.dlon * static_cast<double>(g.nx) + 1.0);
    std::uniform_real_distribution<double> val(0.0, 120.0);
    std::vector<StationValue> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back({{lat(rng), lon(rng)}, val(rng)});
    return out;
}

GridSpec random_grid(std::mt19937_64& rng, std::size_t max_side) {
    std::uniform_real_distribution<double> lat0(30.0, 55.0), lon0(-10.0, 20.0);
    GridSpec g;
    g.lat0 = lat0(rng);
    g.lon0 = lon0(rng);
    g.dlat = 0.5;
    g.dlon = 0.5;
    g.ny = testing::pick(rng, 1, max_side);
    g.nx = testing::pick(rng, 1, max_side);
    return g;
}

}  // namespace

TEST_CASE("distance_km") {
    CHECK(distance_km({45, 3}, {45, 3}) == 0.0);
    CHECK(distance_km({45, 3}, {46, 3}) == doctest::Approx(111.1949).epsilon(1e-6));
    CHECK(distance_km({60, 3}, {60, 4}) == doctest::Approx(55.597).epsilon(1e-4));
    CHECK(distance_km({60, 3}, {60, 4}) == doctest::Approx(kKmPerDegree * 0.5).epsilon(1e-12));
    CHECK(distance_km({10, 20}, {12, 23}) == distance_km({12, 23}, {10, 20}));
    CHECK(distance_km({0, 179.5}, {0, -179.5}) == doctest::Approx(kKmPerDegree).epsilon(1e-12));
}

TEST_CASE("exp_kernel") {
    const LatLon a{45, 3};
    CHECK(exp_kernel(a, a, 100) == 1.0);
    CHECK(exp_kernel(a, {45 + 100 / kKmPerDegree, 3}, 100) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(exp_kernel(a, {45 + 230.2585 / kKmPerDegree, 3}, 100) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK_THROWS_AS(exp_kernel(a, a, 0.0), ConfigError);
    CHECK_THROWS_AS(exp_kernel(a, a, -5.0), ConfigError);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const LatLon p{45 + u(rng), 3 + u(rng)};
        const LatLon q{45 + u(rng), 3 + u(rng)};
        CHECK(exp_kernel(p, q, 100) == exp_kernel(q, p, 100));
        // Strictly decreasing along a ray.
        const LatLon near{45.0 + 0.1 * std::abs(u(rng)) + 0.01, 3};
        const LatLon far{near.lat + 0.05, 3};
        CHECK(exp_kernel({45, 3}, far, 100) < exp_kernel({45, 3}, near, 100));
    }
}

TEST_CASE("project_stations examples") {
    GridSpec g{44.0, 2.0, 0.5, 0.5, 6, 7};
    SUBCASE("single station fills the grid") {
        std::vector<StationValue> s{{{45.1, 3.3}, 10.0}};
        auto f = project_stations(s, g);
        for (double v : f.values.values()) CHECK(v == doctest::Approx(10.0).epsilon(1e-15));
    }
    SUBCASE("equidistant stations average") {
        GridSpec one{45.0, 3.0, 0.5, 0.5, 1, 1};
        std::vector<StationValue> s{{{45.5, 3.0}, 0.0}, {{44.5, 3.0}, 20.0}};
        CHECK(project_stations(s, one).values[0] == doctest::Approx(10.0).epsilon(1e-9));
    }
    SUBCASE("stations at 0 and 100 km") {
        GridSpec one{45.0, 3.0, 0.5, 0.5, 1, 1};
        std::vector<StationValue> s{{{45.0, 3.0}, 0.0}, {{45.0 + 100 / kKmPerDegree, 3.0}, 10.0}};
        const double expected = 10 * std::exp(-1.0) / (1 + std::exp(-1.0));
        CHECK(project_stations(s, one, 100).values[0] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(expected == doctest::Approx(2.689).epsilon(1e-3));
    }
    SUBCASE("errors") {
        std::vector<StationValue> none;
        CHECK_THROWS_AS(project_stations(none, g), NoDataError);
        std::vector<StationValue> s{{{45.1, 3.3}, 10.0}};
        CHECK_THROWS_AS(project_stations(s, g, 0.0), ConfigError);
    }
}

TEST_CASE("project_stations matches the brute-force oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 60; ++trial) {
        auto g = random_grid(rng, 15);
        auto stations = random_stations(rng, testing::pick(rng, 1, 50), g);
        std::vector<oracle::Station> os;
        for (const auto& s : stations) os.push_back({s.location.lat, s.location.lon, s.value});
        const auto expected = oracle::project(os, g.lat0, g.lon0, g.dlat, g.dlon, static_cast<int>(g.ny),
                                              static_cast<int>(g.nx), 100.0);
        const auto fast = project_stations(stations, g, 100.0);
        const auto ref = reference::project_stations(stations, g, 100.0);
        for (std::size_t c = 0; c < expected.size(); ++c) {
            CHECK(std::abs(fast.values[c] - expected[c]) <= 1e-12);
            CHECK(std::abs(ref.values[c] - expected[c]) <= 1e-12);
        }
    }
}

TEST_CASE("project_stations properties") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        auto g = random_grid(rng, 8);
        auto stations = random_stations(rng, testing::pick(rng, 1, 30), g);
        const auto base = project_stations(stations, g).values;

        auto [lo, hi] = std::minmax_element(stations.begin(), stations.end(),
                                            [](auto& a, auto& b) { return a.value < b.value; });
        for (double v : base.values()) {
            CHECK(v >= lo->value - 1e-9);
            CHECK(v <= hi->value + 1e-9);
        }

        auto shuffled = stations;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(max_abs_diff(project_stations(shuffled, g).values, base) < 1e-12);

        auto shifted = stations;
        for (auto& s : shifted) s.value += 7.5;
        auto scaled = stations;
        for (auto& s : scaled) s.value *= 0.4;
        const auto fs = project_stations(shifted, g).values;
        const auto fm = project_stations(scaled, g).values;
        for (std::size_t c = 0; c < base.size(); ++c) {
            CHECK(fs[c] == doctest::Approx(base[c] + 7.5).epsilon(1e-12));
            CHECK(fm[c] == doctest::Approx(base[c] * 0.4).epsilon(1e-12));
        }
    }
}

TEST_CASE("bilinear_regrid") {
    GridSpec src{40.0, 0.0, 1.0, 1.0, 5, 6};
    SUBCASE("identity when grids coincide") {
        std::mt19937_64 rng(4);
        GridField f(src, testing::random_tensor({5, 6}, rng));
        auto r = bilinear_regrid(f, src);
        CHECK(r.field.values == f.values);
        CHECK_FALSE(r.coverage_warning());
    }
    SUBCASE("centre of a cell square") {
        GridSpec sq{0.0, 0.0, 1.0, 1.0, 2, 2};
        GridField f(sq, Tensor({2, 2}, std::vector<double>{0, 0, 0, 4}));
        GridSpec mid{0.5, 0.5, 1.0, 1.0, 1, 1};
        CHECK(bilinear_regrid(f, mid).field.values[0] == 1.0);
    }
    SUBCASE("linear fields are reproduced and affine maps commute") {
        Tensor v({5, 6, 2});
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t i = 0; i < 6; ++i) {
                const auto c = src.center(j, i);
                v.at({j, i, 0}) = 3.0 * c.lat - 2.0 * c.lon + 1.0;
                v.at({j, i, 1}) = -0.5 * c.lat + 0.25 * c.lon;
            }
        GridField f(src, v);
        GridSpec dst{40.3, 0.7, 0.37, 0.41, 9, 11};
        auto r = bilinear_regrid(f, dst);
        CHECK_FALSE(r.coverage_warning());
        for (std::size_t j = 0; j < dst.ny; ++j)
            for (std::size_t i = 0; i < dst.nx; ++i) {
                const auto c = dst.center(j, i);
                CHECK(std::abs(r.field.values.at({j, i, 0}) - (3.0 * c.lat - 2.0 * c.lon + 1.0)) < 1e-12);
                CHECK(std::abs(r.field.values.at({j, i, 1}) - (-0.5 * c.lat + 0.25 * c.lon)) < 1e-12);
            }
        std::mt19937_64 rng(5);
        GridField noisy(src, testing::random_tensor({5, 6, 2}, rng));
        auto base = bilinear_regrid(noisy, dst).field.values;
        GridField affine = noisy;
        for (auto& x : affine.values.values()) x = 2.5 * x - 4.0;
        auto mapped = bilinear_regrid(affine, dst).field.values;
        for (std::size_t k = 0; k < base.size(); ++k) CHECK(std::abs(mapped[k] - (2.5 * base[k] - 4.0)) < 1e-12);
    }
    SUBCASE("outside coverage clamps to the border and warns") {
        std::mt19937_64 rng(6);
        GridField f(src, testing::random_tensor({5, 6}, rng));
        GridSpec dst{39.0, -2.0, 1.0, 1.0, 2, 2};
        auto r = bilinear_regrid(f, dst);
        CHECK(r.clamped_points == 4);
        CHECK(r.field.values.at({0, 0}) == f.values.at({0, 0}));
        CHECK(r.field.values.at({1, 1}) == f.values.at({0, 0}));
    }
}
