#pragma once

#include <random>

#include "aqcast/tensor.hpp"

namespace aqcast::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

// Values with |v| in [0.1, 1]: keeps relu kinks out of finite-difference reach.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace aqcast::testing
