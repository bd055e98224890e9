#include "aqcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace aqcast {

namespace {

double evaluate(const ScalarGraph& f, std::span<const Tensor> params) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.constant(p));
    return f(tape, vars).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarGraph& f, std::span<const Tensor> params,
                                  const GradCheckOptions& options) {
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const auto& p : params) vars.push_back(tape.variable(p));
        auto loss = f(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }

    GradCheckResult result;
    std::mt19937_64 rng(options.seed);
    std::vector<Tensor> probe(params.begin(), params.end());
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto n = params[t].size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (n > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
        }
        for (auto i : coords) {
            const double original = params[t][i];
            probe[t][i] = original + options.eps;
            const double up = evaluate(f, probe);
            probe[t][i] = original - options.eps;
            const double down = evaluate(f, probe);
            probe[t][i] = original;

            const double numeric = (up - down) / (2.0 * options.eps);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            ++result.coords_checked;
            if (err > result.max_rel_error || result.coords_checked == 1) {
                result.max_rel_error = err;
                result.worst_tensor = t;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace aqcast
