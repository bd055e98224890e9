#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aqcast/autodiff.hpp"

namespace aqcast {

// Builds a scalar loss on `tape` from one Var per parameter tensor.
using ScalarGraph = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckOptions {
    double eps = 1e-4;
    // Coordinates probed per tensor; tensors at or below this size are probed fully.
    std::size_t max_coords_per_tensor = 64;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares backward() gradients with central differences
/// (f(p+eps) - f(p-eps)) / (2 eps). The relative error of one coordinate is
/// |a - n| / max(|a|, |n|, 1e-8); the worst coordinate is reported.
GradCheckResult finite_diff_check(const ScalarGraph& f, std::span<const Tensor> params,
                                  const GradCheckOptions& options = {});

struct GradCheckCase {
    std::string name;
    GradCheckResult result;
    bool passed = false;
};

/// Every primitive op plus the ConvLSTM, batch-norm and end-to-end model
/// graphs, each at `tolerance`. Used by the `gradcheck` command.
std::vector<GradCheckCase> run_gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 2019);

}  // namespace aqcast
