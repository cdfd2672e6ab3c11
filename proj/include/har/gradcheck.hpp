#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "har/tensor.hpp"

namespace har {

/// Outcome of finite-difference checking one operation across several seeds.
struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool ok = false;
    std::string detail;  // failure context, e.g. the offending parameter
};

/// Relative error used throughout: |a - n| / max(1e-8, |a| + |n|).
double grad_rel_err(double analytic, double numeric);

/// A checkable problem: `inputs` are the tensors to perturb and `forward`
/// rebuilds the graph from those same tensors on every call.
struct GradCheckProblem {
    std::vector<TensorPtr> inputs;
    std::vector<std::string> input_names;
    std::function<TensorPtr()> forward;  // returns the output tensor (any shape)
};

/// Central differences with step 1e-5 against a random-weighted scalarization
/// of the output. Returns the max relative error over every element of every
/// input; non-finite values are reported as failures naming the input.
GradCheckResult check_gradients(const std::string& op_name, GradCheckProblem problem, Rng& rng,
                                double tolerance = 1e-4);

/// The standard suite behind `har gradcheck` and the acceptance gate: every
/// differentiable op plus the full three-level attention pipelines, each run
/// over `seeds_per_op` random instances.
std::vector<GradCheckResult> run_gradcheck_suite(std::size_t seeds_per_op = 20,
                                                 std::uint64_t master_seed = 0xC0FFEE,
                                                 double tolerance = 1e-4);

}  // namespace har
