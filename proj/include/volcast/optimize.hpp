#pragma once

#include <functional>
#include <vector>

namespace volcast::optimize {

using Objective = std::function<double(const std::vector<double>&)>;

struct MinimizeOptions {
    int max_iterations = 400;
    double gradient_tolerance = 1e-6;  // infinity norm
    int max_backtracks = 50;
};

struct MinimizeResult {
    std::vector<double> x;
    double f = 0.0;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
    std::vector<double> accepted_values;  // f after every accepted step, non-increasing
};

/// Central finite-difference gradient with a per-coordinate step scaled to
/// the coordinate magnitude. Non-finite objective values poison the result.
std::vector<double> numeric_gradient(const Objective& f, const std::vector<double>& x);

/// Dense BFGS with Armijo backtracking line search. The objective may return
/// +infinity (treated as an infeasible point); such trial points are simply
/// rejected by the line search.
MinimizeResult minimize_bfgs(const Objective& f, std::vector<double> x0, const MinimizeOptions& opts = {});

}  // namespace volcast::optimize
