#include "volcast/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace volcast::optimize {

namespace {

constexpr double kFdStep = 6.0e-6;  // ~cbrt(machine eps), relative

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

std::vector<double> numeric_gradient(const Objective& f, const std::vector<double>& x) {
    std::vector<double> g(x.size());
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = kFdStep * std::max(1.0, std::abs(x[i]));
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

MinimizeResult minimize_bfgs(const Objective& f, std::vector<double> x0, const MinimizeOptions& opts) {
    const std::size_t n = x0.size();
    MinimizeResult res;
    res.x = std::move(x0);
    res.f = f(res.x);
    res.evaluations = 1;
    res.accepted_values.push_back(res.f);
    if (!std::isfinite(res.f)) return res;  // infeasible start

    // inverse Hessian approximation, identity to begin with
    std::vector<double> H(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;

    std::vector<double> g = numeric_gradient(f, res.x);
    res.evaluations += static_cast<int>(2 * n);

    bool reset_used = false;
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        res.iterations = iter;
        if (inf_norm(g) < opts.gradient_tolerance) {
            res.converged = true;
            return res;
        }

        // direction d = -H g
        std::vector<double> d(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc -= H[i * n + j] * g[j];
            d[i] = acc;
        }
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += d[i] * g[i];
        if (!(slope < 0.0)) {
            // not a descent direction; restart from steepest descent once
            if (reset_used) return res;
            reset_used = true;
            std::fill(H.begin(), H.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
            slope = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                d[i] = -g[i];
                slope += d[i] * g[i];
            }
            if (!(slope < 0.0)) return res;
        }

        // Armijo backtracking
        constexpr double c1 = 1e-4;
        double step = 1.0;
        std::vector<double> x_new(n);
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int bt = 0; bt < opts.max_backtracks; ++bt) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + step * d[i];
            f_new = f(x_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && f_new <= res.f + c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (reset_used) return res;  // stuck
            reset_used = true;
            std::fill(H.begin(), H.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
            continue;
        }

        std::vector<double> g_new = numeric_gradient(f, x_new);
        res.evaluations += static_cast<int>(2 * n);

        // BFGS update of the inverse Hessian
        std::vector<double> s(n), y(n);
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - res.x[i];
            y[i] = g_new[i] - g[i];
            sy += s[i] * y[i];
        }
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            // H = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            std::vector<double> Hy(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += H[i * n + j] * y[j];
                Hy[i] = acc;
            }
            double yHy = 0.0;
            for (std::size_t i = 0; i < n; ++i) yHy += y[i] * Hy[i];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    H[i * n + j] += (sy + yHy) * rho * rho * s[i] * s[j] - rho * (Hy[i] * s[j] + s[i] * Hy[j]);
                }
            }
        }

        res.x = x_new;
        res.f = f_new;
        res.accepted_values.push_back(res.f);
        g = std::move(g_new);
    }
    res.converged = inf_norm(g) < opts.gradient_tolerance;
    return res;
}

}  // namespace volcast::optimize
