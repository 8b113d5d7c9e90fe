#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "msdelay/core.hpp"

namespace msdelay {

struct SimplexResult {
    std::vector<double> argmax;
    double value = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

using Objective = std::function<double(const std::vector<double>&)>;

namespace detail {

inline double simplex_diameter(const std::vector<std::vector<double>>& x) {
    double d = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
        for (std::size_t c = 0; c < x[0].size(); ++c)
            d = std::max(d, std::abs(x[i][c] - x[0][c]));
    return d;
}

}  // namespace detail

/// Maximizes `objective` by Nelder-Mead simplex search. Deterministic given
/// the start point and config. Restarts rebuild a fresh simplex around the
/// incumbent, which recovers from degenerate (collapsed) simplices and keeps
/// the best value seen. Non-finite objective values are treated as -inf.
inline SimplexResult nelder_mead_maximize(const Objective& objective,
                                          std::vector<double> start,
                                          const OptimizerConfig& opt) {
    opt.validate();
    const int n = static_cast<int>(start.size());
    if (n == 0) throw ConfigError("empty start point");
    constexpr double kAlpha = 1.0, kGamma = 2.0, kRho = 0.5, kSigma = 0.5;

    SimplexResult result;
    int evals = 0;
    auto f = [&](const std::vector<double>& p) {
        ++evals;
        double v = objective(p);
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    };

    double f0 = f(start);
    if (!std::isfinite(f0))
        throw NumericalError("objective is not finite at the starting point");
    std::vector<double> best = start;
    double best_val = f0;

    int iters_left = opt.max_iterations;
    bool converged = false;

    for (int attempt = 0; attempt <= opt.restarts && iters_left > 0; ++attempt) {
        // fresh simplex around the incumbent
        std::vector<std::vector<double>> x(n + 1, best);
        std::vector<double> fx(n + 1);
        double step = opt.initial_step / (attempt + 1.0);
        for (int i = 0; i < n; ++i) x[i + 1][i] += step;
        for (int i = 0; i <= n; ++i) fx[i] = (i == 0) ? best_val : f(x[i]);
        converged = false;

        while (iters_left > 0) {
            --iters_left;
            // order: fx[order[0]] best (largest), fx[order[n]] worst
            std::vector<int> order(n + 1);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) { return fx[a] > fx[b]; });
            const int ib = order[0], iw = order[n], is = order[n - 1];

            double spread = fx[ib] - fx[iw];
            if (detail::simplex_diameter(x) < opt.simplex_tolerance &&
                (std::isfinite(spread) ? spread : 0.0) < opt.simplex_tolerance) {
                converged = true;
                break;
            }

            std::vector<double> centroid(n, 0.0);
            for (int i = 0; i <= n; ++i) {
                if (i == iw) continue;
                for (int c = 0; c < n; ++c) centroid[c] += x[i][c];
            }
            for (int c = 0; c < n; ++c) centroid[c] /= n;

            auto move = [&](double scale) {
                std::vector<double> p(n);
                for (int c = 0; c < n; ++c) p[c] = centroid[c] + scale * (centroid[c] - x[iw][c]);
                return p;
            };

            std::vector<double> xr = move(kAlpha);
            double fr = f(xr);
            if (fr > fx[ib]) {
                std::vector<double> xe = move(kGamma);
                double fe = f(xe);
                if (fe > fr) { x[iw] = std::move(xe); fx[iw] = fe; }
                else { x[iw] = std::move(xr); fx[iw] = fr; }
            } else if (fr > fx[is]) {
                x[iw] = std::move(xr);
                fx[iw] = fr;
            } else {
                const bool outside = fr > fx[iw];
                std::vector<double> xc(n);
                const auto& base = outside ? xr : x[iw];
                for (int c = 0; c < n; ++c) xc[c] = centroid[c] + kRho * (base[c] - centroid[c]);
                double fc = f(xc);
                if (fc > (outside ? fr : fx[iw])) {
                    x[iw] = std::move(xc);
                    fx[iw] = fc;
                } else {
                    for (int i = 0; i <= n; ++i) {
                        if (i == ib) continue;
                        for (int c = 0; c < n; ++c)
                            x[i][c] = x[ib][c] + kSigma * (x[i][c] - x[ib][c]);
                        fx[i] = f(x[i]);
                    }
                }
            }
            if (fx[iw] > best_val) { best_val = fx[iw]; best = x[iw]; }
        }
        for (int i = 0; i <= n; ++i)
            if (fx[i] > best_val) { best_val = fx[i]; best = x[i]; }
    }

    result.argmax = std::move(best);
    result.value = best_val;
    result.iterations = opt.max_iterations - iters_left;
    result.evaluations = evals;
    result.converged = converged;
    return result;
}

}  // namespace msdelay
