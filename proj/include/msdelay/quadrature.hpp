#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "msdelay/core.hpp"

namespace msdelay {

/// Composite Simpson over [a, b] with n (even) subintervals.
template <class F>
double simpson(F&& f, double a, double b, int n) {
    if (b <= a) return 0.0;
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double sum = f(a) + f(b);
    for (int i = 1; i < n; ++i) sum += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

/// Uniform grid over [a, b] with n subintervals (n + 1 nodes).
struct UniformGrid {
    double a = 0.0, b = 0.0, h = 0.0;
    int n = 0;

    UniformGrid() = default;
    UniformGrid(double a_, double b_, int n_) : a(a_), b(b_), h(n_ > 0 ? (b_ - a_) / n_ : 0.0), n(n_) {}

    double node(int i) const { return (i == n) ? b : a + i * h; }
    int nodes() const { return n + 1; }
};

/// Cumulative integral of nodal values on a uniform grid, 4th order.
/// Even nodes accumulate pairwise Simpson panels; odd nodes add the half-panel
/// integral of the interpolating quadratic, h/12 * (5 f_{i-1} + 8 f_i - f_{i+1}).
inline std::vector<double> cumulative_simpson(const std::vector<double>& f, double h) {
    const int m = static_cast<int>(f.size());
    std::vector<double> out(m, 0.0);
    if (m < 2) return out;
    for (int i = 1; i < m; ++i) {
        if (i % 2 == 0) {
            out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
        } else if (i + 1 < m) {
            out[i] = out[i - 1] + h / 12.0 * (5.0 * f[i - 1] + 8.0 * f[i] - f[i + 1]);
        } else {
            // trailing odd node: quadratic through the last three values
            out[i] = out[i - 1] + h / 12.0 * (-f[i - 2] + 8.0 * f[i - 1] + 5.0 * f[i]);
        }
    }
    return out;
}

/// Integral of nodal values over the whole grid (composite Simpson weights,
/// trailing 3/8-style correction when the node count is even).
inline double integrate_nodes(const std::vector<double>& f, double h) {
    auto cum = cumulative_simpson(f, h);
    return cum.empty() ? 0.0 : cum.back();
}

}  // namespace msdelay
