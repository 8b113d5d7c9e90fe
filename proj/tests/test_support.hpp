#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

// Shared helpers for the test suites: independent statistics utilities kept
// deliberately separate from the library implementation they check.

namespace testsupport {

inline double ks_statistic(std::vector<double> sample,
                           const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max(d, std::abs(f - (i + 1) / n));
        d = std::max(d, std::abs(f - i / n));
    }
    return d;
}

/// Critical value of the one-sample KS statistic at level alpha.
inline double ks_critical(double alpha, std::size_t n) {
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i;
        else ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                                 static_cast<double>(j) / b.size()));
    }
    return d;
}

inline double ks_two_sample_critical(double alpha, std::size_t n, std::size_t m) {
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) *
           std::sqrt((n + m) / static_cast<double>(n * m));
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double d : v) s += d;
    return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double d : v) s += (d - m) * (d - m);
    return std::sqrt(s / (v.size() - 1.0));
}

/// Adaptive Simpson quadrature, an oracle independent of the library grids.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int depth = 30) {
    std::function<double(double, double, double, double, double, double, double, int)> rec =
        [&](double x0, double x2, double f0, double f1, double f2, double whole, double eps,
            int d) -> double {
        const double x1 = 0.5 * (x0 + x2);
        const double lm = 0.5 * (x0 + x1), rm = 0.5 * (x1 + x2);
        const double flm = f(lm), frm = f(rm);
        const double left = (x1 - x0) / 6.0 * (f0 + 4.0 * flm + f1);
        const double right = (x2 - x1) / 6.0 * (f1 + 4.0 * frm + f2);
        if (d <= 0 || std::abs(left + right - whole) < 15.0 * eps)
            return left + right + (left + right - whole) / 15.0;
        return rec(x0, x1, f0, flm, f1, left, eps / 2.0, d - 1) +
               rec(x1, x2, f1, frm, f2, right, eps / 2.0, d - 1);
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return rec(a, b, fa, fm, fb, whole, tol, depth);
}

}  // namespace testsupport
