#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/rng.hpp"

namespace msdelay {

struct EnvelopeViolation : NumericalError {
    explicit EnvelopeViolation(const std::string& msg) : NumericalError(msg) {}
};

/// Piecewise-constant dominating envelope on (a, b].
struct Envelope {
    std::vector<double> breaks;  // a = breaks[0] < ... < breaks[m] = b
    std::vector<double> levels;  // levels[i] on (breaks[i], breaks[i+1]]

    static Envelope constant(double a, double b, double level) {
        return {{a, b}, {level}};
    }

    /// Constant bound 1.5 x the max of `intensity` on a grid of `points` nodes.
    static Envelope from_grid_max(const std::function<double(double)>& intensity, double a,
                                  double b, int points = 64, double inflate = 1.5) {
        double mx = 0.0;
        for (int i = 0; i <= points; ++i) {
            const double t = a + (b - a) * i / points;
            mx = std::max(mx, intensity(t));
        }
        return constant(a, b, std::max(mx * inflate, 1e-12));
    }

    /// Per-piece grid-max bounds; far cheaper than a constant bound when the
    /// intensity decays over a long window.
    static Envelope piecewise_grid_max(const std::function<double(double)>& intensity, double a,
                                       double b, int pieces = 16, int points_per_piece = 8,
                                       double inflate = 1.5) {
        Envelope env;
        env.breaks.push_back(a);
        for (int p = 0; p < pieces; ++p) {
            const double lo = a + (b - a) * p / pieces;
            const double hi = a + (b - a) * (p + 1) / pieces;
            double mx = 0.0;
            for (int i = 0; i <= points_per_piece; ++i)
                mx = std::max(mx, intensity(lo + (hi - lo) * i / points_per_piece));
            env.breaks.push_back(hi);
            env.levels.push_back(std::max(mx * inflate, 1e-12));
        }
        return env;
    }
};

/// First accepted point of an inhomogeneous process with the given intensity
/// on (window_start, window_end], by thinning a dominating piecewise-constant
/// envelope. Returns nullopt when the window is exhausted. An intensity sample
/// above its envelope level indicates a construction bug and throws.
inline std::optional<double> lewis_thinning(const std::function<double(double)>& intensity,
                                            const Envelope& envelope, double window_start,
                                            double window_end, Rng& rng) {
    if (window_end <= window_start) return std::nullopt;
    double t = window_start;
    std::size_t piece = 0;
    while (t < window_end) {
        while (piece + 1 < envelope.breaks.size() && envelope.breaks[piece + 1] <= t) ++piece;
        if (piece >= envelope.levels.size()) return std::nullopt;
        const double level = envelope.levels[piece];
        const double piece_end = std::min(envelope.breaks[piece + 1], window_end);
        if (level <= 0.0) {
            t = piece_end;
            continue;
        }
        const double candidate = t + rng.exponential(level);
        if (candidate > piece_end) {
            t = piece_end;
            continue;
        }
        t = candidate;
        const double rate = intensity(t);
        if (rate > level * (1.0 + 1e-9))
            throw EnvelopeViolation("intensity exceeds its envelope at t = " + std::to_string(t));
        if (rng.uniform01() < rate / level) return t;
    }
    return std::nullopt;
}

}  // namespace msdelay
