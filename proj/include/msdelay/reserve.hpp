#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/likelihood.hpp"
#include "msdelay/parallel.hpp"
#include "msdelay/quadrature.hpp"

// State-occupation probabilities of the fitted event model and the
// expected-duration estimand: V_a(t; x) = E int_0^t 1{in target state} ds.
// Hierarchical (acyclic) models with duration-dependent hazards are solved by
// propagating entry densities state by state on a uniform grid; cyclic models
// are supported only when every hazard runs on calendar time (linear forward
// equations, classic fourth-order Runge-Kutta).

namespace msdelay {

struct OccupancyOptions {
    double step = 1.0 / 512.0;  // grid resolution in years
    /// Calendar-time hazard inputs are clamped at this time when set (used to
    /// avoid overextrapolating fitted calendar effects).
    std::optional<double> freeze_calendar_at;
};

struct OccupancyCurves {
    UniformGrid grid;
    std::vector<std::vector<double>> occupancy;  // [state - 1][node]
    double max_conservation_error = 0.0;

    std::vector<double> at(double t) const {
        std::vector<double> out(occupancy.size(), 0.0);
        const double pos = (t - grid.a) / grid.h;
        const int i = std::min(std::max(0, static_cast<int>(pos)), grid.n - 1);
        const double w = std::min(std::max(pos - i, 0.0), 1.0);
        for (std::size_t s = 0; s < occupancy.size(); ++s)
            out[s] = (1.0 - w) * occupancy[s][i] + w * occupancy[s][i + 1];
        return out;
    }
};

namespace detail_reserve {

/// Nodal weights reproducing cumulative_simpson's prefix value at index n.
inline void prefix_weights(int n, double h, std::vector<double>& w) {
    w.assign(n + 1, 0.0);
    if (n == 0) return;
    if (n == 1) {
        w[0] = w[1] = 0.5 * h;  // single interval: trapezoid
        return;
    }
    const int even = n % 2 == 0 ? n : n - 1;
    for (int i = 0; i <= even; i += 2) {
        if (i + 2 <= even) {
            w[i] += h / 3.0;
            w[i + 1] += 4.0 * h / 3.0;
            w[i + 2] += h / 3.0;
        }
    }
    if (n % 2 == 1) {
        w[n - 2] += -h / 12.0;
        w[n - 1] += 8.0 * h / 12.0;
        w[n] += 5.0 * h / 12.0;
    }
}

enum class StateClock { Calendar, Duration, Mixed };

inline StateClock state_clock(const EventModel& model, int state) {
    bool cal = false, dur = false;
    for (int k : model.state_space.exits_from(state)) {
        switch (model.hazards.at({state, k}).family().clock) {
            case HazardClock::Calendar: cal = true; break;
            case HazardClock::StateDuration: dur = true; break;
        }
    }
    if (cal && dur) return StateClock::Mixed;
    return dur ? StateClock::Duration : StateClock::Calendar;
}

}  // namespace detail_reserve

/// Occupation probabilities from `from_state` at time t0 (duration 0) on the
/// grid [t0, t_max].
inline OccupancyCurves occupancy_curves(const EventModel& model, int from_state, double t0,
                                        double t_max, std::span<const double> x,
                                        const OccupancyOptions& opt = {}) {
    const int J = model.state_space.num_states();
    if (t_max <= t0) throw ConfigError("occupancy horizon must exceed the start time");
    const int n = std::max(2, static_cast<int>(std::ceil((t_max - t0) / opt.step / 2)) * 2);
    UniformGrid grid(t0, t_max, n);
    const int m = grid.nodes();

    auto eval_time = [&](double t) {
        return opt.freeze_calendar_at ? std::min(t, *opt.freeze_calendar_at) : t;
    };
    auto rate = [&](const Transition& tr, double t, double entry) {
        HazardContext ctx = HazardContext::at(eval_time(t), tr.first, entry);
        ctx.duration = t - entry;  // duration is never frozen
        return model.hazards.at(tr).rate(ctx, x);
    };

    auto topo = model.state_space.topological_order();
    if (topo.empty()) {
        // cyclic: only calendar-clock hazards admit linear forward equations
        for (const auto& [tr, hz] : model.hazards)
            if (hz.family().clock != HazardClock::Calendar)
                throw ConfigError(
                    "cyclic models with duration-dependent hazards are not supported");
        OccupancyCurves out;
        out.grid = grid;
        out.occupancy.assign(J, std::vector<double>(m, 0.0));
        std::vector<double> p(J, 0.0);
        p[from_state - 1] = 1.0;
        auto deriv = [&](const std::vector<double>& state, double t) {
            std::vector<double> d(J, 0.0);
            for (const auto& [tr, hz] : model.hazards) {
                const double flow = state[tr.first - 1] * rate(tr, t, t0);
                d[tr.first - 1] -= flow;
                d[tr.second - 1] += flow;
            }
            return d;
        };
        for (int i = 0; i < m; ++i) {
            for (int s = 0; s < J; ++s) out.occupancy[s][i] = p[s];
            if (i + 1 == m) break;
            const double t = grid.node(i), h = grid.h;
            auto k1 = deriv(p, t);
            std::vector<double> tmp(J);
            for (int s = 0; s < J; ++s) tmp[s] = p[s] + 0.5 * h * k1[s];
            auto k2 = deriv(tmp, t + 0.5 * h);
            for (int s = 0; s < J; ++s) tmp[s] = p[s] + 0.5 * h * k2[s];
            auto k3 = deriv(tmp, t + 0.5 * h);
            for (int s = 0; s < J; ++s) tmp[s] = p[s] + h * k3[s];
            auto k4 = deriv(tmp, t + h);
            for (int s = 0; s < J; ++s)
                p[s] += h / 6.0 * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]);
        }
        double worst = 0.0;
        for (int i = 0; i < m; ++i) {
            double sum = 0.0;
            for (int s = 0; s < J; ++s) sum += out.occupancy[s][i];
            worst = std::max(worst, std::abs(sum - 1.0));
        }
        out.max_conservation_error = worst;
        return out;
    }

    // acyclic: propagate entry densities in topological order
    using detail_reserve::StateClock;
    OccupancyCurves out;
    out.grid = grid;
    out.occupancy.assign(J, std::vector<double>(m, 0.0));
    std::vector<std::vector<double>> entry_density(J + 1, std::vector<double>(m, 0.0));

    // per-state 1-d survival tables
    std::map<int, std::vector<double>> cal_cum;   // cumulative exit hazard at nodes
    std::map<int, std::vector<double>> dur_cum;   // cumulative exit hazard in duration
    std::map<int, StateClock> clocks;
    for (int s = 1; s <= J; ++s) {
        if (model.state_space.is_absorbing(s)) continue;
        const StateClock ck = detail_reserve::state_clock(model, s);
        clocks[s] = ck;
        std::vector<double> tot(m, 0.0);
        for (int i = 0; i < m; ++i) {
            const double t = grid.node(i);
            for (int k : model.state_space.exits_from(s))
                tot[i] += ck == StateClock::Duration ? rate({s, k}, t0 + (t - t0), t0)
                                                     : rate({s, k}, t, grid.a);
        }
        if (ck == StateClock::Duration) dur_cum[s] = cumulative_simpson(tot, grid.h);
        else if (ck == StateClock::Calendar) cal_cum[s] = cumulative_simpson(tot, grid.h);
    }
    auto survival = [&](int s, int a, int b) {  // entered s at node a, still there at node b
        if (b <= a) return 1.0;
        switch (clocks.at(s)) {
            case StateClock::Calendar: return std::exp(-(cal_cum[s][b] - cal_cum[s][a]));
            case StateClock::Duration: return std::exp(-dur_cum[s][b - a]);
            case StateClock::Mixed: {
                double c = 0.0;
                HazardContext ctx = HazardContext::at(grid.node(a), s, grid.node(a));
                for (int k : model.state_space.exits_from(s))
                    c += model.hazards.at({s, k}).cumulative(grid.node(a), grid.node(b), ctx, x,
                                                             QuadratureConfig{});
                return std::exp(-c);
            }
        }
        return 1.0;
    };

    std::vector<double> w;
    for (int s : topo) {
        auto& occ = out.occupancy[s - 1];
        const bool absorbing = model.state_space.is_absorbing(s);
        // occupancy from the initial lump and the entry density
        for (int b = 0; b < m; ++b) {
            double v = 0.0;
            if (s == from_state) v += absorbing ? 1.0 : survival(s, 0, b);
            if (absorbing) {
                // cumulative inflow
                detail_reserve::prefix_weights(b, grid.h, w);
                for (int a = 0; a <= b; ++a) v += w[a] * entry_density[s][a];
            } else {
                detail_reserve::prefix_weights(b, grid.h, w);
                for (int a = 0; a <= b; ++a)
                    v += w[a] * entry_density[s][a] * survival(s, a, b);
            }
            occ[b] = v;
        }
        if (absorbing) continue;
        // propagate flows to successors
        for (int k : model.state_space.exits_from(s)) {
            const Transition tr{s, k};
            const bool dur_clock =
                model.hazards.at(tr).family().clock == HazardClock::StateDuration;
            std::vector<double> rate_cal(m, 0.0), rate_dur(m, 0.0);
            if (dur_clock)
                for (int i = 0; i < m; ++i) rate_dur[i] = rate(tr, t0 + i * grid.h, t0);
            else
                for (int i = 0; i < m; ++i) rate_cal[i] = rate(tr, grid.node(i), grid.a);
            for (int b = 0; b < m; ++b) {
                double flow = 0.0;
                if (s == from_state)
                    flow += survival(s, 0, b) * (dur_clock ? rate_dur[b] : rate_cal[b]);
                detail_reserve::prefix_weights(b, grid.h, w);
                for (int a = 0; a <= b; ++a) {
                    const double h_ab = dur_clock ? rate_dur[b - a] : rate_cal[b];
                    flow += w[a] * entry_density[s][a] * survival(s, a, b) * h_ab;
                }
                entry_density[k][b] += flow;
            }
        }
    }

    double worst = 0.0;
    for (int i = 0; i < m; ++i) {
        double sum = 0.0;
        for (int s = 0; s < J; ++s) sum += out.occupancy[s][i];
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    out.max_conservation_error = worst;
    return out;
}

/// Per-state occupation probabilities at time t.
inline std::vector<double> occupation_probability(const EventModel& model, int from_state,
                                                  double t0, double t, std::span<const double> x,
                                                  const OccupancyOptions& opt = {}) {
    if (t < t0) throw ConfigError("occupancy requested before the start time");
    if (t == t0) {
        std::vector<double> out(model.state_space.num_states(), 0.0);
        out[from_state - 1] = 1.0;
        return out;
    }
    return occupancy_curves(model, from_state, t0, t, x, opt).at(t);
}

/// V_a(t; x): expected time spent in `state` before t, starting from state 1
/// at time 0.
inline double expected_occupation(const EventModel& model, int state, double t,
                                  std::span<const double> x, const OccupancyOptions& opt = {}) {
    if (t <= 0.0) return 0.0;
    auto curves = occupancy_curves(model, 1, 0.0, t, x, opt);
    auto cum = cumulative_simpson(curves.occupancy[state - 1], curves.grid.h);
    return cum.back();
}

/// The estimand surface on a shared (time, covariate) grid.
struct EstimandGrid {
    double t_max = 5.0;
    double step = 1.0 / 512.0;
    std::vector<double> xs;                    // covariate grid
    std::vector<double> ts;                    // time nodes
    std::vector<std::vector<double>> values;   // [x index][time index]
    double max_conservation_error = 0.0;

    static std::vector<double> default_xs(double lo = -4.0, double hi = 4.0, int count = 161) {
        std::vector<double> xs(count);
        for (int i = 0; i < count; ++i) xs[i] = lo + (hi - lo) * i / (count - 1);
        return xs;
    }
};

/// Fills the V_a surface for the target state (occupancy integrated in time).
inline EstimandGrid estimand_grid(const EventModel& model, int state, double t_max,
                                  std::vector<double> xs, const OccupancyOptions& opt = {},
                                  int jobs = 1) {
    EstimandGrid g;
    g.t_max = t_max;
    g.step = opt.step;
    g.xs = std::move(xs);
    const int nx = static_cast<int>(g.xs.size());
    g.values.assign(nx, {});
    std::vector<double> errs(nx, 0.0);
    parallel_for(nx, jobs, [&](int i) {
        std::vector<double> xv{g.xs[i]};
        auto curves = occupancy_curves(model, 1, 0.0, t_max, xv, opt);
        auto cum = cumulative_simpson(curves.occupancy[state - 1], curves.grid.h);
        for (auto& v : cum) v = std::max(v, 0.0);
        g.values[i] = std::move(cum);
        errs[i] = curves.max_conservation_error;
        if (i == 0) {
            g.ts.resize(curves.grid.nodes());
            for (int k = 0; k < curves.grid.nodes(); ++k) g.ts[k] = curves.grid.node(k);
        }
    });
    for (double e : errs) g.max_conservation_error = std::max(g.max_conservation_error, e);
    return g;
}

/// MSE and MAE of an estimated surface against the truth, integrated over the
/// shared grid by the trapezoid rule in both directions.
inline std::pair<double, double> estimand_error(const EstimandGrid& estimated,
                                                const EstimandGrid& truth) {
    if (estimated.xs != truth.xs || estimated.ts.size() != truth.ts.size())
        throw ConfigError("estimand grids are not aligned");
    const int nx = static_cast<int>(estimated.xs.size());
    const int nt = static_cast<int>(estimated.ts.size());
    std::vector<double> mse_x(nx, 0.0), mae_x(nx, 0.0);
    const double ht = estimated.ts[1] - estimated.ts[0];
    for (int i = 0; i < nx; ++i) {
        double se = 0.0, ae = 0.0;
        for (int k = 0; k < nt; ++k) {
            const double d = estimated.values[i][k] - truth.values[i][k];
            const double wt = (k == 0 || k + 1 == nt) ? 0.5 : 1.0;
            se += wt * d * d;
            ae += wt * std::abs(d);
        }
        mse_x[i] = se * ht;
        mae_x[i] = ae * ht;
    }
    double mse = 0.0, mae = 0.0;
    const double hx = estimated.xs.size() > 1 ? estimated.xs[1] - estimated.xs[0] : 1.0;
    for (int i = 0; i < nx; ++i) {
        const double wx = (i == 0 || i + 1 == nx) ? 0.5 : 1.0;
        mse += wx * mse_x[i];
        mae += wx * mae_x[i];
    }
    return {mse * hx, mae * hx};
}

}  // namespace msdelay
