#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "msdelay/adjudication.hpp"
#include "msdelay/core.hpp"
#include "msdelay/delay.hpp"
#include "msdelay/hazard.hpp"
#include "msdelay/likelihood.hpp"

// The benchmark scenario: a three-state hierarchical event model with a
// delayed, adjudicated 2->3 transition, the matching adjudication chain, and
// closed-form helpers (confirmation probability, thinned 2->3 hazard, erfi,
// analytic cumulative hazards). Also registers the misspecified families used
// by the robustness study and a piecewise-constant family for rate tables.

namespace msdelay {

/// 15th-order odd Taylor polynomial of the imaginary error function around 0.
inline double erfi_taylor(double z) {
    const double z2 = z * z;
    const double poly =
        2.0 * z +
        z * z2 * (2.0 / 3.0 +
        z2 * (1.0 / 5.0 +
        z2 * (1.0 / 21.0 +
        z2 * (1.0 / 108.0 +
        z2 * (1.0 / 660.0 +
        z2 * (1.0 / 4680.0 +
        z2 * (1.0 / 37800.0)))))));
    return poly / std::sqrt(std::numbers::pi);
}

/// erfi via its everywhere-convergent power series, summed to convergence.
inline double erfi_series(double z) {
    const double z2 = z * z;
    double term = z, sum = z;
    for (int n = 1; n < 400; ++n) {
        term *= z2 / n;
        const double add = term / (2 * n + 1);
        sum += add;
        if (std::abs(add) < 1e-17 * std::abs(sum)) break;
    }
    return 2.0 / std::sqrt(std::numbers::pi) * sum;
}

/// erfi with the cheap polynomial on the range where its error is below the
/// series' own truncation noise floor for this application.
inline double erfi(double z) {
    return std::abs(z) <= 0.8 ? erfi_taylor(z) : erfi_series(z);
}

/// Probability that a newly reported 2->3 jump is eventually confirmed by the
/// review chain: p(x) = {1 - exp(-g1 x^2 / 2)} {1 - exp(1/g2)}, g2 < 0.
inline double p_confirm(double x, std::span<const double> g) {
    if (g[1] >= 0.0)
        throw NumericalError("p_confirm requires g2 < 0; the review survival integral diverges");
    return -std::expm1(-g[0] * x * x / 2.0) * -std::expm1(1.0 / g[1]);
}

namespace sim6 {

/// -int_0^d exp(theta7 v x^2) dv, stable near theta7 x^2 = 0.
inline double neg_cum_tilde23(double d, double zhat) {
    if (std::abs(zhat) < 1e-10) return -d * (1.0 + zhat * d / 2.0);
    return -std::expm1(zhat * d) / zhat;
}

/// p(x) memo for the hot quadrature loops, which evaluate one subject's nodes
/// consecutively.
inline double cached_p_confirm(double x, std::span<const double> g) {
    thread_local double kx = std::numeric_limits<double>::quiet_NaN(), kg0 = 0.0, kg1 = 0.0,
                        kp = 0.0;
    if (x != kx || g[0] != kg0 || g[1] != kg1) {
        kp = p_confirm(x, g);
        kx = x;
        kg0 = g[0];
        kg1 = g[1];
    }
    return kp;
}

}  // namespace sim6

/// Thinned 2->3 hazard of the confirmed-events process: the generator hazard
/// exp(theta7 d x^2) corrected for the probability that the jump survives
/// adjudication.
inline double mu23_star(double d, double x, double theta7, std::span<const double> g) {
    const double p = sim6::cached_p_confirm(x, g);
    if (p <= 0.0) return 0.0;
    const double zhat = theta7 * x * x;
    const double log_surv = sim6::neg_cum_tilde23(d, zhat);   // log S~(d)
    const double surv = std::exp(log_surv);
    const double mu_tilde = std::exp(zhat * d);
    return p * surv * mu_tilde / (1.0 - p * (1.0 - surv));
}

/// Antiderivative of the total exit intensity out of state 1 for the benchmark
/// hazards; only differences are meaningful.
inline double cumulative_exit_hazard_state1(double s, double x, std::span<const double> th) {
    const double half_pi_x = 0.5 * std::numbers::pi * x;
    const double erfi_part = std::sqrt(std::numbers::pi / (4.0 * th[4])) *
                             std::exp(th[3] + th[5] * std::cos(half_pi_x)) *
                             erfi(std::sqrt(th[4]) * s);
    const double exp_part = std::exp(th[0] + th[1] * x + th[2] * std::sin(half_pi_x)) *
                            std::exp(th[1] * s) / th[1];
    return erfi_part + exp_part;
}

namespace detail_families {

inline double exp_linear_integral(double scale, double slope, double t0, double t1) {
    // int_{t0}^{t1} scale * exp(slope * s) ds
    if (std::abs(slope) < 1e-12) return scale * (t1 - t0) * std::exp(slope * 0.5 * (t0 + t1));
    if (!std::isfinite(t1)) {
        if (slope >= 0.0) throw NumericalError("divergent exponential tail integral");
        return -scale * std::exp(slope * t0) / slope;
    }
    return scale * std::exp(slope * t0) * std::expm1(slope * (t1 - t0)) / slope;
}

inline double gauss_integral(double t0, double t1, double a) {
    // int_{t0}^{t1} exp(a s^2) ds
    if (std::abs(a) < 1e-12) return (t1 - t0) + a * (t1 * t1 * t1 - t0 * t0 * t0) / 3.0;
    if (a > 0.0) {
        const double r = std::sqrt(a);
        return std::sqrt(std::numbers::pi / (4.0 * a)) * (erfi(r * t1) - erfi(r * t0));
    }
    const double r = std::sqrt(-a);
    return std::sqrt(std::numbers::pi / (-4.0 * a)) * (std::erf(r * t1) - std::erf(r * t0));
}

inline void register_all() {
    // mu*_12(t; x) = exp(b0 + b1 (t + x) + b2 sin(pi x / 2)), no reporting delay
    {
        HazardFamily fam = make_loglinear_family(
            "sim6_mu12", 3, HazardClock::Calendar,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = 1.0;
                out[1] = c.t + x[0];
                out[2] = std::sin(0.5 * std::numbers::pi * x[0]);
            });
        fam.cumulative = [](double t0, double t1, const HazardContext&, std::span<const double> x,
                            std::span<const double> b, std::span<const double>) {
            const double scale =
                std::exp(b[0] + b[1] * x[0] + b[2] * std::sin(0.5 * std::numbers::pi * x[0]));
            return exp_linear_integral(scale, b[1], t0, t1);
        };
        register_hazard_family(std::move(fam));
    }
    // mu*_13(t; x) = exp(b0 + b1 t^2 + b2 cos(pi x / 2)), Weibull-delayed
    {
        HazardFamily fam = make_loglinear_family(
            "sim6_mu13", 3, HazardClock::Calendar,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = 1.0;
                out[1] = c.t * c.t;
                out[2] = std::cos(0.5 * std::numbers::pi * x[0]);
            });
        fam.cumulative = [](double t0, double t1, const HazardContext&, std::span<const double> x,
                            std::span<const double> b, std::span<const double>) {
            if (!std::isfinite(t1)) throw NumericalError("divergent tail for sim6_mu13");
            const double scale =
                std::exp(b[0] + b[2] * std::cos(0.5 * std::numbers::pi * x[0]));
            return scale * gauss_integral(t0, t1, b[1]);
        };
        register_hazard_family(std::move(fam));
    }
    // generator hazard mu~_23(d; x) = exp(b0 d x^2)
    {
        HazardFamily fam = make_loglinear_family(
            "sim6_mu23_tilde", 1, HazardClock::StateDuration,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = c.duration * x[0] * x[0];
            },
            /*intercept_index=*/-1);
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double> x, std::span<const double> b,
                            std::span<const double>) {
            const double zhat = b[0] * x[0] * x[0];
            const double d0 = t0 - c.segment_start, d1 = t1 - c.segment_start;
            if (!std::isfinite(t1)) {
                if (zhat >= 0.0) throw NumericalError("divergent tail for sim6_mu23_tilde");
                return sim6::neg_cum_tilde23(d0, zhat) - 1.0 / zhat;
            }
            return sim6::neg_cum_tilde23(d0, zhat) - sim6::neg_cum_tilde23(d1, zhat);
        };
        register_hazard_family(std::move(fam));
    }
    // thinned hazard mu*_23(d; x) with plug-in review parameters as hyper = g
    {
        HazardFamily fam;
        fam.id = "sim6_mu23_star";
        fam.dim = 1;
        fam.clock = HazardClock::StateDuration;
        fam.intercept_index = -1;
        fam.custom_rate = [](const HazardContext& c, std::span<const double> x,
                             std::span<const double> b, std::span<const double> hyper) {
            return mu23_star(c.duration, x[0], b[0], hyper);
        };
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double> x, std::span<const double> b,
                            std::span<const double> hyper) {
            const double p = sim6::cached_p_confirm(x[0], hyper);
            const double zhat = b[0] * x[0] * x[0];
            auto cum = [&](double d) {  // -log P(D* > d)
                if (d <= 0.0) return 0.0;
                const double surv = std::exp(sim6::neg_cum_tilde23(d, zhat));
                return -std::log1p(-p * (1.0 - surv));
            };
            const double d0 = t0 - c.segment_start;
            if (!std::isfinite(t1)) {
                if (zhat >= 0.0) throw NumericalError("divergent tail for sim6_mu23_star");
                const double surv_inf = std::exp(1.0 / zhat);
                return -std::log1p(-p * (1.0 - surv_inf)) - cum(d0);
            }
            return cum(t1 - c.segment_start) - cum(d0);
        };
        register_hazard_family(std::move(fam));
    }
    // review hazards: omega_12(t) = g1 {x / (t - report + 2)}^2, g1 > 0
    {
        HazardFamily fam;
        fam.id = "sim6_omega12";
        fam.dim = 1;
        fam.clock = HazardClock::Calendar;  // time-deterministic given the report anchor
        fam.transforms = {ParamTransform::LogPositive};
        fam.intercept_index = -1;
        fam.custom_rate = [](const HazardContext& c, std::span<const double> x,
                             std::span<const double> b, std::span<const double>) {
            const double denom = c.t - c.report_time + 2.0;
            return b[0] * (x[0] / denom) * (x[0] / denom);
        };
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double> x, std::span<const double> b,
                            std::span<const double>) {
            const double v0 = t0 - c.report_time + 2.0;
            if (!std::isfinite(t1)) return b[0] * x[0] * x[0] / v0;
            const double v1 = t1 - c.report_time + 2.0;
            return b[0] * x[0] * x[0] * (1.0 / v0 - 1.0 / v1);
        };
        register_hazard_family(std::move(fam));
    }
    // omega_23(t) = exp(g2 (t - entry))
    {
        HazardFamily fam = make_loglinear_family(
            "sim6_omega23", 1, HazardClock::StateDuration,
            [](const HazardContext& c, std::span<const double>, std::span<double> out) {
                out[0] = c.duration;
            },
            /*intercept_index=*/-1);
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double>, std::span<const double> b,
                            std::span<const double>) {
            const double d0 = t0 - c.segment_start;
            if (!std::isfinite(t1)) {
                if (b[0] >= 0.0) throw NumericalError("divergent tail for sim6_omega23");
                return -std::exp(b[0] * d0) / b[0];
            }
            return exp_linear_integral(1.0, b[0], d0, t1 - c.segment_start);
        };
        register_hazard_family(std::move(fam));
    }

    // misspecified families for the robustness study: log-linear in time or
    // duration plus the raw covariate
    auto exp_linear_cum = [](int slope_index, bool duration_clock) {
        return [slope_index, duration_clock](double t0, double t1, const HazardContext& c,
                                             std::span<const double> x,
                                             std::span<const double> b,
                                             std::span<const double>) {
            double lin = 0.0;
            // scale collects every term except the sloped one
            for (int i = 0; i < static_cast<int>(b.size()); ++i) {
                if (i == slope_index) continue;
                lin += b[i] * (i == 0 ? 1.0 : x[0]);
            }
            const double a0 = duration_clock ? t0 - c.segment_start : t0;
            const double a1 = duration_clock ? t1 - c.segment_start : t1;
            return exp_linear_integral(std::exp(lin), b[slope_index], a0, a1);
        };
    };
    {
        HazardFamily fam = make_loglinear_family(
            "miss_mu12", 3, HazardClock::Calendar,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = 1.0;
                out[1] = c.t;
                out[2] = x[0];
            });
        fam.cumulative = exp_linear_cum(1, false);
        register_hazard_family(std::move(fam));
        fam = make_loglinear_family(
            "miss_mu13", 3, HazardClock::Calendar,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = 1.0;
                out[1] = c.t;
                out[2] = x[0];
            });
        fam.cumulative = exp_linear_cum(1, false);
        register_hazard_family(std::move(fam));
        fam = make_loglinear_family(
            "miss_mu23", 3, HazardClock::StateDuration,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = 1.0;
                out[1] = c.duration;
                out[2] = x[0];
            });
        fam.cumulative = exp_linear_cum(1, true);
        register_hazard_family(std::move(fam));
    }
    {
        HazardFamily fam = make_loglinear_family(
            "miss_omega12", 2, HazardClock::Calendar,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = x[0];
                out[1] = c.t - c.report_time;
            },
            /*intercept_index=*/-1);
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double> x, std::span<const double> b,
                            std::span<const double>) {
            const double scale = std::exp(b[0] * x[0] - b[1] * c.report_time);
            return exp_linear_integral(scale, b[1], t0, t1);
        };
        register_hazard_family(std::move(fam));
        fam = make_loglinear_family(
            "miss_omega23", 2, HazardClock::StateDuration,
            [](const HazardContext& c, std::span<const double> x, std::span<double> out) {
                out[0] = x[0];
                out[1] = c.duration;
            },
            /*intercept_index=*/-1);
        fam.cumulative = [](double t0, double t1, const HazardContext& c,
                            std::span<const double> x, std::span<const double> b,
                            std::span<const double>) {
            const double scale = std::exp(b[0] * x[0]);
            return exp_linear_integral(scale, b[1], t0 - c.segment_start, t1 - c.segment_start);
        };
        register_hazard_family(std::move(fam));
    }
}

}  // namespace detail_families

/// Registers every built-in hazard family once per process.
inline void register_builtin_families() {
    static const bool done = [] {
        detail_families::register_all();
        return true;
    }();
    (void)done;
}

/// Piecewise-constant hazard on calendar time over the given breaks; one
/// coefficient (log level) per bucket. Useful for occurrence-exposure checks.
inline void register_piecewise_constant_family(const std::string& id,
                                               std::vector<double> breaks) {
    if (breaks.size() < 2) throw ConfigError("piecewise family needs at least one bucket");
    const int nb = static_cast<int>(breaks.size()) - 1;
    HazardFamily fam;
    fam.id = id;
    fam.dim = nb;
    fam.clock = HazardClock::Calendar;
    fam.intercept_index = 0;
    auto bucket_of = [breaks](double t) {
        int b = 0;
        for (std::size_t i = 1; i + 1 < breaks.size(); ++i)
            if (t >= breaks[i]) b = static_cast<int>(i);
        return b;
    };
    fam.features = [bucket_of, nb](const HazardContext& c, std::span<const double>,
                                   std::span<double> out) {
        for (int i = 0; i < nb; ++i) out[i] = 0.0;
        out[bucket_of(c.t)] = 1.0;
    };
    fam.cumulative = [breaks, nb](double t0, double t1, const HazardContext&,
                                  std::span<const double>, std::span<const double> b,
                                  std::span<const double>) {
        if (!std::isfinite(t1)) throw NumericalError("divergent tail for piecewise family");
        double acc = 0.0;
        for (int i = 0; i < nb; ++i) {
            const double lo = std::max(t0, breaks[i]);
            const double hi = (i == nb - 1) ? t1 : std::min(t1, breaks[i + 1]);
            if (hi > lo) acc += std::exp(b[i]) * (hi - lo);
        }
        return acc;
    };
    register_hazard_family(std::move(fam));
}

// ---------------------------------------------------------------------------
// Scenario configuration and model builders

struct ScenarioConfig {
    int n = 1500;
    double eta = 5.0;
    std::vector<double> theta = {std::log(0.15), 0.1, 0.4, std::log(0.1), 0.03, -0.3, -0.3};
    std::vector<double> f = {2.0, 0.5, 0.1, 1.0, 1.5, 0.2};
    std::vector<double> g = {0.8, -1.2};
    double x_min = -4.0, x_max = 4.0;  // X ~ Uniform(x_min, x_max)
    double v_max = 1.0;                // V ~ Uniform(0, v_max), C | V ~ Uniform(V, eta)
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw ConfigError("scenario needs n >= 1");
        if (eta <= 0.0) throw ConfigError("eta must be positive");
        if (theta.size() != 7 || f.size() != 6 || g.size() != 2)
            throw ConfigError("scenario parameter blocks must have sizes 7/6/2");
        if (!(x_min < x_max) || !(v_max > 0.0) || !(v_max < eta))
            throw ConfigError("bad covariate/truncation laws");
    }
};

inline StateSpace sim6_state_space() {
    return StateSpace(3, {"state1", "state2", "state3"}, {{1, 2}, {1, 3}, {2, 3}});
}

inline DelayModelSet sim6_delays(std::span<const double> f) {
    register_builtin_families();
    DelayModelSet set;
    DelayModel from1;
    from1.lambda = f[0];
    from1.shape = f[1];
    from1.beta = {f[2]};
    DelayModel from2;
    from2.lambda = f[3];
    from2.shape = f[4];
    from2.beta = {f[5]};
    set.models[{1, 3}] = from1;
    set.models[{2, 3}] = from2;
    return set;
}

inline DelayModelSet sim6_gamma_delays(std::span<const double> f) {
    DelayModelSet set = sim6_delays(f);
    for (auto& [tr, m] : set.models) m.family = DelayFamily::GammaReverseHazard;
    return set;
}

/// Event model of the confirmed-events process: the 2->3 hazard is the thinned
/// closed form and carries the review parameters as hyperparameters.
inline EventModel sim6_event_model(std::span<const double> theta, std::span<const double> g,
                                   std::span<const double> f, bool delay_free = false) {
    register_builtin_families();
    std::map<Transition, LogLinearHazard> hz;
    hz[{1, 2}] = {"sim6_mu12", {theta[0], theta[1], theta[2]}, {1, 2}, {}};
    hz[{1, 3}] = {"sim6_mu13", {theta[3], theta[4], theta[5]}, {1, 3}, {}};
    hz[{2, 3}] = {"sim6_mu23_star", {theta[6]}, {2, 3}, {g[0], g[1]}};
    DelayModelSet delays;
    if (!delay_free) delays = sim6_delays(f);
    return EventModel(sim6_state_space(), std::move(hz), std::move(delays));
}

/// Generator model: the raw rates the data is simulated from (2->3 uses the
/// unthinned duration hazard).
inline EventModel sim6_generator_model(std::span<const double> theta) {
    register_builtin_families();
    std::map<Transition, LogLinearHazard> hz;
    hz[{1, 2}] = {"sim6_mu12", {theta[0], theta[1], theta[2]}, {1, 2}, {}};
    hz[{1, 3}] = {"sim6_mu13", {theta[3], theta[4], theta[5]}, {1, 3}, {}};
    hz[{2, 3}] = {"sim6_mu23_tilde", {theta[6]}, {2, 3}, {}};
    return EventModel(sim6_state_space(), std::move(hz), DelayModelSet{});
}

inline EventModel sim6_miss_event_model(std::span<const double> theta9,
                                        std::span<const double> f, bool delay_free = false) {
    register_builtin_families();
    std::map<Transition, LogLinearHazard> hz;
    hz[{1, 2}] = {"miss_mu12", {theta9[0], theta9[1], theta9[2]}, {1, 2}, {}};
    hz[{1, 3}] = {"miss_mu13", {theta9[3], theta9[4], theta9[5]}, {1, 3}, {}};
    hz[{2, 3}] = {"miss_mu23", {theta9[6], theta9[7], theta9[8]}, {2, 3}, {}};
    DelayModelSet delays;
    if (!delay_free) delays = sim6_delays(f);
    return EventModel(sim6_state_space(), std::move(hz), std::move(delays));
}

inline StateSpace sim6_adj_state_space() {
    return StateSpace(3, {"received", "review", "confirmed"}, {{1, 2}, {2, 3}});
}

inline AdjudicationModel sim6_adjudication_model(std::span<const double> g) {
    register_builtin_families();
    AdjudicationModel m{sim6_adj_state_space(), {}, {{3, AdjOutcome::Confirmed}}, 1};
    m.hazards[{1, 2}] = {"sim6_omega12", {g[0]}, {1, 2}, {}};
    m.hazards[{2, 3}] = {"sim6_omega23", {g[1]}, {2, 3}, {}};
    m.validate();
    return m;
}

inline AdjudicationModel sim6_miss_adjudication_model(std::span<const double> g4) {
    register_builtin_families();
    AdjudicationModel m{sim6_adj_state_space(), {}, {{3, AdjOutcome::Confirmed}}, 1};
    m.hazards[{1, 2}] = {"miss_omega12", {g4[0], g4[1]}, {1, 2}, {}};
    m.hazards[{2, 3}] = {"miss_omega23", {g4[2], g4[3]}, {2, 3}, {}};
    m.validate();
    return m;
}

}  // namespace msdelay
