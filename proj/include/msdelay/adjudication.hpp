#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/hazard.hpp"
#include "msdelay/nelder_mead.hpp"
#include "msdelay/quadrature.hpp"
#include "msdelay/thinning.hpp"

// Adjudication multistate model: hazards omega_jk over the review process of a
// reported event, the counting-process log-likelihood l_xi, simulation of
// tracks, and the imputation weights w(1, Z; g) via absorption probabilities.

namespace msdelay {

struct AdjudicationModel {
    StateSpace adj_state_space;
    std::map<Transition, LogLinearHazard> hazards;
    std::map<int, AdjOutcome> outcome_map;  // absorbing states -> Confirmed/Rejected
    int start_state = 1;

    void validate() const {
        for (const auto& [s, o] : outcome_map) {
            if (o == AdjOutcome::Pending) throw ConfigError("outcome map entries must be decided");
            if (!adj_state_space.is_absorbing(s))
                throw ConfigError("outcome-mapped adjudication states must be absorbing");
        }
        for (const auto& [tr, h] : hazards)
            if (!adj_state_space.allows(tr.first, tr.second))
                throw ConfigError("adjudication hazard outside the allowed transitions");
    }

    // disabled hazards keep their coefficient slots so the g layout is stable
    std::vector<double> g() const {
        std::vector<double> out;
        for (const auto& [tr, h] : hazards)
            out.insert(out.end(), h.coefficients.begin(), h.coefficients.end());
        return out;
    }

    void set_g(std::span<const double> g) {
        std::size_t pos = 0;
        for (auto& [tr, h] : hazards) {
            const std::size_t d = h.family().dim;
            if (pos + d > g.size()) throw ConfigError("g vector too short");
            h.coefficients.assign(g.begin() + pos, g.begin() + pos + d);
            pos += d;
        }
        if (pos != g.size()) throw ConfigError("g vector has wrong length");
    }

    std::optional<AdjOutcome> outcome_of(int state) const {
        auto it = outcome_map.find(state);
        return it == outcome_map.end() ? std::nullopt : std::optional<AdjOutcome>(it->second);
    }
};

namespace detail {

inline HazardContext adj_ctx(const ReportedEvent& e, double t, int adj_state,
                             double state_entry, int transitions_before) {
    HazardContext c = HazardContext::at(t, adj_state, state_entry);
    c.event_time = e.time;
    c.report_time = e.report_time();
    c.report_delay = e.delay;
    c.adj_transition_count = transitions_before;
    return c;
}

}  // namespace detail

/// Counting-process log-likelihood of all adjudication tracks of one subject.
/// Each track is observed on (report time, min(sigma, eta)].
inline double adj_loglik(const SubjectRecord& record, const AdjudicationModel& model, double eta,
                         const QuadratureConfig& quad,
                         const std::optional<Transition>& only = std::nullopt) {
    double ll = 0.0;
    for (const auto& e : record.events) {
        const auto& track = e.track;
        const double window_end = track.outcome_time ? *track.outcome_time : eta;
        int state = track.initial_adj_state;
        double entry = track.report_time;
        int count = 0;
        auto exposure = [&](double from, double to) {
            if (to <= from) return;
            for (int k : model.adj_state_space.exits_from(state)) {
                const Transition tr{state, k};
                if (only && *only != tr) continue;
                auto it = model.hazards.find(tr);
                if (it == model.hazards.end() || it->second.disabled) continue;
                HazardContext ctx = detail::adj_ctx(e, from, state, entry, count);
                ll -= it->second.cumulative(from, to, ctx, record.x, quad);
            }
        };
        for (const auto& jmp : track.transitions) {
            if (jmp.time > window_end) break;
            exposure(entry, jmp.time);
            const Transition tr{state, jmp.mark};
            if (!model.adj_state_space.allows(tr.first, tr.second))
                throw DataError("recorded adjudication transition is not allowed by the model");
            if (!only || *only == tr) {
                auto it = model.hazards.find(tr);
                if (it != model.hazards.end() && !it->second.disabled) {
                    HazardContext ctx = detail::adj_ctx(e, jmp.time, state, entry, count);
                    ll += std::log(std::max(it->second.rate(ctx, record.x), 1e-300));
                }
            }
            state = jmp.mark;
            entry = jmp.time;
            ++count;
        }
        exposure(entry, window_end);
    }
    return ll;
}

struct AdjudicationFitResult {
    AdjudicationModel model;
    std::map<Transition, SimplexResult> diagnostics;
    std::vector<Transition> flagged;  // transitions with no occurrences or divergence
    bool converged = true;
};

/// Maximizes the summed l_xi. Transition blocks are separable, so each
/// adjudication hazard is fitted on its own coordinates. Transitions with
/// occurrences but runaway coefficients are flagged and their hazards zeroed;
/// transitions with no occurrences at all are likewise flagged.
inline AdjudicationFitResult fit_adjudication(const Dataset& data, const AdjudicationModel& start,
                                              const OptimizerConfig& opt,
                                              const QuadratureConfig& quad) {
    AdjudicationFitResult out{start, {}, {}, true};
    out.model.validate();

    std::map<Transition, int> occurrences;
    for (const auto& r : data.subjects)
        for (const auto& e : r.events) {
            int state = e.track.initial_adj_state;
            for (const auto& jmp : e.track.transitions) {
                occurrences[{state, jmp.mark}]++;
                state = jmp.mark;
            }
        }

    for (auto& [tr, hz] : out.model.hazards) {
        if (hz.disabled) continue;
        if (occurrences[tr] == 0) {
            hz.disabled = true;
            out.flagged.push_back(tr);
            continue;
        }
        const auto& fam = hz.family();
        auto pack = [&](const LogLinearHazard& h) {
            std::vector<double> p(h.coefficients.size());
            for (std::size_t i = 0; i < p.size(); ++i)
                p[i] = fam.transform(i) == ParamTransform::LogPositive
                           ? std::log(h.coefficients[i])
                           : h.coefficients[i];
            return p;
        };
        auto unpack = [&](const std::vector<double>& p) {
            std::vector<double> c(p.size());
            for (std::size_t i = 0; i < p.size(); ++i)
                c[i] = fam.transform(i) == ParamTransform::LogPositive ? std::exp(p[i]) : p[i];
            return c;
        };

        AdjudicationModel work = out.model;
        const Transition tr_copy = tr;
        // subjects with no open review window contribute nothing
        std::vector<const SubjectRecord*> informative;
        for (const auto& r : data.subjects)
            for (const auto& e : r.events) {
                const double end = e.track.outcome_time ? *e.track.outcome_time : data.eta;
                if (end > e.track.report_time + 1e-12) {
                    informative.push_back(&r);
                    break;
                }
            }
        auto objective = [&](const std::vector<double>& p) {
            work.hazards.at(tr_copy).coefficients = unpack(p);
            double s = 0.0;
            for (const auto* r : informative) s += adj_loglik(*r, work, data.eta, quad, tr_copy);
            return s;
        };
        auto res = nelder_mead_maximize(objective, pack(hz), opt);
        hz.coefficients = unpack(res.argmax);
        bool diverged = false;
        for (double p : res.argmax)
            if (std::abs(p) > 50.0) diverged = true;
        if (diverged) {
            hz.disabled = true;
            out.flagged.push_back(tr);
        }
        out.converged = out.converged && res.converged && !diverged;
        out.diagnostics[tr] = std::move(res);
    }
    return out;
}

struct AbsorptionResult {
    double weight = 0.0;        // P(eventually absorbed in a Confirmed-mapped state)
    double pending_mass = 0.0;  // probability mass whose fate is unresolved at the horizon
    bool uncertain = false;     // pending_mass >= tol at the maximal horizon
};

namespace detail {

/// Downstream value of entering adjudication state `state` at calendar time s,
/// either constant or tabulated on [eta, H] (frozen at its last value beyond H).
struct ValueFn {
    bool is_const = true;
    double c = 0.0;
    UniformGrid grid;
    std::vector<double> v;

    double at(double s) const {
        if (is_const) return c;
        if (s <= grid.a) return v.front();
        if (s >= grid.b) return v.back();
        const double pos = (s - grid.a) / grid.h;
        const int i = std::min(static_cast<int>(pos), grid.n - 1);
        const double w = pos - i;
        return (1.0 - w) * v[i] + w * v[i + 1];
    }
};

struct AbsorptionSolver {
    const AdjudicationModel& model;
    const ReportedEvent& event;
    std::span<const double> x;
    double now;      // evaluation time anchoring the numeric window
    double horizon;  // absolute end of the numeric window
    double grid_step;
    std::map<int, ValueFn> values;
    double pending = 0.0;

    const LogLinearHazard& hazard(const Transition& tr) const { return model.hazards.at(tr); }

    bool all_exits_have_tail(int state) const {
        for (int k : model.adj_state_space.exits_from(state))
            if (!hazard({state, k}).has_tail_integral() && !hazard({state, k}).disabled)
                return false;
        return true;
    }

    double target_value(int k, double s) const {
        if (auto o = model.outcome_of(k)) return *o == AdjOutcome::Confirmed ? 1.0 : 0.0;
        if (model.adj_state_space.is_absorbing(k)) return 0.0;  // dead end, never confirmed
        return values.at(k).at(s);
    }

    bool target_constant(int k) const {
        if (model.outcome_of(k) || model.adj_state_space.is_absorbing(k)) return true;
        auto it = values.find(k);
        return it != values.end() && it->second.is_const;
    }

    /// W_state(entry, from): probability of eventual Confirmed absorption given
    /// occupation of `state` since `entry`, still unabsorbed at `from`.
    double value(int state, double entry, double from, int transitions_before) {
        const auto exits = model.adj_state_space.exits_from(state);
        if (exits.empty()) {
            if (auto o = model.outcome_of(state)) return *o == AdjOutcome::Confirmed ? 1.0 : 0.0;
            return 0.0;
        }
        HazardContext ctx = adj_ctx(event, from, state, entry, transitions_before);

        std::vector<const LogLinearHazard*> hz;
        bool consts = true, tails = true;
        for (int k : exits) {
            hz.push_back(&hazard({state, k}));
            consts = consts && target_constant(k);
            tails = tails && (hz.back()->disabled || hz.back()->has_tail_integral());
        }

        // single active exit with constant target and a closed-form tail
        if (consts && tails && exits.size() == 1 && !hz[0]->disabled) {
            const double lam = hz[0]->cumulative(from,
                                                 std::numeric_limits<double>::infinity(), ctx, x,
                                                 QuadratureConfig{});
            return target_value(exits[0], from) * -std::expm1(-lam);
        }

        // numeric integral over [from, H] with analytic tail when available
        const int n = std::max(2, static_cast<int>(std::ceil((horizon - from) / grid_step / 2)) * 2);
        UniformGrid g(from, horizon, n);
        double total = 0.0;
        std::vector<double> integrand(g.nodes(), 0.0);
        std::vector<double> cum_exit(g.nodes(), 0.0);
        {
            std::vector<double> tot_rate(g.nodes(), 0.0);
            bool analytic = true;
            for (const auto* h : hz)
                if (!h->disabled && !h->family().cumulative) analytic = false;
            for (int i = 0; i < g.nodes(); ++i) {
                const double t = g.node(i);
                HazardContext c = adj_ctx(event, t, state, entry, transitions_before);
                for (const auto* h : hz) tot_rate[i] += h->disabled ? 0.0 : h->rate(c, x);
            }
            if (analytic) {
                for (int i = 0; i < g.nodes(); ++i) {
                    double csum = 0.0;
                    for (const auto* h : hz)
                        csum += h->cumulative(from, g.node(i), ctx, x, QuadratureConfig{});
                    cum_exit[i] = csum;
                }
            } else {
                cum_exit = cumulative_simpson(tot_rate, g.h);
            }
            for (int i = 0; i < g.nodes(); ++i) {
                const double t = g.node(i);
                HazardContext c = adj_ctx(event, t, state, entry, transitions_before);
                double flow = 0.0;
                for (std::size_t ke = 0; ke < exits.size(); ++ke) {
                    if (hz[ke]->disabled) continue;
                    flow += hz[ke]->rate(c, x) * target_value(exits[ke], t);
                }
                integrand[i] = std::exp(-cum_exit[i]) * flow;
            }
            total = integrate_nodes(integrand, g.h);
        }

        // tail beyond the horizon
        const double surv_h = std::exp(-cum_exit.back());
        if (surv_h > 0.0) {
            if (tails) {
                // freeze downstream values at H; exact when they are constant
                double tail = 0.0, lam_tail = 0.0;
                std::vector<double> lam_k(exits.size(), 0.0);
                for (std::size_t ke = 0; ke < exits.size(); ++ke) {
                    if (hz[ke]->disabled) continue;
                    lam_k[ke] = hz[ke]->cumulative(horizon, std::numeric_limits<double>::infinity(),
                                                   ctx, x, QuadratureConfig{});
                    lam_tail += lam_k[ke];
                }
                if (lam_tail > 0.0) {
                    const double exit_prob = -std::expm1(-lam_tail);
                    for (std::size_t ke = 0; ke < exits.size(); ++ke) {
                        if (hz[ke]->disabled) continue;
                        tail += exit_prob * (lam_k[ke] / lam_tail) *
                                target_value(exits[ke], horizon);
                    }
                }
                total += surv_h * tail;
                if (!consts) pending = std::max(pending, surv_h * -std::expm1(-lam_tail));
            } else {
                pending = std::max(pending, surv_h);
            }
        }
        return total;
    }

    void build_tables(int query_state) {
        auto topo = model.adj_state_space.topological_order();
        if (topo.empty())
            throw ConfigError("absorption probabilities require an acyclic adjudication model");
        // states reachable from the query state; its own table is never read
        std::vector<char> needed(model.adj_state_space.num_states() + 1, 0);
        needed[query_state] = 1;
        for (int s_ : topo)
            if (needed[s_])
                for (int k : model.adj_state_space.exits_from(s_)) needed[k] = 1;
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            const int state = *it;
            if (!needed[state] || state == query_state) continue;
            if (model.adj_state_space.is_absorbing(state)) continue;
            const auto exits = model.adj_state_space.exits_from(state);

            // entered-now value: constant when every exit hazard runs on the
            // state-duration clock with constant downstream values
            bool duration_only = true, consts = true;
            for (int k : exits) {
                const auto& h = hazard({state, k});
                duration_only = duration_only && (h.disabled ||
                                                  h.family().clock == HazardClock::StateDuration);
                consts = consts && target_constant(k);
            }
            ValueFn vf;
            if (duration_only && consts) {
                vf.is_const = true;
                vf.c = value(state, now, now, 0);
            } else {
                const double step = std::max(grid_step * 8.0, 1.0 / 32.0);
                int n = std::max(2, static_cast<int>(std::ceil((horizon - now) / step / 2)) * 2);
                vf.is_const = false;
                vf.grid = UniformGrid(now, horizon, n);
                vf.v.resize(vf.grid.nodes());
                for (int i = 0; i < vf.grid.nodes(); ++i) {
                    const double s = vf.grid.node(i);
                    vf.v[i] = value(state, s, s, 0);
                }
            }
            values[state] = std::move(vf);
        }
    }
};

}  // namespace detail

/// Probability that a review currently in `state` (entered at `entry`, with
/// `transitions_before` prior track transitions) is eventually absorbed in a
/// Confirmed-mapped state, evaluated at time `now`. The numeric window spans
/// [now, now + horizon] and doubles until the unresolved mass falls below tol
/// (or the maximal horizon is reached, in which case the result is flagged).
inline AbsorptionResult absorption_from_state(const AdjudicationModel& model,
                                              const ReportedEvent& event, int state, double entry,
                                              int transitions_before, double now,
                                              std::span<const double> x, double horizon = 50.0,
                                              double tol = 1e-8, double max_horizon = 400.0) {
    double h = horizon;
    for (;;) {
        detail::AbsorptionSolver solver{model, event, x, now, now + h, 1.0 / 256.0, {}, 0.0};
        solver.build_tables(state);
        const double w = solver.value(state, entry, now, transitions_before);
        if (solver.pending < tol || h >= max_horizon)
            return {std::min(std::max(w, 0.0), 1.0), solver.pending, solver.pending >= tol};
        h = std::min(h * 2.0, max_horizon);
    }
}

/// w(1, Z; g): probability that the pending last reported event is eventually
/// confirmed, given its adjudication state and elapsed times at eta. Decided
/// events bypass the computation.
inline AbsorptionResult absorption_weight(const SubjectRecord& record,
                                          const AdjudicationModel& model, double eta,
                                          double horizon = 50.0, double tol = 1e-8,
                                          double max_horizon = 400.0) {
    const ReportedEvent* last = record.last_event();
    if (!last) throw DataError("record has no reported events");
    if (last->track.outcome == AdjOutcome::Confirmed) return {1.0, 0.0, false};
    if (last->track.outcome == AdjOutcome::Rejected) return {0.0, 0.0, false};

    const auto& track = last->track;
    return absorption_from_state(model, *last, track.state_at(eta), track.state_entry_time(eta),
                                 static_cast<int>(track.transitions.size()), eta,
                                 {record.x.data(), record.x.size()}, horizon, tol, max_horizon);
}

/// Simulates an adjudication track for an event reported at start_time, by
/// thinning on the omega hazards until an outcome-mapped state is hit or the
/// window closes.
inline AdjudicationTrack simulate_adjudication(const AdjudicationModel& model,
                                               const ReportedEvent& event_stub, double start_time,
                                               double end_time, std::span<const double> x,
                                               Rng& rng) {
    AdjudicationTrack track;
    track.report_time = start_time;
    track.initial_adj_state = model.start_state;
    int state = model.start_state;
    double t = start_time;
    double entry = start_time;
    int count = 0;
    while (t < end_time) {
        const auto exits = model.adj_state_space.exits_from(state);
        if (exits.empty()) break;
        auto total_rate = [&](double s) {
            HazardContext ctx = detail::adj_ctx(event_stub, s, state, entry, count);
            double r = 0.0;
            for (int k : exits) {
                auto it = model.hazards.find({state, k});
                if (it != model.hazards.end() && !it->second.disabled)
                    r += it->second.rate(ctx, x);
            }
            return r;
        };
        std::optional<double> jump;
        double inflate = 1.5;
        for (int attempt = 0; attempt < 12; ++attempt) {
            try {
                jump = lewis_thinning(total_rate,
                                      Envelope::piecewise_grid_max(total_rate, t, end_time, 32,
                                                                   8, inflate),
                                      t, end_time, rng);
                break;
            } catch (const EnvelopeViolation&) {
                inflate *= 2.0;  // raise the bound and retry
            }
        }
        if (!jump) break;
        t = *jump;
        HazardContext ctx = detail::adj_ctx(event_stub, t, state, entry, count);
        double total = 0.0;
        std::vector<double> rates(exits.size(), 0.0);
        for (std::size_t ke = 0; ke < exits.size(); ++ke) {
            auto it = model.hazards.find({state, exits[ke]});
            if (it != model.hazards.end() && !it->second.disabled)
                rates[ke] = it->second.rate(ctx, x);
            total += rates[ke];
        }
        double u = rng.uniform01() * total;
        int next = exits.back();
        for (std::size_t ke = 0; ke < exits.size(); ++ke) {
            if (u < rates[ke]) { next = exits[ke]; break; }
            u -= rates[ke];
        }
        track.transitions.push_back({t, next});
        state = next;
        entry = t;
        ++count;
        if (auto o = model.outcome_of(state)) {
            track.outcome = *o;
            track.outcome_time = t;
            break;
        }
    }
    return track;
}

}  // namespace msdelay
