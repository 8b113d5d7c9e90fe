#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "msdelay/adjudication.hpp"
#include "msdelay/core.hpp"
#include "msdelay/likelihood.hpp"
#include "msdelay/parallel.hpp"
#include "msdelay/rng.hpp"
#include "msdelay/scenario.hpp"
#include "msdelay/thinning.hpp"

// Data generation for the benchmark scenario and construction of the dataset
// views the different estimation methods consume.

namespace msdelay {

struct SimEvent {
    double time = 0.0;
    int mark = 0;
    double delay = 0.0;
    AdjudicationTrack track;  // observed part (up to eta); trivial for unreviewed transitions
    bool reported = false;    // time + delay <= eta
    bool xi = true;           // true adjudication outcome
};

struct SimSubject {
    std::vector<double> x;
    double truncation = 0.0;
    double censoring = 0.0;
    int initial_state = 1;
    std::vector<SimEvent> events;
};

struct SimulatedData {
    ScenarioConfig cfg;
    std::vector<SimSubject> truth;
};

namespace detail_sim {

/// First jump of the total exit intensity out of `state` on (from, to], with
/// envelope doubling on the rare violation of the grid-max bound.
inline std::optional<double> next_jump(const EventModel& gen, int state, double segment_start,
                                       std::span<const double> x, double from, double to,
                                       Rng& rng) {
    const auto exits = gen.state_space.exits_from(state);
    if (exits.empty() || to <= from) return std::nullopt;
    auto total = [&](double t) {
        HazardContext ctx = HazardContext::at(t, state, segment_start);
        double r = 0.0;
        for (int k : exits) r += gen.hazards.at({state, k}).rate(ctx, x);
        return r;
    };
    double inflate = 1.5;
    for (int attempt = 0; attempt < 12; ++attempt) {
        try {
            return lewis_thinning(total,
                                  Envelope::piecewise_grid_max(total, from, to, 16, 8, inflate),
                                  from, to, rng);
        } catch (const EnvelopeViolation&) {
            inflate *= 2.0;
        }
    }
    throw NumericalError("thinning envelope could not be repaired");
}

inline int pick_mark(const EventModel& gen, int state, double segment_start,
                     std::span<const double> x, double t, Rng& rng) {
    const auto exits = gen.state_space.exits_from(state);
    HazardContext ctx = HazardContext::at(t, state, segment_start);
    std::vector<double> rates(exits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < exits.size(); ++i) {
        rates[i] = gen.hazards.at({state, exits[i]}).rate(ctx, x);
        total += rates[i];
    }
    double u = rng.uniform01() * total;
    for (std::size_t i = 0; i < exits.size(); ++i) {
        if (u < rates[i]) return exits[i];
        u -= rates[i];
    }
    return exits.back();
}

}  // namespace detail_sim

/// Simulates one subject of the benchmark scenario: covariate, truncation and
/// censoring draws, events from the generator rates on (V, C], reporting
/// delays for jumps into state 3, and the review chain for 2->3 jumps on
/// (report, eta]. The true adjudication outcome of a still-pending review is
/// drawn from its conditional confirmation probability.
inline SimSubject generate_subject(const ScenarioConfig& cfg, Rng& rng) {
    SimSubject s;
    s.x = {rng.uniform(cfg.x_min, cfg.x_max)};
    s.truncation = rng.uniform(0.0, cfg.v_max);
    s.censoring = rng.uniform(s.truncation, cfg.eta);

    const EventModel gen = sim6_generator_model(cfg.theta);
    const AdjudicationModel adj = sim6_adjudication_model(cfg.g);
    const DelayModelSet delays = sim6_delays(cfg.f);

    int state = 1;
    double t = s.truncation;
    double segment_start = 0.0;
    EventPath path(1, {});
    while (true) {
        auto jump = detail_sim::next_jump(gen, state, segment_start, s.x, t, s.censoring, rng);
        if (!jump) break;
        const double jt = *jump;
        const int mark = detail_sim::pick_mark(gen, state, segment_start, s.x, jt, rng);

        SimEvent e;
        e.time = jt;
        e.mark = mark;
        const Transition tr{state, mark};
        if (const DelayModel* dm = delays.model_for(tr)) {
            auto covs = dm->covariates(path, jt, s.x);
            e.delay = sample_delay(*dm, covs, rng);
        }
        e.reported = e.time + e.delay <= cfg.eta;

        if (tr == Transition{2, 3}) {
            const double report = e.time + e.delay;
            ReportedEvent stub{e.time, e.mark, e.delay, AdjudicationTrack{}};
            if (report <= cfg.eta) {
                e.track = simulate_adjudication(adj, stub, report, cfg.eta, s.x, rng);
                if (e.track.outcome == AdjOutcome::Confirmed) {
                    e.xi = true;
                } else {
                    stub.track = e.track;
                    auto w = absorption_from_state(adj, stub, e.track.state_at(cfg.eta),
                                                   e.track.state_entry_time(cfg.eta),
                                                   static_cast<int>(e.track.transitions.size()),
                                                   cfg.eta, {s.x.data(), s.x.size()});
                    e.xi = rng.bernoulli(w.weight);
                }
            } else {
                e.track.report_time = report;
                e.track.outcome = AdjOutcome::Pending;
                e.xi = rng.bernoulli(p_confirm(s.x[0], cfg.g));
            }
        } else {
            e.track = AdjudicationTrack::trivially_confirmed(e.time + e.delay);
            e.xi = true;
        }
        s.events.push_back(e);

        std::vector<Jump> jumps;
        for (const auto& ev : s.events) jumps.push_back({ev.time, ev.mark});
        path = EventPath(1, std::move(jumps));
        state = mark;
        segment_start = jt;
        t = jt;
        if (gen.state_space.is_absorbing(state)) break;
    }
    return s;
}

/// Simulates the whole sample; subject i draws from substream (seed, i).
inline SimulatedData generate_sample(const ScenarioConfig& cfg) {
    cfg.validate();
    SimulatedData out{cfg, std::vector<SimSubject>(cfg.n)};
    for (int i = 0; i < cfg.n; ++i) {
        Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(i));
        out.truth[i] = generate_subject(cfg, rng);
    }
    return out;
}

enum class ViewVariant { Observed, Oracle, Naive1, Naive2 };

inline const char* view_name(ViewVariant v) {
    switch (v) {
        case ViewVariant::Observed: return "observed";
        case ViewVariant::Oracle: return "oracle";
        case ViewVariant::Naive1: return "naive1";
        case ViewVariant::Naive2: return "naive2";
    }
    return "?";
}

/// Observed: reported events only, pending reviews kept. Oracle: the
/// uncontaminated confirmed-events process (no delay thinning, true outcomes
/// applied). Naive1: observed with every unrefuted event treated as confirmed.
/// Naive2: back-censored by one year with stale pending events deleted.
inline Dataset build_views(const SimulatedData& sim, ViewVariant variant) {
    Dataset out;
    out.eta = sim.cfg.eta;
    for (const auto& t : sim.truth) {
        SubjectRecord r;
        r.x = t.x;
        r.truncation = t.truncation;
        r.censoring = t.censoring;
        r.initial_state = t.initial_state;

        switch (variant) {
            case ViewVariant::Observed:
                for (const auto& e : t.events)
                    if (e.reported) r.events.push_back({e.time, e.mark, e.delay, e.track});
                break;
            case ViewVariant::Oracle:
                for (const auto& e : t.events)
                    if (e.xi)
                        r.events.push_back(
                            {e.time, e.mark, 0.0, AdjudicationTrack::trivially_confirmed(e.time)});
                break;
            case ViewVariant::Naive1:
                for (const auto& e : t.events)
                    if (e.reported)
                        r.events.push_back({e.time, e.mark, e.delay,
                                            AdjudicationTrack::trivially_confirmed(
                                                e.time + e.delay)});
                break;
            case ViewVariant::Naive2: {
                const double c2 = std::min(t.censoring, sim.cfg.eta - 1.0);
                if (t.truncation >= c2) continue;  // window vanishes
                r.censoring = c2;
                for (const auto& e : t.events) {
                    if (!e.reported || e.time > c2) continue;
                    const bool stale_pending = e.track.outcome == AdjOutcome::Pending &&
                                               sim.cfg.eta - e.track.report_time > 2.0;
                    if (stale_pending) continue;
                    r.events.push_back({e.time, e.mark, e.delay,
                                        AdjudicationTrack::trivially_confirmed(e.time + e.delay)});
                }
                break;
            }
        }
        // dropping events can strand later ones (marks must chain); the views
        // above only ever drop suffixes of the benchmark paths
        out.subjects.push_back(std::move(r));
    }
    out.validate();
    return out;
}

struct SampleSummary {
    std::map<Transition, double> generated_counts;  // per dataset
    std::map<Transition, double> observed_counts;
    double delay_mean_from1 = 0.0, delay_sd_from1 = 0.0;
    double delay_mean_from2 = 0.0, delay_sd_from2 = 0.0;
    double confirmed_fraction_23 = 0.0;   // among generated 2->3 jumps
    double model_confirm_rate = 0.0;      // E p(X) under the covariate law
    int n_pending = 0;
};

inline SampleSummary summarize(const SimulatedData& sim) {
    SampleSummary s;
    std::vector<double> d1, d2;
    int n23 = 0, conf23 = 0;
    for (const auto& t : sim.truth) {
        int state = t.initial_state;
        for (const auto& e : t.events) {
            const Transition tr{state, e.mark};
            s.generated_counts[tr] += 1.0;
            if (e.reported) s.observed_counts[tr] += 1.0;
            if (tr == Transition{1, 3}) d1.push_back(e.delay);
            if (tr == Transition{2, 3}) {
                d2.push_back(e.delay);
                ++n23;
                if (e.xi) ++conf23;
            }
            if (e.reported && e.track.outcome == AdjOutcome::Pending) ++s.n_pending;
            state = e.mark;
        }
    }
    auto moments = [](const std::vector<double>& v, double& mean, double& sd) {
        if (v.empty()) return;
        double m = 0.0;
        for (double d : v) m += d;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double d : v) ss += (d - m) * (d - m);
        mean = m;
        sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1.0)) : 0.0;
    };
    moments(d1, s.delay_mean_from1, s.delay_sd_from1);
    moments(d2, s.delay_mean_from2, s.delay_sd_from2);
    s.confirmed_fraction_23 = n23 > 0 ? static_cast<double>(conf23) / n23 : 0.0;
    s.model_confirm_rate =
        simpson([&](double x) { return p_confirm(x, sim.cfg.g); }, sim.cfg.x_min, sim.cfg.x_max,
                512) /
        (sim.cfg.x_max - sim.cfg.x_min);
    return s;
}

}  // namespace msdelay
