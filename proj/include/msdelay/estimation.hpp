#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "msdelay/adjudication.hpp"
#include "msdelay/core.hpp"
#include "msdelay/delay.hpp"
#include "msdelay/likelihood.hpp"
#include "msdelay/nelder_mead.hpp"
#include "msdelay/parallel.hpp"
#include "msdelay/prepared.hpp"
#include "msdelay/scenario.hpp"

// Two-step M-estimation: review parameters g first, then the delay parameters
// f under the imputed weights, then the event parameters theta. The theta
// objective is maximized block by block; blocks couple transitions sharing an
// origin state only when the exact (gamma-corrected) likelihood is used and
// that state has a delayed exit.

namespace msdelay {

/// Everything the pipeline needs to fit one parametric study family.
struct ModelSpec {
    // builds the event model at (theta, g, f); delay_free drops the reporting
    // delay thinning (classical fits)
    std::function<EventModel(std::span<const double> theta, std::span<const double> g,
                             std::span<const double> f, bool delay_free)>
        event_model;
    AdjudicationModel adjudication_start;

    struct DelayGroup {
        DelayModel start;
        std::vector<Transition> transitions;
    };
    std::vector<DelayGroup> delay_groups;

    int theta_dim = 0;
    std::vector<double> theta_reference;  // shape/default start (coefficients all usable)

    /// Plug-in values for hazard families that carry review parameters as
    /// hyperparameters. Empty: use the first-stage estimate g-hat (the only
    /// option on real data). The simulation benchmark pins the known values,
    /// under which the event family is exactly specified.
    std::vector<double> family_g;

    std::vector<double> family_g_or(const std::vector<double>& ghat) const {
        return family_g.empty() ? ghat : family_g;
    }
};

inline ModelSpec make_sim6_spec() {
    ModelSpec s;
    s.event_model = [](std::span<const double> th, std::span<const double> g,
                       std::span<const double> f, bool delay_free) {
        return sim6_event_model(th, g, f, delay_free);
    };
    s.adjudication_start = sim6_adjudication_model(std::vector<double>{1.0, -1.0});
    ModelSpec::DelayGroup g13{DelayModel{1.0, 1.0, {0.0}, "baseline",
                                         DelayFamily::WeibullReverseHazard},
                              {{1, 3}}};
    ModelSpec::DelayGroup g23 = g13;
    g23.transitions = {{2, 3}};
    s.delay_groups = {g13, g23};
    s.theta_dim = 7;
    s.theta_reference = std::vector<double>(7, 0.0);
    return s;
}

/// Misspecified event family (log-linear in time/duration and the raw
/// covariate); optionally also misspecified review and delay families.
inline ModelSpec make_sim6_miss_spec(bool misspecify_nuisance = false) {
    ModelSpec s;
    s.event_model = [](std::span<const double> th, std::span<const double>,
                       std::span<const double> f, bool delay_free) {
        return sim6_miss_event_model(th, f, delay_free);
    };
    if (misspecify_nuisance) {
        s.adjudication_start =
            sim6_miss_adjudication_model(std::vector<double>{0.0, 0.0, 0.0, 0.0});
        DelayModel gamma_start{1.0, 1.0, {0.0}, "baseline", DelayFamily::GammaReverseHazard};
        ModelSpec::DelayGroup g13{gamma_start, {{1, 3}}};
        ModelSpec::DelayGroup g23{gamma_start, {{2, 3}}};
        s.delay_groups = {g13, g23};
    } else {
        s.adjudication_start = sim6_adjudication_model(std::vector<double>{1.0, -1.0});
        DelayModel wb{1.0, 1.0, {0.0}, "baseline", DelayFamily::WeibullReverseHazard};
        s.delay_groups = {{wb, {{1, 3}}}, {wb, {{2, 3}}}};
    }
    s.theta_dim = 9;
    s.theta_reference = std::vector<double>(9, 0.0);
    return s;
}

struct FitResult {
    std::vector<double> g, f, theta;
    double g_objective = 0.0, f_objective = 0.0, theta_objective = 0.0;
    bool g_converged = true, f_converged = true, theta_converged = true;
    int theta_iterations = 0;
    std::string warm_start = "oe-intercepts";
    std::string method = "poisson";
    std::vector<Transition> flagged_adjudication;
    std::vector<double> weights;       // per-subject w(1, Z; g-hat)
    double max_pending_mass = 0.0;

    bool converged() const { return g_converged && f_converged && theta_converged; }
};

namespace detail_fit {

struct OETotals {
    std::map<Transition, double> occurrences;
    std::map<int, double> exposure;
};

/// Branch-weighted occurrences and exposures over (V, C], used for starting
/// values.
inline OETotals weighted_totals(const Dataset& data, const std::vector<double>& weights) {
    OETotals tot;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& r = data.subjects[i];
        const double w1 = r.has_pending() ? weights[i] : 1.0;
        for (int branch = 0; branch < 2; ++branch) {
            const double w = branch == 1 ? w1 : 1.0 - w1;
            if (w <= 0.0) continue;
            const EventPath path = r.effective_path(branch == 1);
            int state = path.initial_state();
            double start = 0.0;
            auto add = [&](double a, double b, int st) {
                const double lo = std::max(a, r.truncation);
                const double hi = std::min(b, r.censoring);
                if (hi > lo) tot.exposure[st] += w * (hi - lo);
            };
            for (const auto& j : path.jumps()) {
                add(start, j.time, state);
                if (j.time > r.truncation && j.time <= r.censoring)
                    tot.occurrences[{state, j.mark}] += w;
                state = j.mark;
                start = j.time;
            }
            add(start, r.censoring, state);
        }
    }
    return tot;
}

inline std::vector<double> theta_start_from_totals(const EventModel& shape, const OETotals& tot) {
    std::vector<double> theta;
    for (const auto& [tr, hz] : shape.hazards) {
        const auto& fam = hz.family();
        std::vector<double> block(fam.dim, 0.0);
        if (fam.intercept_index >= 0) {
            const double occ = tot.occurrences.count(tr) ? tot.occurrences.at(tr) : 0.0;
            const double expo = tot.exposure.count(tr.first) ? tot.exposure.at(tr.first) : 0.0;
            block[fam.intercept_index] =
                std::log(std::max(occ, 0.5) / std::max(expo, 1e-8));
        }
        theta.insert(theta.end(), block.begin(), block.end());
    }
    return theta;
}

/// Transition blocks of the theta objective. The gamma correction couples the
/// exits of a state once any of them is delayed, so those merge under the
/// exact likelihood; the Poisson approximation is separable per transition.
inline std::vector<std::vector<Transition>> theta_blocks(const EventModel& shape, bool exact) {
    std::vector<std::vector<Transition>> blocks;
    std::map<int, std::vector<Transition>> by_origin;
    for (const auto& [tr, hz] : shape.hazards) {
        if (hz.disabled) continue;
        by_origin[tr.first].push_back(tr);
    }
    for (auto& [origin, trs] : by_origin) {
        bool delayed = false;
        for (const auto& tr : trs) delayed = delayed || !shape.delays.delay_free(tr);
        if (exact && delayed && trs.size() > 1) {
            blocks.push_back(trs);
        } else {
            for (const auto& tr : trs) blocks.push_back({tr});
        }
    }
    return blocks;
}

/// Coefficient positions of each transition in the packed theta vector.
inline std::map<Transition, std::pair<int, int>> theta_layout(const EventModel& shape) {
    std::map<Transition, std::pair<int, int>> out;
    int pos = 0;
    for (const auto& [tr, hz] : shape.hazards) {
        const int d = hz.family().dim;
        out[tr] = {pos, d};
        pos += d;
    }
    return out;
}

/// Ordered parallel sum of per-subject contributions; work is chunked in
/// fixed blocks and combined in index order so results do not depend on the
/// number of workers.
inline double ordered_sum(int n, int jobs, const std::function<double(int)>& term) {
    constexpr int kBlock = 64;
    const int nblocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(nblocks, 0.0);
    parallel_for(nblocks, jobs, [&](int b) {
        double acc = 0.0;
        const int lo = b * kBlock, hi = std::min(n, lo + kBlock);
        for (int i = lo; i < hi; ++i) acc += term(i);
        partial[b] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

inline double ordered_sum_over(const std::vector<int>& idx, int jobs,
                               const std::function<double(int)>& term) {
    return ordered_sum(static_cast<int>(idx.size()), jobs,
                       [&](int i) { return term(idx[i]); });
}

/// One-coefficient objectives can be multimodal (plug-in hazard families have
/// spurious far basins on rare datasets); a coarse deterministic scan picks
/// the global basin before the simplex search polishes it.
inline SimplexResult maximize_block(const Objective& objective, std::vector<double> start,
                                    const OptimizerConfig& opt) {
    if (start.size() == 1) {
        double best = start[0];
        double best_val = -std::numeric_limits<double>::infinity();
        for (int k = -30; k <= 30; ++k) {
            const double cand = start[0] + 0.1 * k;
            const double v = objective({cand});
            if (std::isfinite(v) && v > best_val) {
                best_val = v;
                best = cand;
            }
        }
        start[0] = best;
    }
    return nelder_mead_maximize(objective, start, opt);
}

/// Subjects whose paths can occupy one of the given origin states inside the
/// observation window (under either imputation branch).
inline std::vector<int> subjects_touching(const Dataset& data,
                                          const std::vector<Transition>& block) {
    std::vector<int> out;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& r = data.subjects[i];
        bool rel = false;
        for (const auto& tr : block) {
            if (r.initial_state == tr.first) rel = true;
            for (const auto& e : r.events)
                if (e.mark == tr.first) rel = true;
        }
        if (rel) out.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace detail_fit

struct FitControl {
    OptimizerConfig opt;
    QuadratureConfig quad;
    int jobs = 1;
    // restrict the theta stage (and the delay groups feeding it) to the blocks
    // containing these transitions; empty = everything. Blocks are separable,
    // so restricted fits match the corresponding coordinates of a full fit.
    std::vector<Transition> focus;
};

namespace detail_fit {

inline bool focus_keeps(const FitControl& ctl, const std::vector<Transition>& trs) {
    if (ctl.focus.empty()) return true;
    for (const auto& tr : trs)
        for (const auto& f : ctl.focus)
            if (tr == f) return true;
    return false;
}

}  // namespace detail_fit

/// The full two-step pipeline: g-hat, imputation weights, f-hat, then the
/// theta stage. With use_exact the Poisson-approximation argmax seeds the
/// exact maximization.
inline FitResult two_step_fit(const Dataset& data, const ModelSpec& spec,
                              const FitControl& ctl, bool use_exact) {
    if (data.subjects.empty()) throw ConfigError("empty dataset");
    FitResult out;
    out.method = use_exact ? "exact" : "poisson";

    // (a) review-process parameters
    AdjudicationFitResult gfit;
    try {
        gfit = fit_adjudication(data, spec.adjudication_start, ctl.opt, ctl.quad);
    } catch (const std::exception& e) {
        throw NumericalError(std::string("adjudication stage: ") + e.what());
    }
    out.g = gfit.model.g();
    out.g_converged = gfit.converged;
    out.flagged_adjudication = gfit.flagged;
    out.g_objective = detail_fit::ordered_sum(
        static_cast<int>(data.subjects.size()), ctl.jobs,
        [&](int i) { return adj_loglik(data.subjects[i], gfit.model, data.eta, ctl.quad); });

    // (b) imputation weights, one per subject
    out.weights.assign(data.subjects.size(), 1.0);
    parallel_for(static_cast<int>(data.subjects.size()), ctl.jobs, [&](int i) {
        const auto& r = data.subjects[i];
        if (!r.has_pending()) return;
        auto w = absorption_weight(r, gfit.model, data.eta);
        out.weights[i] = w.weight;
        if (w.pending_mass > out.max_pending_mass) out.max_pending_mass = w.pending_mass;
    });

    const std::vector<double> plug_g = spec.family_g_or(out.g);

    // (c) delay parameters per group
    for (const auto& group : spec.delay_groups) {
        if (!detail_fit::focus_keeps(ctl, group.transitions)) {
            const auto& m = group.start;
            out.f.push_back(m.lambda);
            out.f.push_back(m.shape);
            out.f.insert(out.f.end(), m.beta.begin(), m.beta.end());
            continue;
        }
        DelayFitResult dfit;
        try {
            dfit = fit_delay_model(data, out.weights, group.start, group.transitions, ctl.opt);
        } catch (const std::exception& e) {
            throw NumericalError(std::string("delay stage: ") + e.what());
        }
        out.f.push_back(dfit.model.lambda);
        out.f.push_back(dfit.model.shape);
        out.f.insert(out.f.end(), dfit.model.beta.begin(), dfit.model.beta.end());
        out.f_objective += dfit.diagnostics.value;
        out.f_converged = out.f_converged && dfit.diagnostics.converged;
    }

    // (d) event parameters
    auto run_theta = [&](bool exact, std::vector<double> theta0, const char* tag) {
        EventModel shape = spec.event_model(theta0, plug_g, out.f, false);
        shape.set_theta(theta0);
        const auto layout = detail_fit::theta_layout(shape);
        const auto blocks = detail_fit::theta_blocks(shape, exact);
        std::vector<double> theta = theta0;
        double objective = 0.0;
        for (const auto& block : blocks) {
            if (!detail_fit::focus_keeps(ctl, block)) continue;
            // pack the block coordinates
            std::vector<std::pair<int, int>> slots;
            for (const auto& tr : block) slots.push_back(layout.at(tr));
            std::vector<double> p0;
            for (auto [pos, dim] : slots)
                p0.insert(p0.end(), theta.begin() + pos, theta.begin() + pos + dim);

            const detail_fit::PreparedTheta prepared(data, shape, out.weights, ctl.quad,
                                                     data.eta, block, exact);
            auto objective_fn = [&](const std::vector<double>& p) {
                std::vector<double> cand = theta;
                int at = 0;
                for (auto [pos, dim] : slots)
                    for (int c = 0; c < dim; ++c) cand[pos + c] = p[at++];
                try {
                    return prepared.eval(cand, data, ctl.jobs);
                } catch (const NumericalError&) {
                    return -std::numeric_limits<double>::infinity();
                }
            };
            auto res = detail_fit::maximize_block(objective_fn, p0, ctl.opt);
            int at = 0;
            for (auto [pos, dim] : slots)
                for (int c = 0; c < dim; ++c) theta[pos + c] = res.argmax[at++];
            objective += res.value;
            out.theta_iterations += res.iterations;
            out.theta_converged = out.theta_converged && res.converged;
        }
        out.theta = theta;
        out.theta_objective = objective;
        out.warm_start = tag;
    };

    const auto totals = detail_fit::weighted_totals(data, out.weights);
    EventModel shape0 = spec.event_model(std::vector<double>(spec.theta_dim, 0.0), plug_g, out.f,
                                         false);
    std::vector<double> theta0 = detail_fit::theta_start_from_totals(shape0, totals);

    run_theta(false, theta0, "oe-intercepts");
    if (use_exact) {
        // the Poisson argmax is the recommended starting value for the exact fit
        run_theta(true, out.theta, "poisson-argmax");
    }
    return out;
}

/// Classical multistate MLE (no delay thinning, all weights 1) on the dataset
/// as given; `g_hat` supplies plug-in values for hazard families that need
/// review parameters.
inline FitResult classical_fit(const Dataset& data, const ModelSpec& spec,
                               std::span<const double> g_hat, const FitControl& ctl,
                               const std::string& method_tag) {
    if (data.subjects.empty()) throw ConfigError("empty dataset");
    FitResult out;
    out.method = method_tag;
    out.g = spec.family_g_or(std::vector<double>(g_hat.begin(), g_hat.end()));
    out.weights.assign(data.subjects.size(), 1.0);
    // reference f (unused by delay-free models, kept for shape)
    for (const auto& group : spec.delay_groups) {
        out.f.push_back(group.start.lambda);
        out.f.push_back(group.start.shape);
        out.f.insert(out.f.end(), group.start.beta.begin(), group.start.beta.end());
    }

    const auto totals = detail_fit::weighted_totals(data, out.weights);
    EventModel shape = spec.event_model(std::vector<double>(spec.theta_dim, 0.0), out.g, out.f,
                                        true);
    std::vector<double> theta = detail_fit::theta_start_from_totals(shape, totals);
    const auto layout = detail_fit::theta_layout(shape);
    double objective = 0.0;
    std::vector<double> w1(data.subjects.size(), 1.0);
    for (const auto& block : detail_fit::theta_blocks(shape, false)) {
        if (!detail_fit::focus_keeps(ctl, block)) continue;
        const detail_fit::PreparedTheta prepared(data, shape, w1, ctl.quad, data.eta, block,
                                                 false);
        auto [pos, dim] = layout.at(block.front());
        std::vector<double> p0(theta.begin() + pos, theta.begin() + pos + dim);
        auto objective_fn = [&](const std::vector<double>& p) {
            std::vector<double> cand = theta;
            for (int c = 0; c < dim; ++c) cand[pos + c] = p[c];
            try {
                return prepared.eval(cand, data, ctl.jobs);
            } catch (const NumericalError&) {
                return -std::numeric_limits<double>::infinity();
            }
        };
        auto res = detail_fit::maximize_block(objective_fn, p0, ctl.opt);
        for (int c = 0; c < dim; ++c) theta[pos + c] = res.argmax[c];
        objective += res.value;
        out.theta_iterations += res.iterations;
        out.theta_converged = out.theta_converged && res.converged;
    }
    out.theta = theta;
    out.theta_objective = objective;
    return out;
}

enum class NaiveVariant { Naive1, Naive2 };

/// Back-censoring transform: censoring set back one year, events beyond the
/// new window dropped, reviews pending for over two years dropped.
inline Dataset apply_naive2(const Dataset& data) {
    Dataset out;
    out.eta = data.eta;
    for (const auto& r : data.subjects) {
        const double c2 = std::min(r.censoring, data.eta - 1.0);
        if (r.truncation >= c2) continue;
        SubjectRecord n = r;
        n.censoring = c2;
        n.events.clear();
        for (const auto& e : r.events) {
            if (e.time > c2) continue;
            if (e.track.outcome == AdjOutcome::Pending &&
                data.eta - e.track.report_time > 2.0)
                continue;
            n.events.push_back(e);
        }
        out.subjects.push_back(std::move(n));
    }
    return out;
}

/// Naive baselines: classical MLE treating every unrefuted reported event as
/// a real event (Naive1), or after back-censoring by one year (Naive2). The
/// review parameters are still estimated from the full tracks, since plug-in
/// hazard families may need them.
inline FitResult naive_fit(const Dataset& data, NaiveVariant variant, const ModelSpec& spec,
                           const FitControl& ctl) {
    AdjudicationFitResult gfit = fit_adjudication(data, spec.adjudication_start, ctl.opt,
                                                  ctl.quad);
    const Dataset* view = &data;
    Dataset transformed;
    if (variant == NaiveVariant::Naive2) {
        transformed = apply_naive2(data);
        view = &transformed;
    }
    FitResult out = classical_fit(*view, spec, gfit.model.g(), ctl,
                                  variant == NaiveVariant::Naive1 ? "naive1" : "naive2");
    out.flagged_adjudication = gfit.flagged;
    out.g_converged = gfit.converged;
    return out;
}

// ---------------------------------------------------------------------------
// Efron bootstrap with percentile intervals

struct BootstrapResult {
    int requested = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> theta_rows;  // one row per successful resample
    std::vector<double> levels;                   // confidence levels
    // intervals[l][k] = {lo, hi} for level l, theta coordinate k
    std::vector<std::vector<std::pair<double, double>>> intervals;
    int failures = 0;

    double failure_rate() const {
        return requested > 0 ? static_cast<double>(failures) / requested : 0.0;
    }
};

/// Percentile interval endpoints as order statistics of the resample column.
inline std::pair<double, double> percentile_interval(std::vector<double> column, double level) {
    std::sort(column.begin(), column.end());
    const double alpha = 1.0 - level;
    const int b = static_cast<int>(column.size());
    int lo = static_cast<int>(std::floor(alpha / 2.0 * b));
    int hi = static_cast<int>(std::ceil((1.0 - alpha / 2.0) * b)) - 1;
    lo = std::min(std::max(lo, 0), b - 1);
    hi = std::min(std::max(hi, lo), b - 1);
    return {column[lo], column[hi]};
}

/// Draws B with-replacement resamples of subjects and reruns the full
/// two-step pipeline on each; failed refits are dropped and counted.
inline BootstrapResult bootstrap_fit(const Dataset& data, const ModelSpec& spec,
                                     int B, std::uint64_t seed, const FitControl& ctl,
                                     bool use_exact,
                                     std::vector<double> levels = {0.90, 0.95, 0.99},
                                     int outer_jobs = 1) {
    if (B < 1) throw ConfigError("bootstrap needs B >= 1");
    BootstrapResult out;
    out.requested = B;
    out.seed = seed;
    out.levels = std::move(levels);

    const int n = static_cast<int>(data.subjects.size());
    std::vector<std::vector<double>> rows(B);
    std::vector<char> ok(B, 0);
    parallel_for(B, outer_jobs, [&](int b) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(b));
        Dataset resample;
        resample.eta = data.eta;
        resample.subjects.reserve(n);
        for (int i = 0; i < n; ++i) {
            const int idx = std::min(n - 1, static_cast<int>(rng.uniform01() * n));
            resample.subjects.push_back(data.subjects[idx]);
        }
        try {
            FitControl inner = ctl;
            inner.jobs = 1;
            FitResult fit = two_step_fit(resample, spec, inner, use_exact);
            rows[b] = fit.theta;
            ok[b] = 1;
        } catch (const std::exception&) {
            ok[b] = 0;
        }
    });
    for (int b = 0; b < B; ++b) {
        if (ok[b]) out.theta_rows.push_back(std::move(rows[b]));
        else ++out.failures;
    }
    if (out.theta_rows.empty()) throw NumericalError("every bootstrap refit failed");

    const std::size_t dim = out.theta_rows.front().size();
    out.intervals.assign(out.levels.size(), {});
    for (std::size_t l = 0; l < out.levels.size(); ++l) {
        out.intervals[l].resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            std::vector<double> column;
            column.reserve(out.theta_rows.size());
            for (const auto& row : out.theta_rows) column.push_back(row[k]);
            out.intervals[l][k] = percentile_interval(std::move(column), out.levels[l]);
        }
    }
    return out;
}

}  // namespace msdelay
