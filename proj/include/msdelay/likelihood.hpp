#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/delay.hpp"
#include "msdelay/hazard.hpp"
#include "msdelay/quadrature.hpp"

// Likelihoods for the parameter of interest. The observed (thinned) process
// has intensity mu_jk = gamma_j * nu_jk where nu_jk deflates the model hazard
// mu*_jk by the probability that a jump at t to k would be reported by eta,
// and gamma_j renormalizes for the conditioning on the current segment having
// been reported. The Poisson approximation keeps nu in the exposure but scores
// jumps with mu*, dropping gamma.

namespace msdelay {

struct EventModel {
    StateSpace state_space;
    std::map<Transition, LogLinearHazard> hazards;  // mu*_jk per allowed transition
    DelayModelSet delays;

    EventModel(StateSpace ss, std::map<Transition, LogLinearHazard> hz, DelayModelSet d)
        : state_space(std::move(ss)), hazards(std::move(hz)), delays(std::move(d)) {
        for (const auto& [tr, h] : hazards)
            if (!state_space.allows(tr.first, tr.second))
                throw ConfigError("hazard declared for a transition outside the state space");
    }

    // disabled hazards keep their coefficient slots so the theta layout is stable
    int theta_dim() const {
        int d = 0;
        for (const auto& [tr, h] : hazards) d += h.family().dim;
        return d;
    }

    std::vector<double> theta() const {
        std::vector<double> out;
        for (const auto& [tr, h] : hazards)
            out.insert(out.end(), h.coefficients.begin(), h.coefficients.end());
        return out;
    }

    void set_theta(std::span<const double> theta) {
        std::size_t pos = 0;
        for (auto& [tr, h] : hazards) {
            const std::size_t d = h.family().dim;
            if (pos + d > theta.size()) throw ConfigError("theta vector too short");
            h.coefficients.assign(theta.begin() + pos, theta.begin() + pos + d);
            pos += d;
        }
        if (pos != theta.size()) throw ConfigError("theta vector has wrong length");
    }

    bool all_delay_free() const { return delays.models.empty(); }
};

/// Restricts likelihood evaluation to a subset of transitions (parameter
/// blocks factorize across these subsets); empty means all transitions.
struct TransitionFilter {
    std::vector<Transition> keep;  // sorted

    bool pass(const Transition& tr) const {
        return keep.empty() || std::binary_search(keep.begin(), keep.end(), tr);
    }
    static TransitionFilter all() { return {}; }
    static TransitionFilter of(std::vector<Transition> trs) {
        std::sort(trs.begin(), trs.end());
        return {std::move(trs)};
    }
};

namespace detail {

struct Segment {
    int state = 1;
    double start = 0.0;   // time the state was entered (0 for the initial segment)
    double end = 0.0;     // jump time, or C when censored in this state
    std::optional<int> jump_to;
    std::optional<int> prior_state;  // state occupied before `start` (absent initially)
};

inline std::vector<Segment> segments_of(const EventPath& path, double censoring) {
    std::vector<Segment> segs;
    int state = path.initial_state();
    double start = 0.0;
    std::optional<int> prior;
    for (const auto& j : path.jumps()) {
        if (j.time > censoring) break;  // defensive; events lie in (V, C]
        segs.push_back({state, start, j.time, j.mark, prior});
        prior = state;
        state = j.mark;
        start = j.time;
    }
    segs.push_back({state, start, censoring, std::nullopt, prior});
    return segs;
}

/// Reporting-probability values at the quadrature nodes of one segment. The
/// delay parameters are frozen during the theta stage, so these are filled on
/// the first pass and reused across optimizer iterations.
struct SegmentDelayCache {
    std::vector<std::vector<double>> pru_main;    // per exit, per main node
    std::vector<std::vector<double>> pru_prefix;  // per exit, per prefix node
    double prior_factor = 1.0;
    double jump_pru = -1.0;     // sentinel: not yet stored
    bool filled = false;        // some pass has visited this segment
    bool prior_filled = false;  // prior_factor comes from the exact pass
};

struct BranchDelayCache {
    std::vector<SegmentDelayCache> segments;  // indexed by segment position
};

/// Per-segment quadrature tables for the exact likelihood. Nodes cover
/// [start, exposure_from] (prefix, needed because the gamma integrals run from
/// the segment start even when observation begins later) and
/// [exposure_from, end] (main range carrying exposure).
struct SegmentTables {
    UniformGrid main;                  // [a, b]
    std::vector<double> pstar;         // P*(t_i) on main nodes
    std::vector<double> cum_p_nu;      // int_{s0}^{t_i} P* nu_j. ds on main nodes
    std::vector<double> cum_p_mu;      // same with mu*_j. (numerator cross-check)
    double prior_factor = 1.0;         // pr_U(eta - s0) of the segment-creating jump
    std::vector<std::vector<double>> nu_k;    // per exit k: nu_jk(t_i)
    std::vector<std::vector<double>> mu_k;    // per exit k: mu*_jk(t_i)
    std::vector<int> exits;

    // numerator 1 - int P* mu*_j. and denominator share the quadrature weights,
    // so the errors largely cancel and gamma_check <= 1 holds structurally;
    // pstar carries the calculus identity P*(t) = 1 - int P* mu*_j. as a check
    double gamma_at(int i) const {
        const double denom = prior_factor - cum_p_nu[i];
        if (!(denom > 0.0))
            throw NumericalError("gamma denominator is not positive; quadrature too coarse or "
                                 "model pathological");
        return (1.0 - cum_p_mu[i]) / denom;
    }
};

inline HazardContext segment_ctx(const Segment& seg, double t) {
    return HazardContext::at(t, seg.state, seg.start);
}

inline SegmentTables build_segment_tables(const EventModel& model, const EventPath& path,
                                          std::span<const double> x, const Segment& seg,
                                          double exposure_from, double eta,
                                          const QuadratureConfig& quad,
                                          SegmentDelayCache* dcache = nullptr) {
    SegmentTables tab;
    tab.exits = model.state_space.exits_from(seg.state);
    const double a = std::max(seg.start, exposure_from);
    tab.main = UniformGrid(a, seg.end, quad.subintervals_per_segment);

    if (dcache && dcache->prior_filled) {
        tab.prior_factor = dcache->prior_factor;
    } else {
        if (seg.prior_state) {
            const Transition creator{*seg.prior_state, seg.state};
            tab.prior_factor = model.delays.pr_u(creator, eta - seg.start, path, seg.start, x);
            if (tab.prior_factor <= 0.0)
                throw NumericalError("segment-creating jump has zero reporting probability");
        }
        if (dcache) {
            dcache->prior_factor = tab.prior_factor;
            dcache->prior_filled = true;
        }
    }

    // whether the whole exit intensity has closed-form cumulatives
    bool analytic = true;
    for (int k : tab.exits) {
        auto it = model.hazards.find({seg.state, k});
        if (it == model.hazards.end()) throw ConfigError("missing hazard for allowed transition");
        if (!it->second.family().cumulative && !it->second.disabled) analytic = false;
    }

    auto hazard_of = [&](int k) -> const LogLinearHazard& {
        return model.hazards.at({seg.state, k});
    };

    // prefix grid [start, a] feeding the cumulative integrals
    const bool has_prefix = a > seg.start + 1e-15;
    UniformGrid prefix(seg.start, a, has_prefix ? quad.subintervals_per_segment : 0);

    auto fill = [&](const UniformGrid& g, std::vector<double>& mu_tot,
                    std::vector<std::vector<double>>& mu_by_k,
                    std::vector<std::vector<double>>& nu_by_k,
                    std::vector<std::vector<double>>* pru_store) {
        const int m = g.nodes();
        mu_tot.assign(m, 0.0);
        mu_by_k.assign(tab.exits.size(), std::vector<double>(m, 0.0));
        nu_by_k.assign(tab.exits.size(), std::vector<double>(m, 0.0));
        const bool have = pru_store && pru_store->size() == tab.exits.size() &&
                          !pru_store->empty() &&
                          (*pru_store)[0].size() == static_cast<std::size_t>(m);
        if (pru_store && !have)
            pru_store->assign(tab.exits.size(), std::vector<double>(m, 1.0));
        for (int i = 0; i < m; ++i) {
            const double t = g.node(i);
            HazardContext ctx = segment_ctx(seg, t);
            for (std::size_t ke = 0; ke < tab.exits.size(); ++ke) {
                const int k = tab.exits[ke];
                const double mu = hazard_of(k).rate(ctx, x);
                double pu;
                if (have) {
                    pu = (*pru_store)[ke][i];
                } else {
                    pu = model.delays.pr_u({seg.state, k}, eta - t, path, t, x);
                    if (pru_store) (*pru_store)[ke][i] = pu;
                }
                mu_by_k[ke][i] = mu;
                nu_by_k[ke][i] = mu * pu;
                mu_tot[i] += mu;
            }
        }
    };

    // cumulative exit hazard at grid nodes -> P*
    auto cum_exit = [&](const UniformGrid& g, const std::vector<double>& mu_tot,
                        std::vector<double>& out) {
        const int m = g.nodes();
        out.assign(m, 0.0);
        if (analytic) {
            HazardContext ctx = segment_ctx(seg, g.a);
            for (int i = 0; i < m; ++i) {
                double c = 0.0;
                for (int k : tab.exits) c += hazard_of(k).cumulative(seg.start, g.node(i), ctx, x, quad);
                out[i] = c;
            }
        } else {
            out = cumulative_simpson(mu_tot, g.h);
        }
    };

    // cum_exit integrates from seg.start in the analytic branch but from the
    // grid origin in the numeric branch; pre_lambda bridges the difference.
    std::vector<double> pre_mu_tot, pre_cum;
    std::vector<std::vector<double>> pre_mu_k, pre_nu_k;
    double pre_lambda = 0.0, pre_p_nu = 0.0, pre_p_mu = 0.0;
    if (has_prefix) {
        fill(prefix, pre_mu_tot, pre_mu_k, pre_nu_k, dcache ? &dcache->pru_prefix : nullptr);
        cum_exit(prefix, pre_mu_tot, pre_cum);
        pre_lambda = pre_cum.back();
        const int m = prefix.nodes();
        std::vector<double> p_nu(m, 0.0), p_mu(m, 0.0);
        for (int i = 0; i < m; ++i) {
            const double ps = std::exp(-pre_cum[i]);
            double nu_tot = 0.0;
            for (auto& v : pre_nu_k) nu_tot += v[i];
            p_nu[i] = ps * nu_tot;
            p_mu[i] = ps * pre_mu_tot[i];
        }
        pre_p_nu = integrate_nodes(p_nu, prefix.h);
        pre_p_mu = integrate_nodes(p_mu, prefix.h);
    }

    std::vector<double> mu_tot, cum;
    fill(tab.main, mu_tot, tab.mu_k, tab.nu_k, dcache ? &dcache->pru_main : nullptr);
    cum_exit(tab.main, mu_tot, cum);

    const int m = tab.main.nodes();
    tab.pstar.assign(m, 0.0);
    std::vector<double> p_nu(m, 0.0), p_mu(m, 0.0);
    for (int i = 0; i < m; ++i) {
        const double full_cum = analytic ? cum[i] : pre_lambda + cum[i];
        tab.pstar[i] = std::exp(-full_cum);
        double nu_tot = 0.0;
        for (auto& v : tab.nu_k) nu_tot += v[i];
        p_nu[i] = tab.pstar[i] * nu_tot;
        p_mu[i] = tab.pstar[i] * mu_tot[i];
    }
    tab.cum_p_nu = cumulative_simpson(p_nu, tab.main.h);
    tab.cum_p_mu = cumulative_simpson(p_mu, tab.main.h);
    for (int i = 0; i < m; ++i) {
        tab.cum_p_nu[i] += pre_p_nu;
        tab.cum_p_mu[i] += pre_p_mu;
    }
    return tab;
}

/// gamma_j == 1 identically when every exit is delay-free and the segment was
/// not created by a delayed jump; such segments take the classical form.
inline bool segment_is_delay_free(const EventModel& model, const Segment& seg,
                                  const std::vector<int>& exits) {
    for (int k : exits)
        if (!model.delays.delay_free({seg.state, k})) return false;
    if (seg.prior_state && !model.delays.delay_free({*seg.prior_state, seg.state})) return false;
    return true;
}

inline const detail::Segment& segment_containing(const std::vector<Segment>& segs, double t) {
    for (const auto& s : segs)
        if (t > s.start && t <= s.end) return s;
    if (t <= segs.front().start) return segs.front();
    return segs.back();
}

}  // namespace detail

/// P*(t): survival probability in the current state since the segment start.
inline double survival_in_state(const EventModel& model, const EventPath& path,
                                std::span<const double> x, double t,
                                const QuadratureConfig& quad) {
    const double s0 = path.segment_start(t);
    const int j = path.state_at(t);
    HazardContext ctx = HazardContext::at(t, j, s0);
    double cum = 0.0;
    for (int k : model.state_space.exits_from(j))
        cum += model.hazards.at({j, k}).cumulative(s0, t, ctx, x, quad);
    return std::exp(-cum);
}

/// nu_jk(t) = mu*_jk(t) * pr_U(eta - t; jump to k at t).
inline double weighted_hazard(const EventModel& model, const EventPath& path,
                              std::span<const double> x, double t, int k, double eta) {
    const int j = path.state_at(t);
    if (!model.state_space.allows(j, k))
        throw DataError("occupied state does not allow the requested transition");
    HazardContext ctx = HazardContext::at(t, j, path.segment_start(t));
    const double mu = model.hazards.at({j, k}).rate(ctx, x);
    return mu * model.delays.pr_u({j, k}, eta - t, path, t, x);
}

enum class GammaVariant { Exact, IgnorePriorDelay };

struct GammaDiagnostics {
    double numerator_identity = 0.0;    // P*(t)
    double numerator_quadrature = 0.0;  // 1 - int P* mu*_j.
    double denominator = 0.0;
};

/// gamma_j(t) from the thinned-intensity representation; the IgnorePriorDelay
/// variant replaces the prior jump's reporting factor by 1.
inline double gamma_correction(const EventModel& model, const EventPath& path,
                               std::span<const double> x, double t, double eta,
                               const QuadratureConfig& quad,
                               GammaVariant variant = GammaVariant::Exact,
                               GammaDiagnostics* diag = nullptr) {
    auto segs = detail::segments_of(path, std::max(t, path.segment_start(t)));
    const auto& seg = detail::segment_containing(segs, t);
    detail::Segment clipped = seg;
    clipped.end = t;
    clipped.jump_to.reset();
    auto tab = detail::build_segment_tables(model, path, x, clipped, clipped.start, eta, quad);
    if (variant == GammaVariant::IgnorePriorDelay) tab.prior_factor = 1.0;
    const int last = tab.main.nodes() - 1;
    if (diag) {
        diag->numerator_identity = tab.pstar[last];
        diag->numerator_quadrature = 1.0 - tab.cum_p_mu[last];
        diag->denominator = tab.prior_factor - tab.cum_p_nu[last];
    }
    if (detail::segment_is_delay_free(model, clipped, tab.exits) &&
        variant == GammaVariant::Exact)
        return 1.0;
    if (variant == GammaVariant::IgnorePriorDelay) {
        bool exits_free = true;
        for (int k : tab.exits) exits_free = exits_free && model.delays.delay_free({seg.state, k});
        if (exits_free) return 1.0;
    }
    return tab.gamma_at(last);
}

namespace detail {

inline double log_guarded(double v) {
    return std::log(std::max(v, 1e-300));
}

inline std::span<const double> x_of(const SubjectRecord& r) { return {r.x.data(), r.x.size()}; }

/// Shared likelihood walker. `exact` toggles the gamma-corrected likelihood
/// versus the Poisson approximation. The optional cache holds the reporting
/// probabilities at the quadrature nodes; it must be filled by an unfiltered
/// pass (any filtered evaluation after that reuses the stored values).
inline double theta_loglik(const SubjectRecord& record, const EventModel& model,
                           bool include_last, bool exact, double eta,
                           const QuadratureConfig& quad, const TransitionFilter& filter,
                           BranchDelayCache* cache = nullptr) {
    const EventPath path = record.effective_path(include_last);
    const std::vector<Segment> segs = segments_of(path, record.censoring);
    double ll = 0.0;
    const bool cache_hit = cache && !cache->segments.empty();
    if (cache && !cache_hit) cache->segments.resize(segs.size());

    for (std::size_t si = 0; si < segs.size(); ++si) {
        const auto& seg = segs[si];
        SegmentDelayCache* dc = cache ? &cache->segments[si] : nullptr;
        if (seg.end <= record.truncation) continue;  // fully unobserved
        const auto exits = model.state_space.exits_from(seg.state);
        if (exits.empty()) continue;
        const double a = std::max(seg.start, record.truncation);

        bool any_kept = false;
        for (int k : exits) any_kept = any_kept || filter.pass({seg.state, k});
        const bool jump_kept =
            seg.jump_to && model.state_space.allows(seg.state, *seg.jump_to) &&
            filter.pass({seg.state, *seg.jump_to});
        if (!any_kept && !jump_kept && cache_hit) continue;
        if (!any_kept && !jump_kept && !cache) continue;

        if (!exact || segment_is_delay_free(model, seg, exits)) {
            // exposure: - int nu_jk; jumps scored with log mu*_jk
            HazardContext ctx = segment_ctx(seg, a);
            if (dc && !dc->filled) dc->pru_main.assign(exits.size(), {});
            for (std::size_t ke = 0; ke < exits.size(); ++ke) {
                const int k = exits[ke];
                const Transition tr{seg.state, k};
                const bool kept = filter.pass(tr);
                if (!kept && (!dc || dc->filled)) continue;
                const auto& hz = model.hazards.at(tr);
                if (hz.disabled) continue;
                if (model.delays.delay_free(tr)) {
                    if (kept) ll -= hz.cumulative(a, seg.end, ctx, x_of(record), quad);
                } else {
                    UniformGrid g(a, seg.end, quad.subintervals_per_segment);
                    const bool have = dc && dc->filled && !dc->pru_main[ke].empty();
                    if (dc && !dc->filled) dc->pru_main[ke].assign(g.nodes(), 1.0);
                    std::vector<double> vals(g.nodes(), 0.0);
                    for (int i = 0; i < g.nodes(); ++i) {
                        const double t = g.node(i);
                        HazardContext c = segment_ctx(seg, t);
                        double pu;
                        if (have) {
                            pu = dc->pru_main[ke][i];
                        } else {
                            pu = model.delays.pr_u(tr, eta - t, path, t, x_of(record));
                            if (dc && !dc->filled) dc->pru_main[ke][i] = pu;
                        }
                        vals[i] = hz.rate(c, x_of(record)) * pu;
                    }
                    if (kept) ll -= integrate_nodes(vals, g.h);
                }
            }
            if (seg.jump_to && filter.pass({seg.state, *seg.jump_to})) {
                if (!model.state_space.allows(seg.state, *seg.jump_to))
                    throw DataError("recorded jump not allowed by the state space");
                HazardContext cj = segment_ctx(seg, seg.end);
                ll += log_guarded(model.hazards.at({seg.state, *seg.jump_to}).rate(cj, x_of(record)));
            }
            if (dc) dc->filled = true;
            continue;
        }

        // exact: gamma-corrected intensities
        auto tab = build_segment_tables(model, path, x_of(record), seg, a, eta, quad, dc);
        const int m = tab.main.nodes();
        for (std::size_t ke = 0; ke < tab.exits.size(); ++ke) {
            const Transition tr{seg.state, tab.exits[ke]};
            if (!filter.pass(tr)) continue;
            std::vector<double> vals(m, 0.0);
            for (int i = 0; i < m; ++i) vals[i] = tab.gamma_at(i) * tab.nu_k[ke][i];
            ll -= integrate_nodes(vals, tab.main.h);
        }
        if (seg.jump_to && filter.pass({seg.state, *seg.jump_to})) {
            if (!model.state_space.allows(seg.state, *seg.jump_to))
                throw DataError("recorded jump not allowed by the state space");
            const double gamma_end = tab.gamma_at(m - 1);
            HazardContext cj = segment_ctx(seg, seg.end);
            const double mu = model.hazards.at({seg.state, *seg.jump_to}).rate(cj, x_of(record));
            double pu;
            if (dc && dc->jump_pru >= 0.0) {
                pu = dc->jump_pru;
            } else {
                pu = model.delays.pr_u({seg.state, *seg.jump_to}, eta - seg.end, path, seg.end,
                                       x_of(record));
                if (dc) dc->jump_pru = pu;
            }
            ll += log_guarded(gamma_end * mu * pu);
        }
        if (dc) dc->filled = true;
    }
    return ll;
}

}  // namespace detail

/// Exact log-likelihood for one subject (Lemma-style gamma-corrected
/// intensities); include_last = false removes the last reported jump and
/// extends exposure in its origin state to C.
inline double exact_loglik(const SubjectRecord& record, const EventModel& model,
                           bool include_last, const QuadratureConfig& quad, double eta,
                           const TransitionFilter& filter = TransitionFilter::all(),
                           detail::BranchDelayCache* cache = nullptr) {
    return detail::theta_loglik(record, model, include_last, true, eta, quad, filter, cache);
}

/// Poisson-approximation log-likelihood: jump terms log mu*, exposure with nu,
/// no gamma correction.
inline double approx_loglik(const SubjectRecord& record, const EventModel& model,
                            bool include_last, const QuadratureConfig& quad, double eta,
                            const TransitionFilter& filter = TransitionFilter::all(),
                            detail::BranchDelayCache* cache = nullptr) {
    return detail::theta_loglik(record, model, include_last, false, eta, quad, filter, cache);
}

/// Convex combination of the adjudication branches of the last reported jump.
inline double imputed_loglik(const SubjectRecord& record, const EventModel& model, double w1,
                             bool exact, const QuadratureConfig& quad, double eta,
                             const TransitionFilter& filter = TransitionFilter::all(),
                             detail::BranchDelayCache* cache_incl = nullptr,
                             detail::BranchDelayCache* cache_excl = nullptr) {
    if (w1 < 0.0 || w1 > 1.0) throw ConfigError("imputation weight must lie in [0,1]");
    auto branch = [&](bool incl) {
        return detail::theta_loglik(record, model, incl, exact, eta, quad, filter,
                                    incl ? cache_incl : cache_excl);
    };
    if (w1 >= 1.0) return branch(true);
    if (w1 <= 0.0) return branch(false);
    return (1.0 - w1) * branch(false) + w1 * branch(true);
}

/// Upper envelope for |mu_check - nu| at t: D(t-) times the squared sup of the
/// total exit intensity over [t - D(t-), t] (sup taken on the quadrature grid).
inline double poisson_error_bound(const EventModel& model, const EventPath& path,
                                  std::span<const double> x, double t,
                                  const QuadratureConfig& quad) {
    const double s0 = path.segment_start(t);
    const double d = t - s0;
    if (d <= 0.0) return 0.0;
    const int j = path.state_at(t);
    const auto exits = model.state_space.exits_from(j);
    UniformGrid g(s0, t, quad.subintervals_per_segment);
    double sup = 0.0;
    for (int i = 0; i < g.nodes(); ++i) {
        HazardContext ctx = HazardContext::at(g.node(i), j, s0);
        double tot = 0.0;
        for (int k : exits) tot += model.hazards.at({j, k}).rate(ctx, x);
        sup = std::max(sup, tot);
    }
    return d * sup * sup;
}

}  // namespace msdelay
