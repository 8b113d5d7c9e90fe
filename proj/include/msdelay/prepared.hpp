#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "msdelay/likelihood.hpp"
#include "msdelay/parallel.hpp"

// Flattened theta objective for the optimizer loops: node times, log-linear
// feature rows and reporting probabilities are extracted once per fit stage,
// so an objective evaluation only recomputes the theta-dependent parts.
// Results match the reference walkers in likelihood.hpp; the unit tests pin
// the agreement.

namespace msdelay {
namespace detail_fit {

struct PreparedExit {
    Transition tr{0, 0};
    const HazardFamily* family = nullptr;
    std::vector<double> hyper;
    int slot = 0, dim = 0;        // packed-theta coordinates
    bool delay_free = true;
    bool in_filter = true;        // contributes terms (gamma still needs the rest)
    std::vector<double> feat_main, feat_prefix;  // node-major rows, loglinear only
    std::vector<double> pru_main, pru_prefix;
};

struct PreparedSegment {
    int state = 0;
    double start = 0.0, a = 0.0, b = 0.0;
    std::vector<double> t_main, t_prefix;
    double h_main = 0.0, h_prefix = 0.0;
    std::vector<PreparedExit> exits;
    int jump_exit = -1;           // exit index of the segment-ending jump
    double jump_pru = 1.0;
    double prior_factor = 1.0;
    bool classical = false;       // delay-free segment: gamma == 1
    bool all_analytic = true;
};

struct PreparedItem {
    int subject = 0;
    double weight = 1.0;
    std::vector<PreparedSegment> segments;
};

class PreparedTheta {
  public:
    /// `shape` carries the fitted delay models and hyperparameters; its
    /// coefficient values are irrelevant. `block` lists the transitions whose
    /// terms are accumulated (their origin-state companions are still
    /// prepared where the gamma correction needs them).
    PreparedTheta(const Dataset& data, const EventModel& shape,
                  const std::vector<double>& weights, const QuadratureConfig& quad, double eta,
                  const std::vector<Transition>& block, bool exact)
        : eta_(eta), exact_(exact), nsub_(static_cast<int>(data.subjects.size())) {
        const TransitionFilter filter = TransitionFilter::of(block);
        for (int i = 0; i < nsub_; ++i) {
            const auto& r = data.subjects[i];
            const double w1 = r.has_pending() ? weights[i] : 1.0;
            if (w1 > 0.0) add_item(r, i, shape, quad, filter, true, w1);
            if (w1 < 1.0) add_item(r, i, shape, quad, filter, false, 1.0 - w1);
        }
    }

    double eval(std::span<const double> theta, const Dataset& data, int jobs) const {
        constexpr int kBlock = 16;
        const int nitems = static_cast<int>(items_.size());
        const int nblocks = (nitems + kBlock - 1) / kBlock;
        std::vector<double> partial(nblocks, 0.0);
        parallel_for(nblocks, jobs, [&](int blk) {
            double acc = 0.0;
            const int lo = blk * kBlock, hi = std::min(nitems, lo + kBlock);
            for (int it = lo; it < hi; ++it)
                acc += items_[it].weight * eval_item(items_[it], theta, data);
            partial[blk] = acc;
        });
        double total = 0.0;
        for (double p : partial) total += p;
        return total;
    }

    bool empty() const { return items_.empty(); }

  private:
    double eta_;
    bool exact_;
    int nsub_;
    std::vector<PreparedItem> items_;

    static void fill_features(const HazardFamily& fam, const PreparedSegment& seg,
                              const std::vector<double>& ts, std::span<const double> x,
                              std::vector<double>& out) {
        if (fam.custom_rate) return;  // evaluated directly
        out.assign(ts.size() * fam.dim, 0.0);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            HazardContext ctx = HazardContext::at(ts[i], seg.state, seg.start);
            fam.features(ctx, x, {out.data() + i * fam.dim, static_cast<std::size_t>(fam.dim)});
        }
    }

    void add_item(const SubjectRecord& r, int index, const EventModel& shape,
                  const QuadratureConfig& quad, const TransitionFilter& filter,
                  bool include_last, double weight) {
        const EventPath path = r.effective_path(include_last);
        const auto segs = detail::segments_of(path, r.censoring);
        const auto layout = [&] {
            std::map<Transition, std::pair<int, int>> m;
            int pos = 0;
            for (const auto& [tr, hz] : shape.hazards) {
                m[tr] = {pos, hz.family().dim};
                pos += hz.family().dim;
            }
            return m;
        }();

        PreparedItem item;
        item.subject = index;
        item.weight = weight;
        for (const auto& seg : segs) {
            if (seg.end <= r.truncation) continue;
            const auto exits = shape.state_space.exits_from(seg.state);
            if (exits.empty()) continue;
            bool any_kept = false;
            for (int k : exits) any_kept = any_kept || filter.pass({seg.state, k});
            const bool jump_kept = seg.jump_to && filter.pass({seg.state, *seg.jump_to});
            if (!any_kept && !jump_kept) continue;

            PreparedSegment ps;
            ps.state = seg.state;
            ps.start = seg.start;
            ps.a = std::max(seg.start, r.truncation);
            ps.b = seg.end;
            ps.classical = !exact_ || detail::segment_is_delay_free(shape, seg, exits);
            const int n = quad.subintervals_per_segment;
            UniformGrid main(ps.a, ps.b, n);
            ps.h_main = main.h;
            for (int i = 0; i <= n; ++i) ps.t_main.push_back(main.node(i));
            if (!ps.classical && ps.a > ps.start + 1e-15) {
                UniformGrid prefix(ps.start, ps.a, n);
                ps.h_prefix = prefix.h;
                for (int i = 0; i <= n; ++i) ps.t_prefix.push_back(prefix.node(i));
            }

            for (std::size_t ke = 0; ke < exits.size(); ++ke) {
                const Transition tr{seg.state, exits[ke]};
                const auto& hz = shape.hazards.at(tr);
                PreparedExit pe;
                pe.tr = tr;
                pe.family = &hz.family();
                pe.hyper = hz.hyper;
                pe.slot = layout.at(tr).first;
                pe.dim = layout.at(tr).second;
                pe.delay_free = shape.delays.delay_free(tr);
                pe.in_filter = filter.pass(tr) && !hz.disabled;
                ps.all_analytic = ps.all_analytic && static_cast<bool>(pe.family->cumulative);
                fill_features(*pe.family, ps, ps.t_main, r.x, pe.feat_main);
                if (!ps.t_prefix.empty())
                    fill_features(*pe.family, ps, ps.t_prefix, r.x, pe.feat_prefix);
                if (!pe.delay_free) {
                    pe.pru_main.resize(ps.t_main.size());
                    for (std::size_t i = 0; i < ps.t_main.size(); ++i)
                        pe.pru_main[i] =
                            shape.delays.pr_u(tr, eta_ - ps.t_main[i], path, ps.t_main[i], r.x);
                    pe.pru_prefix.resize(ps.t_prefix.size());
                    for (std::size_t i = 0; i < ps.t_prefix.size(); ++i)
                        pe.pru_prefix[i] = shape.delays.pr_u(tr, eta_ - ps.t_prefix[i], path,
                                                             ps.t_prefix[i], r.x);
                }
                if (seg.jump_to && *seg.jump_to == exits[ke]) {
                    ps.jump_exit = static_cast<int>(ke);
                    ps.jump_pru = shape.delays.pr_u(tr, eta_ - seg.end, path, seg.end, r.x);
                }
                ps.exits.push_back(std::move(pe));
            }
            if (seg.prior_state) {
                ps.prior_factor = shape.delays.pr_u({*seg.prior_state, seg.state},
                                                    eta_ - seg.start, path, seg.start, r.x);
            }
            item.segments.push_back(std::move(ps));
        }
        if (!item.segments.empty()) items_.push_back(std::move(item));
    }

    static double rate_at(const PreparedExit& pe, const PreparedSegment& ps, double t,
                          const std::vector<double>& feat, std::size_t node,
                          std::span<const double> theta, std::span<const double> x) {
        if (pe.family->custom_rate) {
            HazardContext ctx = HazardContext::at(t, ps.state, ps.start);
            return pe.family->custom_rate(ctx, x, theta.subspan(pe.slot, pe.dim), pe.hyper);
        }
        double lin = 0.0;
        const double* row = feat.data() + node * pe.dim;
        for (int c = 0; c < pe.dim; ++c) lin += row[c] * theta[pe.slot + c];
        return std::exp(lin);
    }

    double cum_analytic(const PreparedExit& pe, const PreparedSegment& ps, double t0, double t1,
                        std::span<const double> theta, std::span<const double> x) const {
        HazardContext ctx = HazardContext::at(t0, ps.state, ps.start);
        return pe.family->cumulative(t0, t1, ctx, x, theta.subspan(pe.slot, pe.dim), pe.hyper);
    }

    double eval_item(const PreparedItem& item, std::span<const double> theta,
                     const Dataset& data) const {
        const auto& r = data.subjects[item.subject];
        std::span<const double> x{r.x.data(), r.x.size()};
        double ll = 0.0;
        thread_local std::vector<double> rates, integrand, cum, pmu, pnu, cpn, cpm;

        for (const auto& ps : item.segments) {
            const std::size_t m = ps.t_main.size();
            if (ps.classical) {
                for (const auto& pe : ps.exits) {
                    if (!pe.in_filter) continue;
                    if (pe.delay_free && pe.family->cumulative) {
                        ll -= cum_analytic(pe, ps, ps.a, ps.b, theta, x);
                    } else {
                        integrand.assign(m, 0.0);
                        for (std::size_t i = 0; i < m; ++i) {
                            const double pu = pe.delay_free ? 1.0 : pe.pru_main[i];
                            integrand[i] =
                                rate_at(pe, ps, ps.t_main[i], pe.feat_main, i, theta, x) * pu;
                        }
                        ll -= integrate_nodes(integrand, ps.h_main);
                    }
                }
                if (ps.jump_exit >= 0 && ps.exits[ps.jump_exit].in_filter) {
                    const auto& pe = ps.exits[ps.jump_exit];
                    ll += detail::log_guarded(
                        rate_at(pe, ps, ps.b, pe.feat_main, m - 1, theta, x));
                }
                continue;
            }

            // exact gamma path; mirrors detail::build_segment_tables
            const std::size_t mp = ps.t_prefix.size();
            const std::size_t ne = ps.exits.size();
            rates.assign((m + mp) * ne, 0.0);
            for (std::size_t ke = 0; ke < ne; ++ke) {
                const auto& pe = ps.exits[ke];
                for (std::size_t i = 0; i < mp; ++i)
                    rates[ke * (m + mp) + i] =
                        rate_at(pe, ps, ps.t_prefix[i], pe.feat_prefix, i, theta, x);
                for (std::size_t i = 0; i < m; ++i)
                    rates[ke * (m + mp) + mp + i] =
                        rate_at(pe, ps, ps.t_main[i], pe.feat_main, i, theta, x);
            }
            // cumulative exit hazard from the segment start
            cum.assign(m + mp, 0.0);
            if (ps.all_analytic) {
                for (std::size_t i = 0; i < mp; ++i) {
                    double c = 0.0;
                    for (const auto& pe : ps.exits)
                        c += cum_analytic(pe, ps, ps.start, ps.t_prefix[i], theta, x);
                    cum[i] = c;
                }
                for (std::size_t i = 0; i < m; ++i) {
                    double c = 0.0;
                    for (const auto& pe : ps.exits)
                        c += cum_analytic(pe, ps, ps.start, ps.t_main[i], theta, x);
                    cum[mp + i] = c;
                }
            } else {
                // numeric: prefix grid then main grid
                std::vector<double> tot_prefix(mp, 0.0), tot_main(m, 0.0);
                for (std::size_t ke = 0; ke < ne; ++ke) {
                    for (std::size_t i = 0; i < mp; ++i)
                        tot_prefix[i] += rates[ke * (m + mp) + i];
                    for (std::size_t i = 0; i < m; ++i)
                        tot_main[i] += rates[ke * (m + mp) + mp + i];
                }
                double base = 0.0;
                if (mp > 0) {
                    auto cp = cumulative_simpson(tot_prefix, ps.h_prefix);
                    for (std::size_t i = 0; i < mp; ++i) cum[i] = cp[i];
                    base = cp.back();
                }
                auto cm = cumulative_simpson(tot_main, ps.h_main);
                for (std::size_t i = 0; i < m; ++i) cum[mp + i] = base + cm[i];
            }

            // P* nu and P* mu cumulatives from the segment start
            pmu.assign(m + mp, 0.0);
            pnu.assign(m + mp, 0.0);
            for (std::size_t i = 0; i < m + mp; ++i) {
                const double pstar = std::exp(-cum[i]);
                double nu = 0.0, mu = 0.0;
                for (std::size_t ke = 0; ke < ne; ++ke) {
                    const auto& pe = ps.exits[ke];
                    const double rk = rates[ke * (m + mp) + i];
                    const double pu = pe.delay_free
                                          ? 1.0
                                          : (i < mp ? pe.pru_prefix[i] : pe.pru_main[i - mp]);
                    mu += rk;
                    nu += rk * pu;
                }
                pmu[i] = pstar * mu;
                pnu[i] = pstar * nu;
            }
            double pre_mu = 0.0, pre_nu = 0.0;
            if (mp > 0) {
                std::vector<double> ppm(pmu.begin(), pmu.begin() + mp);
                std::vector<double> ppn(pnu.begin(), pnu.begin() + mp);
                pre_mu = integrate_nodes(ppm, ps.h_prefix);
                pre_nu = integrate_nodes(ppn, ps.h_prefix);
            }
            std::vector<double> mm(pmu.begin() + mp, pmu.end());
            std::vector<double> nn(pnu.begin() + mp, pnu.end());
            cpm = cumulative_simpson(mm, ps.h_main);
            cpn = cumulative_simpson(nn, ps.h_main);

            integrand.assign(m, 0.0);
            std::vector<double> gamma_nodes(m, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double denom = ps.prior_factor - (pre_nu + cpn[i]);
                if (!(denom > 0.0))
                    throw NumericalError("gamma denominator is not positive");
                gamma_nodes[i] = (1.0 - (pre_mu + cpm[i])) / denom;
                double nu_kept = 0.0;
                for (std::size_t ke = 0; ke < ne; ++ke) {
                    const auto& pe = ps.exits[ke];
                    if (!pe.in_filter) continue;
                    const double pu = pe.delay_free ? 1.0 : pe.pru_main[i];
                    nu_kept += rates[ke * (m + mp) + mp + i] * pu;
                }
                integrand[i] = gamma_nodes[i] * nu_kept;
            }
            ll -= integrate_nodes(integrand, ps.h_main);

            if (ps.jump_exit >= 0 && ps.exits[ps.jump_exit].in_filter) {
                const auto& pe = ps.exits[ps.jump_exit];
                const double mu = rates[ps.jump_exit * (m + mp) + mp + (m - 1)];
                ll += detail::log_guarded(gamma_nodes[m - 1] * mu * ps.jump_pru);
            }
        }
        return ll;
    }
};

}  // namespace detail_fit
}  // namespace msdelay
