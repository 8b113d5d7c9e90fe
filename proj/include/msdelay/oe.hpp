#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "msdelay/core.hpp"

// Occurrence-exposure discretization of the likelihoods on a time partition.
// Aggregated cells carry weighted occurrences and exposures; with a log-link
// rate model this is the Poisson-regression formulation, and the saturated
// piecewise-constant MLE is the familiar O/E rate.

namespace msdelay {

enum class OETarget { Events, Delays, Adjudication };

struct OECell {
    double occurrence = 0.0;
    double exposure = 0.0;
    double weight = 0.0;  // summed imputation weights behind the occurrence mass
};

/// Maps a record (and event index for delay cells) to a covariate stratum.
using StratumFn = std::function<int(const SubjectRecord&, int subject_index)>;

struct OETable {
    OETarget target = OETarget::Events;
    std::vector<double> partition;  // 0 = t_0 < ... < t_A = eta (delay cells span [0, eta))
    // key: (transition, bucket, stratum)
    std::map<std::tuple<Transition, int, int>, OECell> cells;
    // E_j(a) per occupied state, stored once (transition cells duplicate the
    // origin exposure, Poisson-row style); includes absorbing states
    std::map<std::tuple<int, int, int>, double> state_exposure;

    int bucket_of(double t) const {
        if (t < partition.front() - 1e-12 || t > partition.back() + 1e-9)
            throw DataError("time outside the partition");
        int b = 0;
        for (std::size_t i = 1; i + 1 < partition.size(); ++i)
            if (t > partition[i]) b = static_cast<int>(i);
        return b;
    }

    /// Representative point of a bucket: left endpoint for event and review
    /// hazards, midpoint for delay reverse-time hazards (which blow up at 0).
    double representative(int bucket) const {
        if (target == OETarget::Delays)
            return 0.5 * (partition[bucket] + partition[bucket + 1]);
        return partition[bucket];
    }

    OECell& cell(const Transition& tr, int bucket, int stratum) {
        return cells[{tr, bucket, stratum}];
    }
};

namespace detail_oe {

inline void add_interval_exposure(OETable& table, const Transition& tr, int stratum, double lo,
                                  double hi, double w) {
    if (hi <= lo || w <= 0.0) return;
    for (std::size_t b = 0; b + 1 < table.partition.size(); ++b) {
        const double a = std::max(lo, table.partition[b]);
        const double z = std::min(hi, table.partition[b + 1]);
        if (z > a) {
            auto& c = table.cell(tr, static_cast<int>(b), stratum);
            c.exposure += w * (z - a);
        }
    }
}

}  // namespace detail_oe

/// Discretizes the chosen likelihood on the partition. `weights` are the
/// imputation weights w(1, Z; g) per subject; the last event of a pending
/// record splits its occurrence and downstream exposure across the two
/// branches. The default stratum is 0 for every subject.
inline OETable discretize(const Dataset& data, std::vector<double> partition, OETarget target,
                          const std::vector<double>& weights,
                          const StateSpace* space = nullptr, StratumFn stratum_fn = nullptr) {
    for (std::size_t i = 1; i < partition.size(); ++i)
        if (partition[i] <= partition[i - 1])
            throw ConfigError("partition must be strictly increasing");
    OETable table;
    table.target = target;
    table.partition = std::move(partition);
    auto stratum = [&](const SubjectRecord& r, int i) {
        return stratum_fn ? stratum_fn(r, i) : 0;
    };

    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& r = data.subjects[i];
        const int st = stratum(r, static_cast<int>(i));
        const double w1 = r.has_pending() ? weights[i] : 1.0;

        switch (target) {
            case OETarget::Events: {
                for (int branch = 0; branch < 2; ++branch) {
                    const double w = branch == 1 ? w1 : 1.0 - w1;
                    if (w <= 0.0) continue;
                    const EventPath path = r.effective_path(branch == 1);
                    int state = path.initial_state();
                    double start = 0.0;
                    for (const auto& j : path.jumps()) {
                        detail_oe::add_interval_exposure(table, {state, 0}, st,
                                                         std::max(start, r.truncation),
                                                         std::min(j.time, r.censoring), w);
                        if (j.time > r.truncation && j.time <= r.censoring) {
                            auto& c = table.cell({state, j.mark}, table.bucket_of(j.time), st);
                            c.occurrence += w;
                            c.weight += w;
                        }
                        state = j.mark;
                        start = j.time;
                    }
                    detail_oe::add_interval_exposure(table, {state, 0}, st,
                                                     std::max(start, r.truncation), r.censoring,
                                                     w);
                }
                break;
            }
            case OETarget::Delays: {
                const EventPath path = r.reported_path();
                for (std::size_t m = 0; m < r.events.size(); ++m) {
                    const auto& e = r.events[m];
                    if (e.track.outcome == AdjOutcome::Rejected) continue;
                    const bool pending = (m + 1 == r.events.size()) &&
                                         e.track.outcome == AdjOutcome::Pending;
                    const double w = pending ? w1 : 1.0;
                    if (w <= 0.0) continue;
                    const Transition tr{path.state_at(e.time), e.mark};
                    auto& c = table.cell(tr, table.bucket_of(e.delay), st);
                    c.occurrence += w;
                    c.weight += w;
                    detail_oe::add_interval_exposure(table, tr, st, e.delay,
                                                     data.eta - e.time, w);
                }
                break;
            }
            case OETarget::Adjudication: {
                for (const auto& e : r.events) {
                    const auto& track = e.track;
                    const double end = track.outcome_time ? *track.outcome_time : data.eta;
                    int state = track.initial_adj_state;
                    double entry = track.report_time;
                    for (const auto& jmp : track.transitions) {
                        if (jmp.time > end) break;
                        detail_oe::add_interval_exposure(table, {state, 0}, st, entry, jmp.time,
                                                         1.0);
                        auto& c = table.cell({state, jmp.mark}, table.bucket_of(jmp.time), st);
                        c.occurrence += 1.0;
                        c.weight += 1.0;
                        state = jmp.mark;
                        entry = jmp.time;
                    }
                    detail_oe::add_interval_exposure(table, {state, 0}, st, entry, end, 1.0);
                }
                break;
            }
        }
    }

    // exposure was keyed under (origin, 0); spread it to each observed exit key
    // so cells read (transition, bucket, stratum) uniformly
    OETable out;
    out.target = table.target;
    out.partition = table.partition;
    std::map<std::tuple<int, int, int>, double> origin_exposure;
    std::map<int, std::vector<int>> exits_seen;
    if (space) {
        for (const auto& tr : space->transitions()) exits_seen[tr.first].push_back(tr.second);
    }
    for (const auto& [key, c] : table.cells) {
        const auto& [tr, b, st] = key;
        if (tr.second == 0) {
            origin_exposure[{tr.first, b, st}] += c.exposure;
        } else if (!space) {
            auto& seen = exits_seen[tr.first];
            if (std::find(seen.begin(), seen.end(), tr.second) == seen.end())
                seen.push_back(tr.second);
        } else if (!space->allows(tr.first, tr.second)) {
            throw DataError("observed transition outside the declared state space");
        }
    }
    for (const auto& [key, c] : table.cells) {
        const auto& [tr, b, st] = key;
        if (tr.second == 0) continue;
        out.cells[key] = c;
    }
    out.state_exposure = origin_exposure;
    for (const auto& [okey, expo] : origin_exposure) {
        const auto& [origin, b, st] = okey;
        auto it = exits_seen.find(origin);
        if (it == exits_seen.end()) continue;  // absorbing or never-exited origin
        for (int k : it->second) {
            auto& c = out.cells[{{origin, k}, b, st}];
            c.exposure += expo;
        }
    }
    return out;
}

enum class DegenerateCellPolicy { Throw, Skip };

/// Discretized log-likelihood: sum over cells of O log(rate) - rate * E, the
/// rate evaluated at the bucket representative. The saturated
/// piecewise-constant maximizer is O/E per cell.
inline double oe_loglik(const OETable& table,
                        const std::function<double(const Transition&, double, int)>& rate,
                        DegenerateCellPolicy policy = DegenerateCellPolicy::Throw,
                        const std::function<bool(const Transition&)>& keep = nullptr) {
    double ll = 0.0;
    for (const auto& [key, c] : table.cells) {
        const auto& [tr, b, st] = key;
        if (keep && !keep(tr)) continue;
        if (c.occurrence > 0.0 && c.exposure <= 0.0) {
            if (policy == DegenerateCellPolicy::Throw)
                throw DataError("cell with occurrences but zero exposure");
            continue;
        }
        const double r = rate(tr, table.representative(b), st);
        if (c.occurrence > 0.0) ll += c.occurrence * std::log(std::max(r, 1e-300));
        ll -= r * c.exposure;
    }
    return ll;
}

struct OERateRow {
    Transition transition;
    int bucket = 0;
    int stratum = 0;
    double rep_time = 0.0;
    double occurrence = 0.0;
    double exposure = 0.0;
    bool empirical_defined = false;
    double empirical_rate = 0.0;
    double fitted_rate = 0.0;
};

/// Goodness-of-fit rate table: empirical O/E per cell against the fitted
/// model's rate at the bucket representative. Cells with zero exposure keep
/// the fitted value and an empty empirical rate.
inline std::vector<OERateRow> oe_rates_report(
    const OETable& table,
    const std::function<double(const Transition&, double, int)>& fitted_rate) {
    std::vector<OERateRow> rows;
    for (const auto& [key, c] : table.cells) {
        const auto& [tr, b, st] = key;
        OERateRow row;
        row.transition = tr;
        row.bucket = b;
        row.stratum = st;
        row.rep_time = table.representative(b);
        row.occurrence = c.occurrence;
        row.exposure = c.exposure;
        if (c.exposure > 0.0) {
            row.empirical_defined = true;
            row.empirical_rate = c.occurrence / c.exposure;
        }
        row.fitted_rate = fitted_rate(tr, row.rep_time, st);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace msdelay
