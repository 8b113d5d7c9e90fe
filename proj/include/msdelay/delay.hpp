#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/nelder_mead.hpp"
#include "msdelay/quadrature.hpp"

// Reporting-delay distributions with proportional reverse-time hazards:
// pr_U(t; x) = F0(t)^exp(x'beta), so that the reverse-time hazard factorizes
// as alpha(t; x) = alpha0(t) exp(x'beta) and right truncation enters the
// likelihood only through log-CDF differences.

namespace msdelay {

namespace special {

/// Regularized lower incomplete gamma P(a, x).
inline double lower_regularized_gamma(double a, double x) {
    if (x <= 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // series representation
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    // continued fraction for Q(a, x)
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace special

enum class DelayFamily { WeibullReverseHazard, GammaReverseHazard };

/// Pure function of (path at the event time, baseline covariates) producing
/// the delay regression covariates; registered by id for persistability.
using DelayCovariateFn =
    std::function<std::vector<double>(const EventPath&, double event_time,
                                      std::span<const double> x)>;

class DelayCovariateRegistry {
  public:
    static DelayCovariateRegistry& instance() {
        static DelayCovariateRegistry reg;
        ensure_builtins(reg);
        return reg;
    }

    void add(const std::string& id, DelayCovariateFn fn) { maps_[id] = std::move(fn); }

    const DelayCovariateFn& get(const std::string& id) const {
        auto it = maps_.find(id);
        if (it == maps_.end()) throw ConfigError("unknown delay covariate map: " + id);
        return it->second;
    }

  private:
    static void ensure_builtins(DelayCovariateRegistry& reg) {
        if (reg.maps_.count("baseline")) return;
        reg.maps_["baseline"] = [](const EventPath&, double, std::span<const double> x) {
            return std::vector<double>(x.begin(), x.end());
        };
        reg.maps_["none"] = [](const EventPath&, double, std::span<const double>) {
            return std::vector<double>{};
        };
    }

    std::map<std::string, DelayCovariateFn> maps_;
};

struct DelayModel {
    double lambda = 1.0;  // scale, 1/years
    double shape = 1.0;   // k
    std::vector<double> beta;
    std::string covariate_map_id = "baseline";
    DelayFamily family = DelayFamily::WeibullReverseHazard;
    double log_floor = -30.0;  // for zero delays, which have infinite reverse hazard

    std::vector<double> covariates(const EventPath& path, double event_time,
                                   std::span<const double> x) const {
        return DelayCovariateRegistry::instance().get(covariate_map_id)(path, event_time, x);
    }

    double linpred(std::span<const double> covs) const {
        double lp = 0.0;
        for (std::size_t i = 0; i < beta.size(); ++i) lp += beta[i] * covs[i];
        return lp;
    }

    /// log F0(t) of the base distribution (before the power tilt).
    double base_log_cdf(double t) const {
        if (t <= 0.0) return -std::numeric_limits<double>::infinity();
        switch (family) {
            case DelayFamily::WeibullReverseHazard: {
                const double z = std::pow(lambda * t, shape);
                return std::log(-std::expm1(-z));
            }
            case DelayFamily::GammaReverseHazard:
                return std::log(special::lower_regularized_gamma(shape, lambda * t));
        }
        return 0.0;
    }

    /// Reverse-time hazard alpha0(t) = F0'(t) / F0(t); diverges at t = 0.
    double base_reverse_hazard(double t) const {
        if (t <= 0.0) throw NumericalError("reverse-time hazard is infinite at t = 0");
        switch (family) {
            case DelayFamily::WeibullReverseHazard: {
                const double z = std::pow(lambda * t, shape);
                return shape * std::pow(lambda, shape) * std::pow(t, shape - 1.0) / std::expm1(z);
            }
            case DelayFamily::GammaReverseHazard: {
                const double log_pdf = shape * std::log(lambda) + (shape - 1.0) * std::log(t) -
                                       lambda * t - std::lgamma(shape);
                return std::exp(log_pdf - base_log_cdf(t));
            }
        }
        return 0.0;
    }
};

/// pr_U(t; x) = F0(t)^exp(x'beta) in [0, 1]; exactly 0 at t = 0.
inline double delay_cdf(const DelayModel& m, double t, std::span<const double> covs) {
    if (t <= 0.0) return 0.0;
    return std::exp(std::exp(m.linpred(covs)) * m.base_log_cdf(t));
}

inline double delay_log_cdf(const DelayModel& m, double t, std::span<const double> covs) {
    if (t <= 0.0) return -std::numeric_limits<double>::infinity();
    return std::exp(m.linpred(covs)) * m.base_log_cdf(t);
}

/// alpha(t; x) = alpha0(t) exp(x'beta); domain error at t = 0.
inline double reverse_hazard(const DelayModel& m, double t, std::span<const double> covs) {
    return m.base_reverse_hazard(t) * std::exp(m.linpred(covs));
}

/// Inverse-transform draw; W is taken in the open interval (0,1) so the
/// transform singularity at W = 1 is never hit.
template <class RngT>
double sample_delay(const DelayModel& m, std::span<const double> covs, RngT& rng) {
    const double w = rng.uniform01();
    const double e = std::exp(-m.linpred(covs));
    switch (m.family) {
        case DelayFamily::WeibullReverseHazard:
            return std::pow(-std::log1p(-std::pow(w, e)), 1.0 / m.shape) / m.lambda;
        case DelayFamily::GammaReverseHazard: {
            // bisect F0(t) = w^e
            const double target = std::pow(w, e);
            double lo = 0.0, hi = 1.0;
            while (special::lower_regularized_gamma(m.shape, m.lambda * hi) < target) hi *= 2.0;
            for (int i = 0; i < 200; ++i) {
                double mid = 0.5 * (lo + hi);
                if (special::lower_regularized_gamma(m.shape, m.lambda * mid) < target) lo = mid;
                else hi = mid;
                if (hi - lo < 1e-14 * (1.0 + hi)) break;
            }
            return 0.5 * (lo + hi);
        }
    }
    return 0.0;
}

/// One event's contribution to the right-truncated delay log-likelihood:
/// log alpha(U) - [log pr_U(eta - T) - log pr_U(U)].
inline double delay_event_term(const DelayModel& m, double delay, double window,
                               std::span<const double> covs) {
    if (window < delay) throw DataError("delay exceeds its truncation window");
    if (delay <= 0.0) return m.log_floor;  // instant report: infinite reverse hazard, floored
    const double log_alpha = std::log(reverse_hazard(m, delay, covs));
    const double trunc = delay_log_cdf(m, window, covs) - delay_log_cdf(m, delay, covs);
    return log_alpha - trunc;
}

/// Delay models keyed by transition; transitions without an entry are
/// delay-free (pr_U identically 1 at every horizon).
struct DelayModelSet {
    std::map<Transition, DelayModel> models;

    bool delay_free(const Transition& tr) const { return models.find(tr) == models.end(); }

    const DelayModel* model_for(const Transition& tr) const {
        auto it = models.find(tr);
        return it == models.end() ? nullptr : &it->second;
    }

    /// pr_U(horizon; {J(t-), t, k}, f) for a (hypothetical) jump to k at time t.
    double pr_u(const Transition& tr, double horizon, const EventPath& path, double t,
                std::span<const double> x) const {
        const DelayModel* m = model_for(tr);
        if (!m) return 1.0;
        if (horizon <= 0.0) return 0.0;
        auto covs = m->covariates(path, t, x);
        return delay_cdf(*m, horizon, covs);
    }
};

/// Sum over a record's included reported events of the right-truncated delay
/// likelihood terms; include_last = false drops the last reported event (the
/// l_U(f; 0) branch). Rejected events never contribute.
inline double delay_loglik(const SubjectRecord& record, const DelayModelSet& set,
                           bool include_last, double eta) {
    if (record.events.empty()) return 0.0;
    const EventPath path = record.reported_path();
    double sum = 0.0;
    for (std::size_t m = 0; m < record.events.size(); ++m) {
        const auto& e = record.events[m];
        if (e.track.outcome == AdjOutcome::Rejected) continue;
        if (m + 1 == record.events.size() && !include_last) continue;
        const Transition tr{path.state_at(e.time), e.mark};
        const DelayModel* dm = set.model_for(tr);
        if (!dm) continue;  // delay-free transitions carry no delay information
        auto covs = dm->covariates(path, e.time, record.x);
        sum += delay_event_term(*dm, e.delay, eta - e.time, covs);
    }
    return sum;
}

/// Imputed delay likelihood, Eq.-style convex combination of the two
/// adjudication branches of the last reported event.
inline double imputed_delay_loglik(const SubjectRecord& record, const DelayModelSet& set,
                                   double w1, double eta) {
    if (w1 < 0.0 || w1 > 1.0) throw ConfigError("imputation weight must lie in [0,1]");
    if (w1 >= 1.0) return delay_loglik(record, set, true, eta);
    if (w1 <= 0.0) return delay_loglik(record, set, false, eta);
    return (1.0 - w1) * delay_loglik(record, set, false, eta) +
           w1 * delay_loglik(record, set, true, eta);
}

struct DelayFitResult {
    DelayModel model;
    SimplexResult diagnostics;
};

/// Maximizes the summed imputed delay likelihood for one delay model over the
/// given transitions. `weights[i]` is w(1, Z_i; g) applied to record i's last
/// event when pending; confirmed events weigh 1 and rejected events 0.
/// lambda and shape are optimized on the log scale to enforce positivity.
inline DelayFitResult fit_delay_model(const Dataset& data, const std::vector<double>& weights,
                                      const DelayModel& start,
                                      const std::vector<Transition>& transitions,
                                      const OptimizerConfig& opt) {
    if (weights.size() != data.subjects.size())
        throw ConfigError("one imputation weight per record required");

    DelayModelSet scope;
    for (const auto& tr : transitions) scope.models[tr] = start;

    // the imputed objective is a per-event weighted sum: confirmed events
    // weigh 1, the pending last event weighs w(1, Z; g), rejected events 0;
    // tuples are extracted once so optimizer iterations touch no records
    struct Term {
        double delay, window, weight;
        std::vector<double> covs;
    };
    std::vector<Term> terms;
    double total_weight = 0.0;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& r = data.subjects[i];
        const EventPath path = r.reported_path();
        for (std::size_t m = 0; m < r.events.size(); ++m) {
            const auto& e = r.events[m];
            if (e.track.outcome == AdjOutcome::Rejected) continue;
            const DelayModel* dm = scope.model_for({path.state_at(e.time), e.mark});
            if (!dm) continue;
            const bool last = (m + 1 == r.events.size());
            const bool pending = last && e.track.outcome == AdjOutcome::Pending;
            const double w = pending ? weights[i] : 1.0;
            if (w <= 0.0) continue;
            terms.push_back({e.delay, data.eta - e.time, w,
                             dm->covariates(path, e.time, r.x)});
            total_weight += w;
        }
    }
    if (total_weight <= 0.0)
        throw DataError("no reported event with positive weight; delay model is not estimable");

    const std::size_t nbeta = start.beta.size();
    auto unpack = [&](const std::vector<double>& p) {
        DelayModel m = start;
        m.lambda = std::exp(p[0]);
        m.shape = std::exp(p[1]);
        m.beta.assign(p.begin() + 2, p.end());
        return m;
    };

    auto objective = [&](const std::vector<double>& p) {
        const DelayModel m = unpack(p);
        double sum = 0.0;
        for (const auto& t : terms)
            sum += t.weight * delay_event_term(m, t.delay, t.window, t.covs);
        return sum;
    };

    std::vector<double> p0(2 + nbeta, 0.0);
    p0[0] = std::log(start.lambda);
    p0[1] = std::log(start.shape);
    for (std::size_t i = 0; i < nbeta; ++i) p0[2 + i] = start.beta[i];

    auto res = nelder_mead_maximize(objective, p0, opt);
    return {unpack(res.argmax), std::move(res)};
}

}  // namespace msdelay
