#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/quadrature.hpp"

// Parametric transition hazards. Families are registered by identifier so
// fitted models can be persisted as (family id, coefficients, hyperparameters).
// The default family kind is log-linear, rate = exp(features(t, ctx, x)' beta);
// a registered family may instead supply a custom positive rate function for
// forms that are not log-linear in their parameters.

namespace msdelay {

/// Evaluation context shared by event and adjudication hazards. For event
/// hazards, segment_start is the time the occupied state was entered (0 for
/// the initial segment) and the adjudication fields are NaN. For adjudication
/// hazards, segment_start is the entry time of the current adjudication state
/// and the report fields describe the reviewed event.
struct HazardContext {
    double t = 0.0;
    int occupied_state = 1;
    double segment_start = 0.0;
    double duration = 0.0;  // t - segment_start

    double event_time = std::numeric_limits<double>::quiet_NaN();
    double report_time = std::numeric_limits<double>::quiet_NaN();
    double report_delay = std::numeric_limits<double>::quiet_NaN();
    int adj_transition_count = 0;  // transitions of the track strictly before t

    static HazardContext at(double t, int state, double segment_start) {
        HazardContext c;
        c.t = t;
        c.occupied_state = state;
        c.segment_start = segment_start;
        c.duration = t - segment_start;
        return c;
    }
};

/// How the hazard varies with time: through calendar time (given frozen
/// history fields), or through the duration in the current state. Used by the
/// occupancy solvers to pick table layouts.
enum class HazardClock { Calendar, StateDuration };

enum class ParamTransform { Identity, LogPositive };

using FeatureFn = std::function<void(const HazardContext&, std::span<const double> x,
                                     std::span<double> out)>;
using RateFn = std::function<double(const HazardContext&, std::span<const double> x,
                                    std::span<const double> beta,
                                    std::span<const double> hyper)>;
/// Optional analytic integral of the rate over [t0, t1] along the segment that
/// ctx describes; t1 may be +infinity.
using CumulativeFn = std::function<double(double t0, double t1, const HazardContext&,
                                          std::span<const double> x,
                                          std::span<const double> beta,
                                          std::span<const double> hyper)>;

struct HazardFamily {
    std::string id;
    int dim = 0;                     // number of free coefficients
    HazardClock clock = HazardClock::Calendar;
    std::vector<ParamTransform> transforms;  // size dim; Identity if empty
    FeatureFn features;              // for log-linear families
    RateFn custom_rate;              // for non-log-linear families
    CumulativeFn cumulative;         // optional closed-form integral
    int intercept_index = -1;        // coefficient acting as a log-level, if any

    double rate(const HazardContext& ctx, std::span<const double> x,
                std::span<const double> beta, std::span<const double> hyper) const {
        if (custom_rate) return custom_rate(ctx, x, beta, hyper);
        thread_local std::vector<double> feat;
        feat.assign(dim, 0.0);
        features(ctx, x, feat);
        double lin = 0.0;
        for (int i = 0; i < dim; ++i) lin += feat[i] * beta[i];
        return std::exp(lin);
    }

    ParamTransform transform(int i) const {
        return transforms.empty() ? ParamTransform::Identity : transforms[i];
    }
};

class HazardRegistry {
  public:
    static HazardRegistry& instance() {
        static HazardRegistry reg;
        return reg;
    }

    void add(HazardFamily family) { families_[family.id] = std::move(family); }

    const HazardFamily& get(const std::string& id) const {
        auto it = families_.find(id);
        if (it == families_.end()) throw ConfigError("unknown hazard family: " + id);
        return it->second;
    }

    bool contains(const std::string& id) const { return families_.count(id) > 0; }

  private:
    std::map<std::string, HazardFamily> families_;
};

inline void register_hazard_family(HazardFamily family) {
    HazardRegistry::instance().add(std::move(family));
}

/// A transition hazard: a registered family evaluated at a coefficient vector.
/// Hyperparameters hold values fixed during fitting (e.g. plug-in nuisance
/// parameters a family's closed form depends on).
struct LogLinearHazard {
    std::string feature_map_id;
    std::vector<double> coefficients;
    Transition transition{0, 0};
    std::vector<double> hyper;
    bool disabled = false;  // hazard identically zero, excluded from fitting

    const HazardFamily& family() const { return HazardRegistry::instance().get(feature_map_id); }

    double rate(const HazardContext& ctx, std::span<const double> x) const {
        if (disabled) return 0.0;
        double r = family().rate(ctx, x, coefficients, hyper);
        if (!(r >= 0.0) || !std::isfinite(r))
            throw NumericalError("hazard family " + feature_map_id +
                                 " produced a non-finite or negative rate");
        return r;
    }

    /// Integrated rate over [t0, t1] on the segment ctx describes. Falls back
    /// to composite Simpson when the family has no closed form.
    double cumulative(double t0, double t1, const HazardContext& ctx, std::span<const double> x,
                      const QuadratureConfig& quad) const {
        if (disabled) return 0.0;
        if (t1 <= t0) return 0.0;
        const auto& fam = family();
        if (fam.cumulative) return fam.cumulative(t0, t1, ctx, x, coefficients, hyper);
        if (!std::isfinite(t1))
            throw NumericalError("family " + feature_map_id +
                                 " has no closed-form tail integral");
        auto f = [&](double s) {
            HazardContext c = ctx;
            c.t = s;
            c.duration = s - ctx.segment_start;
            return rate(c, x);
        };
        return simpson(f, t0, t1, quad.subintervals_per_segment);
    }

    bool has_tail_integral() const {
        return !disabled && static_cast<bool>(family().cumulative);
    }
};

/// Log-linear family helper: rate = exp(features' beta).
inline HazardFamily make_loglinear_family(std::string id, int dim, HazardClock clock,
                                          FeatureFn features, int intercept_index = 0,
                                          CumulativeFn cumulative = nullptr) {
    HazardFamily fam;
    fam.id = std::move(id);
    fam.dim = dim;
    fam.clock = clock;
    fam.features = std::move(features);
    fam.intercept_index = intercept_index;
    fam.cumulative = std::move(cumulative);
    return fam;
}

}  // namespace msdelay
