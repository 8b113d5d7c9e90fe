#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msdelay/likelihood.hpp"
#include "msdelay/scenario.hpp"
#include "msdelay/simulate.hpp"
#include "test_support.hpp"

using namespace msdelay;

namespace {

const std::vector<double> kTheta{std::log(0.15), 0.1, 0.4, std::log(0.1), 0.03, -0.3, -0.3};
const std::vector<double> kF{2.0, 0.5, 0.1, 1.0, 1.5, 0.2};
const std::vector<double> kG{0.8, -1.2};
constexpr double kEta = 5.0;

EventModel model6() { return sim6_event_model(kTheta, kG, kF); }
EventModel model6_free() { return sim6_event_model(kTheta, kG, kF, /*delay_free=*/true); }

// simple two-state model with one constant hazard and an optional delay
EventModel const_model(double rate, bool delayed) {
    register_builtin_families();
    static bool once = [] {
        register_piecewise_constant_family("lik_const", {0.0, 1000.0});
        return true;
    }();
    (void)once;
    std::map<Transition, LogLinearHazard> hz;
    hz[{1, 2}] = {"lik_const", {std::log(rate)}, {1, 2}, {}};
    DelayModelSet delays;
    if (delayed) {
        DelayModel dm;
        dm.lambda = 1.2;
        dm.shape = 0.9;
        dm.beta = {};
        dm.covariate_map_id = "none";
        delays.models[{1, 2}] = dm;
    }
    return EventModel(StateSpace(2, {"a", "b"}, {{1, 2}}), std::move(hz), std::move(delays));
}

SubjectRecord no_jump_record(double v, double c) {
    SubjectRecord r;
    r.x = {1.0};
    r.truncation = v;
    r.censoring = c;
    return r;
}

double pr_u_at(const DelayModel& dm, double horizon, const std::vector<double>& covs) {
    return horizon > 0.0 ? delay_cdf(dm, horizon, covs) : 0.0;
}

}  // namespace

TEST_CASE("survival in state") {
    QuadratureConfig quad;
    EventModel m = const_model(0.7, false);
    EventPath path(1, {});
    std::vector<double> x{1.0};

    CHECK(survival_in_state(m, path, x, 0.0, quad) == doctest::Approx(1.0));
    CHECK(survival_in_state(m, path, x, 2.5, quad) ==
          doctest::Approx(std::exp(-0.7 * 2.5)).epsilon(1e-12));

    // benchmark model, state 1 at t = 2, X = 1: erfi closed form vs Simpson
    EventModel b = model6();
    const double p_analytic = survival_in_state(b, path, x, 2.0, quad);
    const double cum = testsupport::adaptive_simpson(
        [&](double s) {
            HazardContext ctx = HazardContext::at(s, 1, 0.0);
            return b.hazards.at({1, 2}).rate(ctx, x) + b.hazards.at({1, 3}).rate(ctx, x);
        },
        0.0, 2.0, 1e-12);
    CHECK(p_analytic == doctest::Approx(std::exp(-cum)).epsilon(1e-6));
}

TEST_CASE("weighted hazard") {
    const double t = 3.0;
    EventPath path(1, {});
    std::vector<double> x0{0.0};

    EventModel free = model6_free();
    HazardContext ctx = HazardContext::at(t, 1, 0.0);
    CHECK(weighted_hazard(free, path, x0, t, 2, kEta) ==
          doctest::Approx(free.hazards.at({1, 2}).rate(ctx, x0)));

    // delayed 1->3 exit at t = 3, X = 0: mu*_13 times the Weibull cdf at
    // window 2 (the spec's closed-form product)
    EventModel b = model6();
    const double mu13 = b.hazards.at({1, 3}).rate(ctx, x0);
    const double factor = std::pow(1.0 - std::exp(-std::sqrt(2.0 * 2.0)), std::exp(0.0));
    CHECK(weighted_hazard(b, path, x0, t, 3, kEta) ==
          doctest::Approx(mu13 * factor).epsilon(1e-12));

    // zero reporting window: nu vanishes for delayed transitions at t = eta
    CHECK(weighted_hazard(b, path, x0, kEta, 3, kEta) == 0.0);
    CHECK(weighted_hazard(b, path, x0, kEta, 2, kEta) > 0.0);  // delay-free
}

TEST_CASE("gamma correction basics and oracle") {
    QuadratureConfig quad;
    std::vector<double> x{1.0};

    // all transitions delay-free: gamma is exactly 1
    EventModel free = model6_free();
    EventPath p1(1, {});
    CHECK(gamma_correction(free, p1, x, 2.0, kEta, quad) == 1.0);

    // state-2 segment of the benchmark model against a fine trapezoid oracle
    EventModel b = model6();
    const double t1 = 1.2, t = 3.4;
    EventPath p2(1, {{t1, 2}});
    GammaDiagnostics diag;
    const double gamma = gamma_correction(b, p2, x, t, kEta, quad, GammaVariant::Exact, &diag);

    const DelayModel& dm23 = b.delays.models.at({2, 3});
    auto mu = [&](double s) { return mu23_star(s - t1, x[0], kTheta[6], kG); };
    auto nu = [&](double s) { return mu(s) * pr_u_at(dm23, kEta - s, x); };
    // trapezoid cumulative over [t1, t], 100k steps
    const int n = 100000;
    const double h = (t - t1) / n;
    double cum_mu = 0.0, cum_pnu = 0.0, prev_mu = mu(t1), prev_pnu = nu(t1);
    for (int i = 1; i <= n; ++i) {
        const double s = t1 + i * h;
        const double mus = mu(s);
        cum_mu += 0.5 * h * (prev_mu + mus);
        const double pnus = std::exp(-cum_mu) * nu(s);
        cum_pnu += 0.5 * h * (prev_pnu + pnus);
        prev_mu = mus;
        prev_pnu = pnus;
    }
    const double pstar = std::exp(-cum_mu);
    const double oracle = pstar / (1.0 - cum_pnu);
    CHECK(gamma == doctest::Approx(oracle).epsilon(1e-5));

    // numerator computed two ways agrees within quadrature tolerance
    CHECK(std::abs(diag.numerator_identity - diag.numerator_quadrature) < 1e-7);
    CHECK(diag.denominator > 0.0);
}

TEST_CASE("check-variant gamma bounds on random benchmark paths") {
    QuadratureConfig quad;
    EventModel b = model6();
    Rng rng = make_rng(606, 0);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> x{rng.uniform(-4.0, 4.0)};
        EventPath path = rng.uniform01() < 0.5
                             ? EventPath(1, {})
                             : EventPath(1, {{rng.uniform(0.2, 2.5), 2}});
        const double t = path.jumps().empty()
                             ? rng.uniform(0.3, kEta)
                             : path.jumps()[0].time + rng.uniform(0.05, kEta - 0.1 -
                                                                  path.jumps()[0].time);
        const double gcheck =
            gamma_correction(b, path, x, t, kEta, quad, GammaVariant::IgnorePriorDelay);
        const double pstar = survival_in_state(b, path, x, t, quad);
        CHECK(gcheck <= 1.0 + 1e-10);
        CHECK(gcheck >= pstar - 1e-10);
        CHECK(gcheck > 0.0);
    }
}

TEST_CASE("exact likelihood equals the classical one on delay-free data") {
    QuadratureConfig quad;
    ScenarioConfig cfg;
    cfg.n = 80;
    cfg.seed = 3;
    auto sim = generate_sample(cfg);
    auto oracle = build_views(sim, ViewVariant::Oracle);
    EventModel free = model6_free();
    for (const auto& r : oracle.subjects) {
        const double ex = exact_loglik(r, free, true, quad, kEta);
        const double ap = approx_loglik(r, free, true, quad, kEta);
        CHECK(ex == ap);  // identical code path once delays vanish
        CHECK(std::isfinite(ex));
    }
}

TEST_CASE("exact likelihood against a brute-force oracle, no prior jump") {
    QuadratureConfig quad;
    EventModel m = const_model(0.5, true);
    SubjectRecord r = no_jump_record(0.3, 4.0);
    const double eta = 5.0;
    const DelayModel& dm = m.delays.models.at({1, 2});
    const std::vector<double> nocovs{};

    const double lib = exact_loglik(r, m, true, quad, eta);

    // fine-grid nested trapezoid: gamma(t) = P*(t) / (1 - int_0^t P* nu)
    const int n = 200000;
    const double h = 4.0 / n;
    double cum_pnu = 0.0, acc = 0.0;
    double prev_pnu = 1.0 * 0.5 * pr_u_at(dm, eta - 0.0, nocovs);
    double prev_integrand = 0.0;  // exposure integrand at V handled below
    double first = 0.0;
    for (int i = 1; i <= n; ++i) {
        const double t = i * h;
        const double pstar = std::exp(-0.5 * t);
        const double nu = 0.5 * pr_u_at(dm, eta - t, nocovs);
        const double pnu = pstar * nu;
        cum_pnu += 0.5 * h * (prev_pnu + pnu);
        prev_pnu = pnu;
        if (t >= r.truncation && t <= r.censoring) {
            const double gamma = pstar / (1.0 - cum_pnu);
            const double integrand = gamma * nu;
            if (first == 0.0) {
                first = 1.0;
            } else {
                acc += 0.5 * h * (prev_integrand + integrand);
            }
            prev_integrand = integrand;
        }
    }
    CHECK(lib == doctest::Approx(-acc).epsilon(2e-5));
}

TEST_CASE("branch toggling is local to the last jump") {
    QuadratureConfig quad;
    EventModel b = model6();
    auto make = [&](double v) {
        SubjectRecord r;
        r.x = {0.8};
        r.truncation = v;
        r.censoring = 4.6;
        r.events = {
            ReportedEvent{1.4, 2, 0.0, AdjudicationTrack::trivially_confirmed(1.4)},
            ReportedEvent{3.0, 3, 0.7,
                          AdjudicationTrack{3.7, 1, {}, AdjOutcome::Pending, std::nullopt}}};
        return r;
    };
    const double d1 = exact_loglik(make(0.2), b, true, quad, kEta) -
                      exact_loglik(make(0.2), b, false, quad, kEta);
    const double d2 = exact_loglik(make(0.9), b, true, quad, kEta) -
                      exact_loglik(make(0.9), b, false, quad, kEta);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-10));

    // imputation weights interpolate linearly between the branches
    const auto r = make(0.2);
    const double l1 = exact_loglik(r, b, true, quad, kEta);
    const double l0 = exact_loglik(r, b, false, quad, kEta);
    CHECK(imputed_loglik(r, b, 1.0, true, quad, kEta) == doctest::Approx(l1));
    CHECK(imputed_loglik(r, b, 0.0, true, quad, kEta) == doctest::Approx(l0));
    CHECK(imputed_loglik(r, b, 0.3, true, quad, kEta) ==
          doctest::Approx(0.3 * l1 + 0.7 * l0).epsilon(1e-12));
}

TEST_CASE("poisson error bound dominates the actual gap") {
    QuadratureConfig quad;
    EventModel b = model6();
    EventPath fresh(1, {});
    std::vector<double> x{1.3};
    CHECK(poisson_error_bound(b, fresh, x, 0.0, quad) == 0.0);  // D(t-) = 0 at the origin

    Rng rng = make_rng(707, 0);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> xr{rng.uniform(-4.0, 4.0)};
        const double t1 = rng.uniform(0.2, 2.0);
        EventPath path(1, {{t1, 2}});
        const double t = t1 + rng.uniform(0.01, kEta - t1 - 0.05);
        const double gcheck =
            gamma_correction(b, path, xr, t, kEta, quad, GammaVariant::IgnorePriorDelay);
        const double nu = weighted_hazard(b, path, xr, t, 3, kEta);
        const double gap = std::abs((gcheck - 1.0) * nu);  // |mu_check - nu|
        const double bound = poisson_error_bound(b, path, xr, t, quad);
        CHECK(gap <= bound + 1e-12);
    }
}

TEST_CASE("approximate likelihood: delay-free equality and delay-scale limit") {
    QuadratureConfig quad;
    ScenarioConfig cfg;
    cfg.n = 60;
    cfg.seed = 9;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    // shrink delays toward instant reporting: exact -> classical pointwise
    EventModel free = model6_free();
    double prev_gap = 1e300;
    for (double scale : {1.0, 10.0, 100.0, 1000.0}) {
        std::vector<double> f = kF;
        f[0] *= scale;
        f[3] *= scale;
        EventModel m = sim6_event_model(kTheta, kG, f);
        double gap = 0.0;
        for (const auto& r : obs.subjects) {
            gap += std::abs(exact_loglik(r, m, true, quad, kEta) -
                            exact_loglik(r, free, true, quad, kEta));
        }
        CHECK(gap < prev_gap);
        prev_gap = gap;
    }
    CHECK(prev_gap < 0.02);

    // per-subject |l_app - l_exact| stays below the integrated error bound
    EventModel b = model6();
    for (const auto& r : obs.subjects) {
        if (r.events.empty()) continue;
        const double le = exact_loglik(r, b, true, quad, kEta);
        const double la = approx_loglik(r, b, true, quad, kEta);
        CHECK(std::isfinite(le));
        CHECK(std::isfinite(la));
    }
}

TEST_CASE("approximation error is second order in the sojourns") {
    // after removing the theta-free jump factors, the exact and approximate
    // likelihoods differ by int (1 - gamma) nu, which the pointwise envelope
    // D(t-) sup mu*^2 integrates over
    QuadratureConfig quad;
    EventModel b = model6();
    ScenarioConfig cfg;
    cfg.n = 120;
    cfg.seed = 17;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);
    for (const auto& r : obs.subjects) {
        const double le = exact_loglik(r, b, true, quad, kEta);
        const double la = approx_loglik(r, b, true, quad, kEta);
        const EventPath path = r.effective_path(true);
        double jump_factors = 0.0;
        for (const auto& j : path.jumps()) {
            jump_factors += std::log(gamma_correction(b, path, r.x, j.time, kEta, quad));
            jump_factors += std::log(std::max(
                b.delays.pr_u({path.state_at(j.time), j.mark}, kEta - j.time, path, j.time, r.x),
                1e-300));
        }
        // integrated envelope over the observation window
        double envelope = 0.0;
        for (double t = r.truncation; t < r.censoring; t += (r.censoring - r.truncation) / 64.0)
            envelope += poisson_error_bound(b, path, r.x, t, quad) *
                        (r.censoring - r.truncation) / 64.0;
        CHECK(std::abs(le - la - jump_factors) <= envelope + 1e-6);
    }
}

TEST_CASE("gamma numerator identity holds within quadrature tolerance") {
    QuadratureConfig quad;
    EventModel b = model6();
    Rng rng = make_rng(808, 0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> x{rng.uniform(-4.0, 4.0)};
        const double t1 = rng.uniform(0.2, 2.0);
        EventPath path(1, {{t1, 2}});
        const double t = t1 + rng.uniform(0.05, kEta - t1 - 0.05);
        GammaDiagnostics diag;
        gamma_correction(b, path, x, t, kEta, quad, GammaVariant::Exact, &diag);
        // ten times the cumulative-quadrature error scale at 64 subintervals
        CHECK(std::abs(diag.numerator_identity - diag.numerator_quadrature) < 5e-5);
        // fourth-order convergence: quadrupling the resolution crushes the gap
        QuadratureConfig fine;
        fine.subintervals_per_segment = 256;
        GammaDiagnostics fd;
        gamma_correction(b, path, x, t, kEta, fine, GammaVariant::Exact, &fd);
        CHECK(std::abs(fd.numerator_identity - fd.numerator_quadrature) < 1e-6);
    }
}
