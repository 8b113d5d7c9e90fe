#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msdelay/estimation.hpp"
#include "msdelay/simulate.hpp"
#include "test_support.hpp"

using namespace msdelay;

namespace {

const std::vector<double> kTheta{std::log(0.15), 0.1, 0.4, std::log(0.1), 0.03, -0.3, -0.3};

FitControl fast_control() {
    FitControl ctl;
    ctl.opt.simplex_tolerance = 1e-9;
    return ctl;
}

}  // namespace

TEST_CASE("two-step pipeline recovers the benchmark parameters on one sample") {
    ScenarioConfig cfg;
    cfg.n = 1500;
    cfg.seed = 101;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    FitControl ctl = fast_control();
    ctl.jobs = 2;
    FitResult fit = two_step_fit(obs, make_sim6_spec(), ctl, /*use_exact=*/false);

    CHECK(fit.converged());
    REQUIRE(fit.g.size() == 2);
    REQUIRE(fit.f.size() == 6);
    REQUIRE(fit.theta.size() == 7);
    // one-sample noise scales from the reported SDs; generous 4-sigma bands
    CHECK(fit.g[0] == doctest::Approx(0.8).epsilon(0.6));
    CHECK(fit.g[1] == doctest::Approx(-1.2).epsilon(0.9));
    for (int k = 0; k < 7; ++k) {
        const double sd[7] = {.067, .020, .078, .091, .016, .094, .066};
        CHECK(std::abs(fit.theta[k] - kTheta[k]) < 5.0 * sd[k] + 0.02);
    }
    // weights live in [0, 1]
    for (double w : fit.weights) {
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
    }
}

TEST_CASE("focused fit reproduces the full fit on its block") {
    ScenarioConfig cfg;
    cfg.n = 700;
    cfg.seed = 202;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    FitControl full = fast_control();
    FitControl focus = fast_control();
    focus.focus = {{2, 3}};
    FitResult a = two_step_fit(obs, make_sim6_spec(), full, false);
    FitResult b = two_step_fit(obs, make_sim6_spec(), focus, false);
    CHECK(a.theta[6] == doctest::Approx(b.theta[6]).epsilon(1e-12));
    // the delayed group feeding the block is fitted identically
    CHECK(a.f[3] == doctest::Approx(b.f[3]).epsilon(1e-12));
    CHECK(a.f[4] == doctest::Approx(b.f[4]).epsilon(1e-12));
    CHECK(a.f[5] == doctest::Approx(b.f[5]).epsilon(1e-12));
}

TEST_CASE("exact warm start never lowers the exact objective") {
    ScenarioConfig cfg;
    cfg.n = 400;
    cfg.seed = 303;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    FitControl ctl = fast_control();
    ctl.jobs = 2;
    auto spec = make_sim6_spec();
    FitResult approx = two_step_fit(obs, spec, ctl, false);
    FitResult exact = two_step_fit(obs, spec, ctl, true);
    CHECK(exact.warm_start == "poisson-argmax");

    // exact objective at the approx argmax
    EventModel at_approx = spec.event_model(approx.theta, exact.g, exact.f, false);
    double base = 0.0;
    for (std::size_t i = 0; i < obs.subjects.size(); ++i)
        base += imputed_loglik(obs.subjects[i], at_approx, exact.weights[i], true, ctl.quad,
                               obs.eta);
    CHECK(exact.theta_objective >= base - 1e-6);
}

TEST_CASE("oracle reduction: delay-free, fully adjudicated data is a classical MLE") {
    // piecewise-constant hazards: the argmax is log(O/E) per bucket, computed
    // here independently by direct counting
    register_builtin_families();
    register_piecewise_constant_family("est_pwc12", {0.0, 2.0, 5.0});
    register_piecewise_constant_family("est_pwc13", {0.0, 2.5, 5.0});

    ModelSpec spec;
    spec.event_model = [](std::span<const double> th, std::span<const double>,
                          std::span<const double>, bool) {
        std::map<Transition, LogLinearHazard> hz;
        hz[{1, 2}] = {"est_pwc12", {th[0], th[1]}, {1, 2}, {}};
        hz[{1, 3}] = {"est_pwc13", {th[2], th[3]}, {1, 3}, {}};
        return EventModel(StateSpace(3, {"a", "b", "c"}, {{1, 2}, {1, 3}}), std::move(hz),
                          DelayModelSet{});
    };
    spec.adjudication_start = sim6_adjudication_model(std::vector<double>{1.0, -1.0});
    spec.theta_dim = 4;

    // delay-free, fully adjudicated data straight from the generator
    ScenarioConfig cfg;
    cfg.n = 900;
    cfg.seed = 404;
    auto sim = generate_sample(cfg);
    auto oracle = build_views(sim, ViewVariant::Oracle);

    FitControl ctl;
    ctl.opt.simplex_tolerance = 1e-13;
    ctl.opt.restarts = 3;
    FitResult fit = classical_fit(oracle, spec, std::vector<double>{0.8, -1.2}, ctl, "oracle");

    // independent occurrence-exposure MLE
    double o[2][2] = {{0, 0}, {0, 0}}, e[2][2] = {{0, 0}, {0, 0}};
    const double breaks12[3] = {0.0, 2.0, 5.0}, breaks13[3] = {0.0, 2.5, 5.0};
    for (const auto& r : oracle.subjects) {
        double in_state1_until = r.censoring;
        for (const auto& ev : r.events) {
            if (ev.time <= r.censoring) {
                in_state1_until = ev.time;
                const int which = ev.mark == 2 ? 0 : 1;
                const auto& breaks = ev.mark == 2 ? breaks12 : breaks13;
                o[which][ev.time >= breaks[1] ? 1 : 0] += 1.0;
            }
            break;  // paths leave state 1 at most once
        }
        for (int which = 0; which < 2; ++which) {
            const auto& breaks = which == 0 ? breaks12 : breaks13;
            for (int bkt = 0; bkt < 2; ++bkt) {
                const double lo = std::max(breaks[bkt], r.truncation);
                const double hi = std::min(breaks[bkt + 1], in_state1_until);
                if (hi > lo) e[which][bkt] += hi - lo;
            }
        }
    }
    CHECK(fit.theta[0] == doctest::Approx(std::log(o[0][0] / e[0][0])).epsilon(1e-6));
    CHECK(fit.theta[1] == doctest::Approx(std::log(o[0][1] / e[0][1])).epsilon(1e-6));
    CHECK(fit.theta[2] == doctest::Approx(std::log(o[1][0] / e[1][0])).epsilon(1e-6));
    CHECK(fit.theta[3] == doctest::Approx(std::log(o[1][1] / e[1][1])).epsilon(1e-6));
}

TEST_CASE("flattened objective matches the reference likelihood walkers") {
    ScenarioConfig cfg;
    cfg.n = 120;
    cfg.seed = 777;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);
    auto spec = make_sim6_spec();
    QuadratureConfig quad;

    std::vector<double> g{0.8, -1.2}, f{2.0, 0.5, 0.1, 1.0, 1.5, 0.2};
    std::vector<double> weights(obs.subjects.size(), 1.0);
    for (std::size_t i = 0; i < obs.subjects.size(); ++i)
        if (obs.subjects[i].has_pending()) weights[i] = 0.37;

    EventModel shape = spec.event_model(kTheta, g, f, false);
    const std::vector<Transition> all{{1, 2}, {1, 3}, {2, 3}};
    for (bool exact : {false, true}) {
        detail_fit::PreparedTheta prepared(obs, shape, weights, quad, obs.eta, all, exact);
        for (double shift : {0.0, 0.07}) {
            std::vector<double> theta = kTheta;
            for (auto& v : theta) v += shift;
            EventModel model = spec.event_model(theta, g, f, false);
            double reference = 0.0;
            for (std::size_t i = 0; i < obs.subjects.size(); ++i)
                reference += imputed_loglik(obs.subjects[i], model, weights[i], exact, quad,
                                            obs.eta);
            const double fast = prepared.eval(theta, obs, 1);
            CHECK(fast == doctest::Approx(reference).epsilon(1e-12));
        }
    }
}

TEST_CASE("naive transforms") {
    ScenarioConfig cfg;
    cfg.n = 500;
    cfg.seed = 505;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    Dataset n2 = apply_naive2(obs);
    CHECK(n2.subjects.size() <= obs.subjects.size());
    for (const auto& r : n2.subjects) {
        CHECK(r.censoring <= obs.eta - 1.0 + 1e-12);
        for (const auto& e : r.events) {
            CHECK(e.time <= r.censoring + 1e-12);
            if (e.track.outcome == AdjOutcome::Pending)
                CHECK(obs.eta - e.track.report_time <= 2.0);
        }
    }

    // uncontaminated data: naive1 = naive2 = oracle classical fit
    SimulatedData clean = sim;
    for (auto& t : clean.truth) {
        std::vector<SimEvent> kept;
        for (auto& e : t.events) {
            if (e.time > std::min(t.censoring, cfg.eta - 1.0) - 0.05) continue;
            e.delay = 0.0;
            e.reported = true;
            e.xi = true;
            e.track = AdjudicationTrack::trivially_confirmed(e.time);
            kept.push_back(e);
        }
        // keep prefixes only so marks still chain
        t.events = kept;
        t.censoring = std::min(t.censoring, cfg.eta - 1.0);
        if (t.truncation >= t.censoring) t.events.clear();
        for (std::size_t i = 0; i < t.events.size(); ++i)
            if (t.events[i].time > t.censoring) { t.events.resize(i); break; }
    }
    // drop subjects with empty windows outright
    SimulatedData pruned;
    pruned.cfg = clean.cfg;
    for (auto& t : clean.truth)
        if (t.truncation < t.censoring) pruned.truth.push_back(t);
    auto view = build_views(pruned, ViewVariant::Observed);

    FitControl ctl = fast_control();
    auto spec = make_sim6_spec();
    FitResult f1 = naive_fit(view, NaiveVariant::Naive1, spec, ctl);
    FitResult f2 = naive_fit(view, NaiveVariant::Naive2, spec, ctl);
    // review hazards are inestimable on clean data, so the naive fits carry
    // their start values; the reference fit must use the same plug-in
    FitResult fo = classical_fit(view, spec, f1.g, ctl, "oracle");
    for (int k = 0; k < 7; ++k) {
        CHECK(f1.theta[k] == doctest::Approx(f2.theta[k]).epsilon(1e-9));
        CHECK(f1.theta[k] == doctest::Approx(fo.theta[k]).epsilon(1e-9));
    }
}

TEST_CASE("bootstrap basics: determinism, order statistics, widening") {
    ScenarioConfig cfg;
    cfg.n = 250;
    cfg.seed = 606;
    auto sim = generate_sample(cfg);
    auto obs = build_views(sim, ViewVariant::Observed);

    FitControl ctl = fast_control();
    ctl.focus = {{2, 3}};  // keep the test quick: theta7 block only
    auto spec = make_sim6_spec();

    auto a = bootstrap_fit(obs, spec, 12, 99, ctl, false, {0.5, 0.9}, 2);
    auto b = bootstrap_fit(obs, spec, 12, 99, ctl, false, {0.5, 0.9}, 1);
    REQUIRE(a.theta_rows.size() == b.theta_rows.size());
    for (std::size_t i = 0; i < a.theta_rows.size(); ++i)
        CHECK(a.theta_rows[i][6] == b.theta_rows[i][6]);

    // intervals are order statistics and widen with the level
    std::vector<double> col;
    for (const auto& row : a.theta_rows) col.push_back(row[6]);
    std::sort(col.begin(), col.end());
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
        const auto [lo, hi] = a.intervals[l][6];
        CHECK(std::binary_search(col.begin(), col.end(), lo));
        CHECK(std::binary_search(col.begin(), col.end(), hi));
        CHECK(lo <= hi);
    }
    CHECK(a.intervals[1][6].second - a.intervals[1][6].first >=
          a.intervals[0][6].second - a.intervals[0][6].first);

    // two resamples only: degenerate intervals from two rows
    auto tiny = bootstrap_fit(obs, spec, 2, 7, ctl, false, {0.95}, 1);
    CHECK(tiny.theta_rows.size() + tiny.failures == 2);
}
