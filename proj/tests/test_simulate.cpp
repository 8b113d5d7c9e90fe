#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msdelay/simulate.hpp"
#include "test_support.hpp"

using namespace msdelay;

TEST_CASE("erfi taylor expansion") {
    CHECK(erfi_taylor(0.0) == 0.0);
    CHECK(erfi_taylor(-0.4) == doctest::Approx(-erfi_taylor(0.4)).epsilon(1e-15));
    // against the converged series
    CHECK(std::abs(erfi_taylor(0.5) - erfi_series(0.5)) < 1e-7);
    for (double z = 0.0; z <= 0.84; z += 0.02)
        CHECK(std::abs(erfi_taylor(z) - erfi_series(z)) < 1e-7);
    // a spot value: erfi(1) = 1.6504257587975428
    CHECK(erfi_series(1.0) == doctest::Approx(1.6504257587975428).epsilon(1e-12));
}

TEST_CASE("confirmation probability closed form") {
    const std::vector<double> g{0.8, -1.2};
    CHECK(p_confirm(0.0, g) == doctest::Approx(0.0));
    CHECK(p_confirm(2.0, g) ==
          doctest::Approx((1.0 - std::exp(-1.6)) * (1.0 - std::exp(1.0 / -1.2))).epsilon(1e-14));
    CHECK(p_confirm(2.0, g) == doctest::Approx(0.4513).epsilon(2e-4));
    CHECK_THROWS_AS(p_confirm(1.0, std::vector<double>{0.8, 0.1}), NumericalError);

    // average over X ~ Uniform(-4, 4) is about 0.37
    const double avg =
        simpson([&](double x) { return p_confirm(x, g); }, -4.0, 4.0, 2048) / 8.0;
    CHECK(avg == doctest::Approx(0.37).epsilon(0.02));
}

TEST_CASE("thinned 2->3 hazard limits") {
    const std::vector<double> g{0.8, -1.2};
    const double th7 = -0.3;
    // d = 0: mu~(0) = 1, survivor 1, denominator 1 -> p(x)
    CHECK(mu23_star(0.0, 2.0, th7, g) == doctest::Approx(p_confirm(2.0, g)).epsilon(1e-12));
    // x -> 0: p(x) -> 0 kills the rate
    CHECK(mu23_star(1.0, 1e-9, th7, g) == doctest::Approx(0.0));
    // removable singularity of the exponent at theta7 x^2 = 0
    CHECK(mu23_star(1.0, 1e-4, th7, g) ==
          doctest::Approx(p_confirm(1e-4, g) * std::exp(-1.0) /
                          (1.0 - p_confirm(1e-4, g) * (1.0 - std::exp(-1.0))))
              .epsilon(1e-5));
}

TEST_CASE("state-1 cumulative exit hazard matches quadrature") {
    ScenarioConfig cfg;
    const double x = 1.0;
    auto mu_total = [&](double s) {
        const auto& th = cfg.theta;
        const double m12 =
            std::exp(th[0] + th[1] * (s + x) + th[2] * std::sin(0.5 * std::numbers::pi * x));
        const double m13 =
            std::exp(th[3] + th[4] * s * s + th[5] * std::cos(0.5 * std::numbers::pi * x));
        return m12 + m13;
    };
    const double diff = cumulative_exit_hazard_state1(3.0, x, cfg.theta) -
                        cumulative_exit_hazard_state1(0.0, x, cfg.theta);
    const double oracle = testsupport::adaptive_simpson(mu_total, 0.0, 3.0, 1e-12);
    CHECK(diff == doctest::Approx(oracle).epsilon(1e-6));

    // decoupled pieces at theta3 = theta6 = 0, x = 0
    auto th0 = cfg.theta;
    th0[2] = th0[5] = 0.0;
    const double d2 = cumulative_exit_hazard_state1(2.0, 0.0, th0) -
                      cumulative_exit_hazard_state1(0.0, 0.0, th0);
    const double exp_part = 0.15 * (std::exp(0.1 * 2.0) - 1.0) / 0.1;
    const double gauss_part = testsupport::adaptive_simpson(
        [&](double s) { return 0.1 * std::exp(0.03 * s * s); }, 0.0, 2.0, 1e-13);
    CHECK(d2 == doctest::Approx(exp_part + gauss_part).epsilon(1e-7));
}

TEST_CASE("lewis thinning has the right first-jump law") {
    // constant intensity c with a tight envelope
    Rng rng = make_rng(11, 0);
    const double c = 0.8;
    auto intensity = [&](double) { return c; };
    const int n = 100000;
    std::vector<double> jumps;
    jumps.reserve(n);
    int none = 0;
    for (int i = 0; i < n; ++i) {
        auto j = lewis_thinning(intensity, Envelope::constant(0.0, 50.0, c), 0.0, 50.0, rng);
        if (j) jumps.push_back(*j);
        else ++none;
    }
    CHECK(none < 5);  // exp(-40) chance each
    const double d = testsupport::ks_statistic(
        jumps, [&](double t) { return 1.0 - std::exp(-c * t); });
    CHECK(d < testsupport::ks_critical(0.001, jumps.size()));

    // zero intensity never fires
    auto never = lewis_thinning([](double) { return 0.0; },
                                Envelope::constant(0.0, 10.0, 1.0), 0.0, 10.0, rng);
    CHECK(!never);

    // envelope violation is a hard error
    CHECK_THROWS_AS(lewis_thinning([](double) { return 2.0; },
                                   Envelope::constant(0.0, 10.0, 1.0), 0.0, 10.0, rng),
                    EnvelopeViolation);

    // inhomogeneous intensities with closed-form first-jump laws
    Rng rng2 = make_rng(11, 1);
    for (int kcase = 0; kcase < 10; ++kcase) {
        const double a = 0.2 + 0.15 * kcase, b = 0.1 + 0.07 * kcase;
        auto rate = [&](double t) { return a + b * t; };  // cumulative a t + b t^2 / 2
        std::vector<double> sample;
        for (int i = 0; i < 20000; ++i) {
            auto j = lewis_thinning(rate, Envelope::piecewise_grid_max(rate, 0.0, 30.0, 16, 8),
                                    0.0, 30.0, rng2);
            if (j) sample.push_back(*j);
        }
        const double dk = testsupport::ks_statistic(sample, [&](double t) {
            return 1.0 - std::exp(-(a * t + 0.5 * b * t * t));
        });
        CHECK(dk < testsupport::ks_two_sample_critical(0.001, sample.size(), sample.size()) +
                       testsupport::ks_critical(0.001, sample.size()));
    }
}

TEST_CASE("benchmark sample calibration") {
    ScenarioConfig cfg;
    cfg.n = 1500;
    cfg.seed = 2024;
    const int reps = 16;
    double c12 = 0.0, c13 = 0.0, c23 = 0.0;
    std::vector<double> means1, means2;
    for (int r = 0; r < reps; ++r) {
        cfg.seed = 2024 + r;
        auto sim = generate_sample(cfg);
        auto s = summarize(sim);
        c12 += s.generated_counts[{1, 2}];
        c13 += s.generated_counts[{1, 3}];
        c23 += s.generated_counts[{2, 3}];
        means1.push_back(s.delay_mean_from1);
        means2.push_back(s.delay_mean_from2);
    }
    c12 /= reps; c13 /= reps; c23 /= reps;
    // paper-scale means, generous bands at this replication count
    CHECK(c12 == doctest::Approx(415.0).epsilon(0.10));
    CHECK(c13 == doctest::Approx(260.0).epsilon(0.10));
    CHECK(c23 == doctest::Approx(180.0).epsilon(0.10));
    CHECK(testsupport::mean(means1) == doctest::Approx(1.0).epsilon(0.10));
    CHECK(testsupport::mean(means2) == doctest::Approx(1.0).epsilon(0.10));
    // the per-dataset mean delays fluctuate with SDs near 0.15 / 0.05
    const double sd1 = testsupport::sample_sd(means1);
    const double sd2 = testsupport::sample_sd(means2);
    CHECK(sd1 > 0.07);
    CHECK(sd1 < 0.25);
    CHECK(sd2 > 0.02);
    CHECK(sd2 < 0.09);
}

TEST_CASE("same seed reproduces the sample bit for bit") {
    ScenarioConfig cfg;
    cfg.n = 40;
    cfg.seed = 5;
    auto a = generate_sample(cfg);
    auto b = generate_sample(cfg);
    REQUIRE(a.truth.size() == b.truth.size());
    for (std::size_t i = 0; i < a.truth.size(); ++i) {
        CHECK(a.truth[i].x == b.truth[i].x);
        CHECK(a.truth[i].censoring == b.truth[i].censoring);
        REQUIRE(a.truth[i].events.size() == b.truth[i].events.size());
        for (std::size_t e = 0; e < a.truth[i].events.size(); ++e) {
            CHECK(a.truth[i].events[e].time == b.truth[i].events[e].time);
            CHECK(a.truth[i].events[e].delay == b.truth[i].events[e].delay);
            CHECK(a.truth[i].events[e].xi == b.truth[i].events[e].xi);
        }
    }
}

TEST_CASE("views apply the expected filters") {
    ScenarioConfig cfg;
    cfg.n = 600;
    cfg.seed = 77;
    auto sim = generate_sample(cfg);
    auto observed = build_views(sim, ViewVariant::Observed);
    auto oracle = build_views(sim, ViewVariant::Oracle);
    auto naive1 = build_views(sim, ViewVariant::Naive1);
    auto naive2 = build_views(sim, ViewVariant::Naive2);

    std::size_t obs_events = 0, oracle_events = 0, pending = 0, naive1_pending = 0;
    for (const auto& r : observed.subjects) {
        obs_events += r.events.size();
        if (r.has_pending()) ++pending;
    }
    for (const auto& r : oracle.subjects) oracle_events += r.events.size();
    for (const auto& r : naive1.subjects)
        if (r.has_pending()) ++naive1_pending;
    CHECK(pending > 0);
    CHECK(naive1_pending == 0);  // unrefuted events all confirmed

    // oracle keeps unreported events but drops rejected ones
    std::size_t truth_confirmed = 0, truth_reported = 0;
    for (const auto& t : sim.truth)
        for (const auto& e : t.events) {
            if (e.xi) ++truth_confirmed;
            if (e.reported) ++truth_reported;
        }
    CHECK(oracle_events == truth_confirmed);
    CHECK(obs_events == truth_reported);

    // back-censoring truncates both the window and stale pending events
    for (const auto& r : naive2.subjects) {
        CHECK(r.censoring <= cfg.eta - 1.0 + 1e-12);
        for (const auto& e : r.events) CHECK(e.time <= r.censoring + 1e-12);
    }

    // both back-censoring rules: an event in the final year is dropped, and a
    // review pending for over two years is dropped; naive1 keeps either
    SimulatedData tiny;
    tiny.cfg = cfg;
    SimSubject s;
    s.x = {1.0};
    s.truncation = 0.1;
    s.censoring = 4.9;
    SimEvent late;
    late.time = 4.5;  // inside the back-censored final year
    late.mark = 2;
    late.reported = true;
    late.xi = true;
    late.track = AdjudicationTrack::trivially_confirmed(4.5);
    s.events = {late};
    tiny.truth = {s};
    CHECK(build_views(tiny, ViewVariant::Naive1).subjects[0].events.size() == 1);
    CHECK(build_views(tiny, ViewVariant::Naive2).subjects[0].events.empty());

    SimSubject s2 = s;
    SimEvent stale;
    stale.time = 1.0;
    stale.mark = 2;
    stale.delay = 1.5;  // reported at 2.5, still pending 2.5 years later
    stale.reported = true;
    stale.xi = true;
    stale.track.report_time = 2.5;
    stale.track.outcome = AdjOutcome::Pending;
    s2.events = {stale};
    tiny.truth = {s2};
    CHECK(build_views(tiny, ViewVariant::Naive1).subjects[0].events.size() == 1);
    CHECK(build_views(tiny, ViewVariant::Naive2).subjects[0].events.empty());
}

TEST_CASE("xi-thinned generator sojourns match the closed-form hazard") {
    // two-sample KS between (a) mu~ sojourns thinned by the review chain and
    // (b) sojourns drawn directly from mu*_23, at fixed covariate values
    const std::vector<double> g{0.8, -1.2};
    const double th7 = -0.3;
    const double dmax = 40.0;
    for (double x : {1.0, 2.0}) {
        Rng rng = make_rng(404, static_cast<std::uint64_t>(10 * x));
        const AdjudicationModel adj = sim6_adjudication_model(g);
        std::vector<double> thinned, direct;
        auto mu_tilde = [&](double d) { return std::exp(th7 * d * x * x); };
        auto mu_star = [&](double d) { return mu23_star(d, x, th7, g); };
        const std::vector<double> xs{x};
        while (thinned.size() < 10000) {
            auto d = lewis_thinning(mu_tilde, Envelope::piecewise_grid_max(mu_tilde, 0.0, dmax),
                                    0.0, dmax, rng);
            if (!d) continue;
            // long-run review of a jump reported immediately
            ReportedEvent stub{*d, 3, 0.0, AdjudicationTrack{}};
            auto track = simulate_adjudication(adj, stub, *d, *d + 900.0, xs, rng);
            if (track.outcome == AdjOutcome::Confirmed) thinned.push_back(*d);
        }
        while (direct.size() < 10000) {
            auto d = lewis_thinning(mu_star, Envelope::piecewise_grid_max(mu_star, 0.0, dmax),
                                    0.0, dmax, rng);
            if (d) direct.push_back(*d);
        }
        const double ks = testsupport::ks_two_sample(thinned, direct);
        CHECK(ks < testsupport::ks_two_sample_critical(0.001, thinned.size(), direct.size()));
    }
}
