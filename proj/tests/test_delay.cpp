#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msdelay/delay.hpp"
#include "msdelay/rng.hpp"
#include "test_support.hpp"

using namespace msdelay;

namespace {

DelayModel weibull(double lambda, double k, std::vector<double> beta) {
    DelayModel m;
    m.lambda = lambda;
    m.shape = k;
    m.beta = std::move(beta);
    return m;
}

}  // namespace

TEST_CASE("delay cdf limits") {
    DelayModel m = weibull(2.0, 0.5, {0.1});
    std::vector<double> x0{0.0};
    CHECK(delay_cdf(m, 0.0, x0) == 0.0);
    CHECK(delay_cdf(m, 1e9, x0) == doctest::Approx(1.0));
    // monotone
    double prev = 0.0;
    for (double t = 0.1; t < 10.0; t += 0.1) {
        const double c = delay_cdf(m, t, x0);
        CHECK(c >= prev);
        prev = c;
    }
}

TEST_CASE("cdf equals exp of the integrated reverse hazard") {
    // oracle: adaptive quadrature of alpha from t to a large bound
    DelayModel m = weibull(2.0, 0.5, {0.1});
    std::vector<double> x1{1.0};
    const double t = 1.0;
    const double upper = 4000.0;
    const double integral = testsupport::adaptive_simpson(
        [&](double s) { return reverse_hazard(m, s, x1); }, t, upper, 1e-13);
    CHECK(delay_cdf(m, t, x1) == doctest::Approx(std::exp(-integral)).epsilon(1e-8));
}

TEST_CASE("reverse hazard closed forms and finite differences") {
    // k = 1: alpha0(t) = lambda / (exp(lambda t) - 1); at lambda=1, t=log 2 -> 1
    DelayModel m1 = weibull(1.0, 1.0, {});
    std::vector<double> none{};
    CHECK(reverse_hazard(m1, std::log(2.0), none) == doctest::Approx(1.0));

    // zero covariates reduce to the baseline
    DelayModel m = weibull(2.0, 0.5, {0.7});
    std::vector<double> x0{0.0};
    CHECK(reverse_hazard(m, 0.8, x0) == doctest::Approx(m.base_reverse_hazard(0.8)));

    CHECK_THROWS_AS(reverse_hazard(m, 0.0, x0), NumericalError);

    // d/dt log CDF = alpha by central differences
    std::vector<double> x1{1.0};
    for (double t : {0.3, 0.9, 2.0}) {
        const double h = 1e-6;
        const double fd =
            (delay_log_cdf(m, t + h, x1) - delay_log_cdf(m, t - h, x1)) / (2.0 * h);
        CHECK(fd == doctest::Approx(reverse_hazard(m, t, x1)).epsilon(1e-6));
    }
}

TEST_CASE("cumulative reverse-hazard identity on random parameters") {
    Rng rng = make_rng(99, 0);
    for (int rep = 0; rep < 50; ++rep) {
        DelayModel m = weibull(0.3 + 3.0 * rng.uniform01(), 0.3 + 2.0 * rng.uniform01(),
                               {rng.uniform(-0.5, 0.5)});
        std::vector<double> x{rng.uniform(-2.0, 2.0)};
        const double a = 0.05 + rng.uniform01();
        const double b = a + rng.uniform01() * 2.0;
        const double lhs = testsupport::adaptive_simpson(
            [&](double s) { return reverse_hazard(m, s, x); }, a, b, 1e-13);
        const double rhs = delay_log_cdf(m, b, x) - delay_log_cdf(m, a, x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("sampling matches the cdf and the stated moments") {
    DelayModel m = weibull(2.0, 0.5, {0.1});
    std::vector<double> x0{0.0};
    Rng rng = make_rng(7, 1);
    const int n = 100000;
    std::vector<double> draws(n);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        draws[i] = sample_delay(m, x0, rng);
        CHECK(draws[i] >= 0.0);
        mean += draws[i];
    }
    mean /= n;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.03));

    const double d = testsupport::ks_statistic(
        draws, [&](double t) { return delay_cdf(m, t, x0); });
    CHECK(d < 0.01);
    CHECK(d < testsupport::ks_critical(0.001, n));
}

TEST_CASE("sampling passes KS at level 0.001 for random parameter settings") {
    Rng prng = make_rng(13, 5);
    for (int rep = 0; rep < 20; ++rep) {
        DelayModel m = weibull(0.5 + 2.5 * prng.uniform01(), 0.4 + 1.6 * prng.uniform01(),
                               {prng.uniform(-0.3, 0.3)});
        std::vector<double> x{prng.uniform(-2.0, 2.0)};
        Rng rng = make_rng(1301, 100 + rep);
        const int n = 100000;
        std::vector<double> draws(n);
        for (int i = 0; i < n; ++i) draws[i] = sample_delay(m, x, rng);
        const double d = testsupport::ks_statistic(
            draws, [&](double t) { return delay_cdf(m, t, x); });
        CHECK(d < testsupport::ks_critical(0.001, n));
    }
}

TEST_CASE("larger covariate effect stochastically increases draws") {
    DelayModel m = weibull(2.0, 0.5, {0.5});
    Rng r1 = make_rng(3, 0), r2 = make_rng(3, 0);  // common random numbers
    std::vector<double> lo{-1.0}, hi{1.0};
    int dominated = 0;
    for (int i = 0; i < 2000; ++i)
        if (sample_delay(m, hi, r2) >= sample_delay(m, lo, r1)) ++dominated;
    CHECK(dominated == 2000);  // the inverse transform is monotone in x'beta
}

TEST_CASE("delay log-likelihood terms") {
    DelayModelSet set;
    set.models[{1, 2}] = weibull(2.0, 0.5, {});
    const double eta = 5.0;

    SubjectRecord none;
    none.truncation = 0.0;
    none.censoring = 4.0;
    CHECK(delay_loglik(none, set, true, eta) == 0.0);

    // reported exactly at eta: truncation window degenerates, only log alpha
    SubjectRecord r;
    r.truncation = 0.0;
    r.censoring = 4.0;
    const double t = 3.0, u = eta - t;
    r.events = {ReportedEvent{t, 2, u, AdjudicationTrack::trivially_confirmed(t + u)}};
    std::vector<double> covs{};
    CHECK(delay_loglik(r, set, true, eta) ==
          doctest::Approx(std::log(reverse_hazard(set.models[{1, 2}], u, covs))));

    // quadrature oracle for the truncation integral
    SubjectRecord q;
    q.truncation = 0.0;
    q.censoring = 4.0;
    q.events = {ReportedEvent{2.0, 2, 0.7, AdjudicationTrack::trivially_confirmed(2.7)}};
    const DelayModel& dm = set.models[{1, 2}];
    const double integral = testsupport::adaptive_simpson(
        [&](double s) { return reverse_hazard(dm, s, covs); }, 0.7, eta - 2.0, 1e-13);
    const double expect = std::log(reverse_hazard(dm, 0.7, covs)) - integral;
    CHECK(delay_loglik(q, set, true, eta) == doctest::Approx(expect).epsilon(1e-9));

    // exclusion branch drops the last event's term
    CHECK(delay_loglik(q, set, false, eta) == 0.0);

    // zero delay hits the configured floor
    SubjectRecord z = q;
    z.events[0].delay = 0.0;
    z.events[0].track = AdjudicationTrack::trivially_confirmed(2.0);
    CHECK(delay_loglik(z, set, true, eta) == doctest::Approx(dm.log_floor));
}

TEST_CASE("imputed delay likelihood is the convex branch combination") {
    DelayModelSet set;
    set.models[{1, 2}] = weibull(1.0, 1.5, {});
    const double eta = 5.0;
    SubjectRecord r;
    r.truncation = 0.0;
    r.censoring = 4.0;
    r.events = {ReportedEvent{1.0, 2, 0.4, AdjudicationTrack::trivially_confirmed(1.4)},
                ReportedEvent{2.0, 3, 0.0, AdjudicationTrack{2.0, 1, {}, AdjOutcome::Pending,
                                                             std::nullopt}}};
    // give the pending event a delay model so both branches differ
    set.models[{2, 3}] = weibull(1.0, 1.0, {});
    r.events[1].delay = 0.9;
    r.events[1].track.report_time = 2.9;

    const double l1 = delay_loglik(r, set, true, eta);
    const double l0 = delay_loglik(r, set, false, eta);
    CHECK(imputed_delay_loglik(r, set, 1.0, eta) == doctest::Approx(l1));
    CHECK(imputed_delay_loglik(r, set, 0.0, eta) == doctest::Approx(l0));
    CHECK(imputed_delay_loglik(r, set, 0.5, eta) == doctest::Approx(0.5 * (l0 + l1)));
}

TEST_CASE("reordering a subject's events leaves the delay likelihood unchanged") {
    DelayModelSet set;
    set.models[{1, 2}] = weibull(1.3, 0.8, {0.2});
    set.models[{2, 1}] = weibull(1.3, 0.8, {0.2});
    const double eta = 6.0;
    SubjectRecord r;
    r.x = {0.4};
    r.truncation = 0.0;
    r.censoring = 5.0;
    r.events = {ReportedEvent{1.0, 2, 0.5, AdjudicationTrack::trivially_confirmed(1.5)},
                ReportedEvent{2.5, 1, 0.8, AdjudicationTrack::trivially_confirmed(3.3)}};
    const double a = delay_loglik(r, set, true, eta);
    // manual term-by-term sum in the opposite order
    const EventPath path = r.reported_path();
    double b = 0.0;
    for (int m : {1, 0}) {
        const auto& e = r.events[m];
        const DelayModel& dm = *set.model_for({path.state_at(e.time), e.mark});
        auto covs = dm.covariates(path, e.time, r.x);
        b += delay_event_term(dm, e.delay, eta - e.time, covs);
    }
    CHECK(a == doctest::Approx(b));
}

TEST_CASE("shifting eta moves only the truncation integral") {
    // right-truncation enters through log CDF(eta - T) alone, so the term
    // difference across two horizons is a pure log-CDF difference
    DelayModelSet set;
    set.models[{1, 2}] = weibull(1.7, 0.9, {0.3});
    SubjectRecord r;
    r.x = {0.8};
    r.truncation = 0.0;
    r.censoring = 3.5;
    r.events = {ReportedEvent{1.2, 2, 0.6, AdjudicationTrack::trivially_confirmed(1.8)}};
    const DelayModel& dm = set.models[{1, 2}];
    auto covs = dm.covariates(r.reported_path(), 1.2, r.x);
    for (double eta2 : {5.5, 6.0, 8.0}) {
        const double diff = delay_loglik(r, set, true, 5.0) - delay_loglik(r, set, true, eta2);
        const double expect =
            delay_log_cdf(dm, 5.0 - 1.2, covs) - delay_log_cdf(dm, eta2 - 1.2, covs);
        CHECK(diff == doctest::Approx(-expect).epsilon(1e-12));
    }
}

TEST_CASE("gamma reverse hazard family") {
    // P(1, x) = 1 - exp(-x): reverse hazard lambda e^{-lambda t} / (1 - e^{-lambda t})
    DelayModel g;
    g.family = DelayFamily::GammaReverseHazard;
    g.lambda = 1.5;
    g.shape = 1.0;
    std::vector<double> none{};
    const double t = 0.9;
    const double expect = 1.5 * std::exp(-1.5 * t) / (1.0 - std::exp(-1.5 * t));
    CHECK(reverse_hazard(g, t, none) == doctest::Approx(expect).epsilon(1e-10));

    // sampling by numeric inversion still matches the cdf
    g.shape = 2.0;
    Rng rng = make_rng(21, 0);
    std::vector<double> draws(20000);
    for (auto& d : draws) d = sample_delay(g, none, rng);
    const double ks = testsupport::ks_statistic(
        draws, [&](double s) { return delay_cdf(g, s, none); });
    CHECK(ks < testsupport::ks_critical(0.001, draws.size()));
}

TEST_CASE("fit recovers a single-parameter delay model against a grid oracle") {
    // exponential-truncation score: k fixed at 1, lambda free
    const double eta = 5.0;
    DelayModel truth = weibull(1.6, 1.0, {});
    Rng rng = make_rng(31, 2);
    Dataset data;
    data.eta = eta;
    std::vector<double> none{};
    for (int i = 0; i < 400; ++i) {
        SubjectRecord r;
        r.truncation = 0.0;
        r.censoring = 4.5;
        const double t = rng.uniform(0.5, 4.0);
        const double u = sample_delay(truth, none, rng);
        if (t + u > eta) continue;
        r.events = {ReportedEvent{t, 2, u, AdjudicationTrack::trivially_confirmed(t + u)}};
        data.subjects.push_back(r);
    }
    std::vector<double> weights(data.subjects.size(), 1.0);

    // profile objective over lambda with shape pinned by a huge penalty-free fit:
    // optimize both but compare the lambda coordinate to a 1-d grid search with
    // shape frozen at 1
    auto loglik_at = [&](double lambda) {
        DelayModelSet s;
        DelayModel m = weibull(lambda, 1.0, {});
        s.models[{1, 2}] = m;
        double sum = 0.0;
        for (const auto& r : data.subjects) sum += delay_loglik(r, s, true, eta);
        return sum;
    };
    double best_l = 0.0, best_v = -1e300;
    for (double l = 0.5; l <= 3.5; l += 1e-4) {
        const double v = loglik_at(l);
        if (v > best_v) { best_v = v; best_l = l; }
    }

    // 1-d fit through the optimizer with shape held at its true value by a
    // start exactly on the profile: optimize lambda only via a wrapper
    OptimizerConfig opt;
    opt.simplex_tolerance = 1e-12;
    auto res = nelder_mead_maximize(
        [&](const std::vector<double>& p) { return loglik_at(std::exp(p[0])); },
        {std::log(1.0)}, opt);
    CHECK(std::exp(res.argmax[0]) == doctest::Approx(best_l).epsilon(1e-4));

    // full fit comes out near the truth
    auto fit = fit_delay_model(data, weights, weibull(1.0, 1.0, {}), {{1, 2}}, opt);
    CHECK(fit.model.lambda == doctest::Approx(truth.lambda).epsilon(0.15));
    CHECK(fit.model.shape == doctest::Approx(truth.shape).epsilon(0.15));

    // all-zero weights carry no information when every event is pending
    Dataset pend;
    pend.eta = eta;
    SubjectRecord p;
    p.truncation = 0.0;
    p.censoring = 4.0;
    p.events = {ReportedEvent{1.0, 2, 0.3,
                              AdjudicationTrack{1.3, 1, {}, AdjOutcome::Pending, std::nullopt}}};
    pend.subjects = {p};
    CHECK_THROWS_AS(fit_delay_model(pend, {0.0}, weibull(1.0, 1.0, {}), {{1, 2}}, opt),
                    DataError);
}
