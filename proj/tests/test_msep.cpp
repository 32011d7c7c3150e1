#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "credmort/msep.hpp"
#include "credmort/popsim.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace credmort;

namespace {

// LC surface with a linear period index; Poisson deaths unless `exact`.
MortalityTable lc_table(double exposure, bool exact, std::uint64_t seed) {
    const IntRange ages{50, 69}, years{1991, 2010};
    Matrix<double> e(ages.size(), years.size(), exposure), d(ages.size(), years.size());
    std::mt19937_64 gen(seed);
    for (std::size_t ix = 0; ix < ages.size(); ++ix) {
        for (std::size_t it = 0; it < years.size(); ++it) {
            const double kappa = 2.0 - 0.2 * static_cast<double>(it);
            const double m = std::exp(-6.0 + 0.08 * static_cast<double>(ix) + 0.05 * kappa);
            if (exact) {
                d(ix, it) = exposure * m;
            } else {
                std::poisson_distribution<long long> p(exposure * m);
                d(ix, it) = static_cast<double>(p(gen));
            }
        }
    }
    return {"1", ages, years, e, d};
}

}  // namespace

TEST_CASE("closed form examples") {
    const std::vector<double> w1{10.0, 20.0};
    const auto zero = msep_closed_form(0.01, 0.0, 0.04, 0.0, w1);
    CHECK(zero.msep == doctest::Approx(4e-6).epsilon(1e-14));

    const std::vector<double> w{2.5, 5.0};
    const auto d = msep_closed_form(0.02, 1e-6, 0.04, 0.5, w);
    CHECK(d.var_theta_hat == doctest::Approx(0.04 * 31.25 / 56.25 + 1.0 / 7.5).epsilon(1e-14));
    CHECK(d.var_theta_hat == doctest::Approx(0.1555555555555556).epsilon(1e-14));
    CHECK(d.var_mu_theta == doctest::Approx(1e-6 * 1.04 + 4e-4 * 0.04).epsilon(1e-14));
    CHECK(d.msep == doctest::Approx(1.04e-6 + 1.6e-5 + 0.25 * 4e-4 * (0.04 * 31.25 / 56.25 + 1.0 / 7.5)).epsilon(1e-14));
    CHECK(d.msep == doctest::Approx(3.259e-5).epsilon(1e-3));
    CHECK(d.msep == d.var_mu_theta + d.z * d.z * d.mu_bar * d.mu_bar * d.var_theta_hat);

    const auto r = msep_closed_form(0.02, 0.0, 0.0, 0.3, w);
    CHECK(r.msep == doctest::Approx(0.09 * 4e-4 / 7.5).epsilon(1e-14));

    const std::vector<double> none{0.0, 0.0};
    CHECK_THROWS_AS((void)msep_closed_form(0.02, 0.0, 0.04, 0.5, none), std::invalid_argument);
}

TEST_CASE("closed form is monotone in V and sigma2") {
    const std::vector<double> w{3.0, 4.0, 8.0};
    double prev = -1.0;
    for (double v = 0.0; v < 1.0; v += 0.05) {
        const auto d = msep_closed_form(0.01, 1e-6, v, 0.4, w);
        CHECK(d.msep > prev);
        CHECK(d.var_mu_theta >= 0.0);
        CHECK(d.var_theta_hat >= 0.0);
        prev = d.msep;
    }
    prev = -1.0;
    for (double s2 = 0.0; s2 < 1e-4; s2 += 1e-5) {
        const double m = msep_closed_form(0.01, s2, 0.05, 0.4, w).msep;
        CHECK(m > prev);
        prev = m;
    }
}

TEST_CASE("common-effect form") {
    const std::vector<double> w{2.5, 5.0};
    const double W = 7.5, V = 0.04, mb = 0.02, s2 = 1e-6, z = 0.5;
    CHECK(msep_common_effect(mb, s2, V, z, w) ==
          doctest::Approx(s2 * (V + 1) + mb * mb * ((1 - z) * (1 - z) * V + z * z / W)).epsilon(1e-14));
    // Optimal z for the shared effect is the credibility weight.
    const double zs = credibility_weight(W, V);
    CHECK(msep_common_effect(mb, s2, V, zs, w) < msep_common_effect(mb, s2, V, zs + 0.01, w));
    CHECK(msep_common_effect(mb, s2, V, zs, w) < msep_common_effect(mb, s2, V, zs - 0.01, w));
}

TEST_CASE("theta sampler moments") {
    for (auto law : {ThetaLaw::Lognormal, ThetaLaw::TwoPoint}) {
        ThetaSampler s(law, 0.05);
        CounterRng rng(stream_key(5, {static_cast<std::uint64_t>(law)}));
        const std::size_t n = 1'000'000;
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = s(rng);
            CHECK_FALSE(t <= 0.0);
            a += t;
            b += t * t;
        }
        const double mean = a / n;
        CHECK(mean == doctest::Approx(1.0).epsilon(0.002));
        CHECK(b / n - mean * mean == doctest::Approx(0.05).epsilon(0.01));
    }
    CHECK_THROWS_AS(ThetaSampler(ThetaLaw::TwoPoint, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ThetaSampler(ThetaLaw::Lognormal, -0.1), std::invalid_argument);
}

TEST_CASE("coefficient of variation of mu Theta is the standard deviation of Theta") {
    for (auto law : {ThetaLaw::Lognormal, ThetaLaw::TwoPoint}) {
        ThetaSampler s(law, 0.2);
        CounterRng rng(stream_key(6, {1}));
        const double mu = 0.0137;
        const std::size_t n = 200'000;
        double a = 0.0, b = 0.0, am = 0.0, bm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = s(rng);
            a += t;
            b += t * t;
            am += mu * t;
            bm += mu * t * mu * t;
        }
        const double var = b / n - (a / n) * (a / n);
        const double cv = std::sqrt(bm / n - (am / n) * (am / n)) / (am / n);
        // 1 / Var(Theta) = 1 / CV(mu Theta)^2 with the sample mean of Theta in place of 1.
        CHECK(1.0 / (cv * cv) == doctest::Approx((a / n) * (a / n) / var).epsilon(1e-9));
        CHECK(1.0 / (cv * cv) == doctest::Approx(1.0 / 0.2).epsilon(0.02));
    }
}

TEST_CASE("Monte Carlo agrees with the closed form on the spec example") {
    const std::vector<double> w{2.5, 5.0};
    MonteCarloSpec spec;
    spec.seed = 11;
    const auto mc = msep_monte_carlo(0.02, 1e-6, 0.04, 0.5, w, spec);
    const auto cf = msep_closed_form(0.02, 1e-6, 0.04, 0.5, w);
    MESSAGE("MC " << mc.msep << " +- " << mc.std_error << " closed form " << cf.msep);
    CHECK(std::abs(mc.msep / cf.msep - 1.0) < 0.05);

    spec.sharing = EffectSharing::Shared;
    spec.n_sims = 400'000;
    const auto sh = msep_monte_carlo(0.02, 1e-6, 0.04, 0.5, w, spec);
    const double ce = msep_common_effect(0.02, 1e-6, 0.04, 0.5, w);
    CHECK(std::abs(sh.msep - ce) < 4.0 * sh.std_error);
}

TEST_CASE("Monte Carlo degenerate limit and seed stability") {
    const std::vector<double> huge{1e9, 1e9};
    MonteCarloSpec spec;
    spec.n_sims = 20'000;
    const auto z = msep_monte_carlo(0.01, 0.0, 0.0, 0.5, huge, spec);
    CHECK(z.msep < 1e-12);

    const std::vector<double> w{4.0, 6.0, 9.0};
    spec.n_sims = 200'000;
    spec.seed = 21;
    const auto a = msep_monte_carlo(0.015, 1e-6, 0.03, 0.6, w, spec);
    spec.seed = 42;
    const auto b = msep_monte_carlo(0.015, 1e-6, 0.03, 0.6, w, spec);
    CHECK(std::abs(a.msep - b.msep) < 3.0 * std::hypot(a.std_error, b.std_error));
}

TEST_CASE("Monte Carlo result does not depend on thread count") {
    const std::vector<double> w{4.0, 6.0};
    MonteCarloSpec spec;
    spec.n_sims = 300'000;
    spec.threads = 1;
    const auto one = msep_monte_carlo(0.015, 1e-6, 0.03, 0.6, w, spec);
    spec.threads = 3;
    const auto three = msep_monte_carlo(0.015, 1e-6, 0.03, 0.6, w, spec);
    CHECK(one.msep == three.msep);
    CHECK(one.std_error == three.std_error);
}

TEST_CASE("Poisson bounds") {
    const auto a = poisson_bounds(0.01, 1e6);
    CHECK(0.5 * (a.upper - a.lower) == doctest::Approx(1e-4).epsilon(1e-12));
    const auto b = poisson_bounds(0.01, 100);
    CHECK(0.5 * (b.upper - b.lower) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(b.lower == doctest::Approx(0.0));
    // Half-width scales as E^(-1/2).
    const auto c = poisson_bounds(0.02, 400), d = poisson_bounds(0.02, 1600);
    CHECK((c.upper - c.lower) / (d.upper - d.lower) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS((void)poisson_bounds(0.01, 0.0), std::invalid_argument);

    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> lmu(std::log(1e-3), std::log(0.1)), le(std::log(1e3), std::log(1e5));
    for (int i = 0; i < 10; ++i) {
        const double mu = std::exp(lmu(gen)), e = std::exp(le(gen));
        const auto an = poisson_bounds(mu, e);
        const auto mc = poisson_bounds_mc(mu, e, 400'000, 100 + i);
        CHECK(0.5 * (mc.upper + mc.lower) == doctest::Approx(mu).epsilon(0.01));
        CHECK((mc.upper - mc.lower) == doctest::Approx(an.upper - an.lower).epsilon(0.01));
    }
}

TEST_CASE("deviance residual inversion") {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double fitted = std::exp(8.0 * u(gen) - 3.0);
        const double deaths = std::floor(fitted * 3.0 * u(gen));
        const double r = deviance_residual(deaths, fitted);
        CHECK((r < 0.0) == (deaths < fitted));
        CHECK(invert_deviance_residual(r, fitted) == doctest::Approx(deaths).epsilon(1e-8).scale(1.0));
    }
    CHECK(invert_deviance_residual(0.0, 3.0) == 3.0);
    // Negative residual beyond the zero-count deviance floors at zero.
    CHECK(invert_deviance_residual(-10.0, 2.0) == 0.0);
    CHECK(deviance_residual(0.0, 2.0) == doctest::Approx(-2.0));
}

TEST_CASE("bootstrap preconditions") {
    const auto t = lc_table(1e5, false, 1);
    const auto f = fit(t, {});
    BootstrapOptions o;
    o.replicates = 1;
    CHECK_THROWS_AS((void)bootstrap_msep_benchmark(f, t, 3, o), std::invalid_argument);
    o.replicates = 200;
    CHECK_THROWS_AS((void)bootstrap_msep_benchmark(f, t, 0, o), std::invalid_argument);
}

TEST_CASE("bootstrap of a perfect fit sits at the sampling floor") {
    const auto t = lc_table(1e6, true, 1);
    const auto f = fit(t, {});
    BootstrapOptions o;
    const auto b = bootstrap_msep_benchmark(f, t, 3, o);
    CHECK(b.used == 200);
    CHECK_FALSE(b.unreliable);
    for (std::size_t ix = 0; ix < b.ages.size(); ++ix) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(b.msep(ix, j) / (b.point(ix, j) * b.point(ix, j)) < 1e-10);
    }
}

TEST_CASE("bootstrap MSEP falls with exposure") {
    BootstrapOptions o;
    o.seed = 5;
    double prev = 1e300;
    for (double e : {1e4, 1e5, 1e6}) {
        const auto t = lc_table(e, false, 3);
        const auto b = bootstrap_msep_benchmark(fit(t, {}), t, 1, o);
        double rel = 0.0;
        for (std::size_t ix = 0; ix < b.ages.size(); ++ix) rel += b.msep(ix, 0) / (b.point(ix, 0) * b.point(ix, 0));
        MESSAGE("exposure " << e << " mean relative MSEP " << rel / b.ages.size());
        CHECK(rel < prev);
        prev = rel;
    }
}

TEST_CASE("bootstrap on the default simulation: larger population, smaller MSEP") {
    const auto sim = simulate(SimConfig{});
    const IntRange ages{16, 85}, years{1971, 2014};
    BootstrapOptions o;
    o.seed = 9;
    std::vector<double> at65;
    for (std::size_t s : {std::size_t{0}, std::size_t{2}}) {  // sub-populations 1 (5 000) and 3 (94 500)
        const auto t = sim.subpopulations[s].subset(ages, years);
        const auto b = bootstrap_msep_benchmark(fit(t, {}), t, 1, o);
        at65.push_back(b.msep(b.ages.index(65), 0));
    }
    MESSAGE("MSEP at 65: sub-population 1 " << at65[0] << ", sub-population 3 " << at65[1]);
    CHECK(at65[1] < at65[0]);
}

TEST_CASE("bootstrap is thread-count invariant") {
    const auto t = lc_table(1e4, false, 7);
    const auto f = fit(t, {});
    BootstrapOptions o;
    o.threads = 1;
    const auto a = bootstrap_msep_benchmark(f, t, 2, o);
    o.threads = 3;
    const auto b = bootstrap_msep_benchmark(f, t, 2, o);
    CHECK(a.msep == b.msep);
}

TEST_CASE("credibility MSEP rows and CSV") {
    const auto t = lc_table(2e4, false, 2);
    const auto f = fit(t, {});
    const auto fc = fit_global_forecast(f);
    const auto rf = forecast_rates(f, fc, 3);
    const auto mu = fitted_rates(f);
    CredibilityEstimate est;
    est.population_id = "1";
    for (std::size_t ix = 0; ix < t.ages().size(); ++ix) {
        AgeComponents c;
        c.age = t.ages().at(ix);
        c.theta_defined = true;
        c.var_theta = 0.01;
        for (std::size_t it = 0; it < t.years().size(); ++it) c.effective_deaths += t.exposure_at(ix, it) * mu(ix, it);
        c.z = credibility_weight(c.effective_deaths, c.var_theta);
        est.ages.push_back(c);
    }
    const auto rows = credibility_msep(t, mu, est, rf);
    REQUIRE(rows.size() == t.ages().size() * 3);
    for (const auto& r : rows) {
        const auto ix = t.ages().index(r.age);
        const double mb = rf.mu_bar(ix, static_cast<std::size_t>(r.horizon - 1));
        CHECK(r.msep == doctest::Approx(r.var_mu_theta + r.z * r.z * mb * mb * r.var_theta_hat).epsilon(1e-14));
        CHECK(r.method == "closed_form");
    }
    const auto ce = credibility_msep(t, mu, est, rf, MsepFormula::CommonEffect);
    CHECK(ce[0].method == "common_effect");
    CHECK(ce[0].msep < rows[0].msep * 10.0);

    std::ostringstream out;
    std::vector<MsepRow> all = rows;
    all.push_back({"1", 50, 1, "bootstrap", 1e-7, std::nan(""), std::nan(""), std::nan("")});
    write_msep_csv(out, all);
    const auto text = out.str();
    CHECK(text.rfind("population,age,horizon,msep,var_mu_theta,var_theta_hat,z,method\n", 0) == 0);
    CHECK(text.find("1,50,1,1e-07,,,,bootstrap\n") != std::string::npos);
}
