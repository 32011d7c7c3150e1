#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "credmort/credibility.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace credmort;

TEST_CASE("theta MLE") {
    const std::vector<double> e{100, 200}, mu{0.025, 0.025};
    const std::vector<double> d{100 * 0.02, 200 * 0.03};
    CHECK(*theta_mle(e, d, mu) == doctest::Approx(8.0 / 7.5).epsilon(1e-15));

    const std::vector<double> d_fit{100 * 0.025, 200 * 0.025};
    CHECK(*theta_mle(e, d_fit, mu) == doctest::Approx(1.0).epsilon(1e-15));

    const std::vector<double> e2{200, 400}, d2{4, 12};
    CHECK(*theta_mle(e2, d2, mu) == doctest::Approx(*theta_mle(e, d, mu)).epsilon(1e-15));

    const std::vector<double> zero{0, 0};
    CHECK_FALSE(theta_mle(zero, d, mu).has_value());
}

TEST_CASE("plug-in variance") {
    const std::vector<double> e{1000, 1000}, f{0.04, 0.05}, mu{0.03, 0.04};
    const auto v = var_theta_plugin(e, f, mu);
    CHECK(v.raw == doctest::Approx((0.0004 - 0.00007) / 0.0049).epsilon(1e-12));
    CHECK(v.raw == doctest::Approx(0.0673469387755102).epsilon(1e-12));
    CHECK(v.adjusted == v.raw);

    const std::vector<double> f_eq{0.03, 0.04};
    const auto z = var_theta_plugin(e, f_eq, mu);
    CHECK(z.raw == doctest::Approx(-(0.03 / 1000 + 0.04 / 1000) / 0.0049).epsilon(1e-12));
    CHECK(z.raw < 0.0);
    CHECK(z.adjusted == 0.0);
}

TEST_CASE("plug-in variance recovers a known Var(Theta) on average") {
    const double var = 0.01, mu = 0.01, expo = 1e6;
    const int n_ages = 300, n_years = 25;
    std::mt19937_64 gen(77);
    const double s2 = std::log1p(var);
    std::lognormal_distribution<double> theta(-0.5 * s2, std::sqrt(s2));
    double sum = 0.0;
    for (int a = 0; a < n_ages; ++a) {
        const double th = theta(gen);
        std::vector<double> e(n_years, expo), f(n_years), m(n_years, mu);
        std::poisson_distribution<long long> pois(expo * mu * th);
        for (auto& v : f) v = static_cast<double>(pois(gen)) / expo;
        sum += var_theta_plugin(e, f, m).adjusted;
    }
    const double avg = sum / n_ages;
    MESSAGE("average plug-in Var(Theta) " << avg);
    CHECK(avg == doctest::Approx(var).epsilon(0.3));
}

TEST_CASE("credibility weight") {
    CHECK(credibility_weight(90.0, 0.0) == 0.0);
    CHECK(credibility_weight(90.0, 0.1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(credibility_weight(1e12, 0.05) > 1.0 - 1e-9);
    CHECK(credibility_weight(0.0, 0.05) == 0.0);
    CHECK_THROWS_AS((void)credibility_weight(-1.0, 0.1), std::invalid_argument);
    // Strictly increasing in V and in W.
    double prev = 0.0;
    for (double v = 0.001; v < 2.0; v *= 1.5) {
        const double z = credibility_weight(40.0, v);
        CHECK(z > prev);
        prev = z;
    }
    prev = 0.0;
    for (double w = 0.5; w < 1e6; w *= 2.0) {
        const double z = credibility_weight(w, 0.02);
        CHECK(z > prev);
        prev = z;
    }
}

TEST_CASE("credibility predictor") {
    const double th = 8.0 / 7.5;
    const auto p = credibility_predict(0.02, th, 0.9);
    CHECK(p.mu_cred == doctest::Approx(0.0212).epsilon(1e-14));
    CHECK(p.mu_cred == 0.02 * p.theta_blend);
    CHECK(credibility_predict(0.02, th, 0.0).mu_cred == 0.02);
    CHECK(credibility_predict(0.02, th, 1.0).mu_cred == doctest::Approx(0.02 * th).epsilon(1e-15));

    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double mu = 1e-4 + 0.1 * u(gen), t = 2.0 * u(gen), z = u(gen);
        const auto r = credibility_predict(mu, t, z);
        CHECK(r.mu_cred == mu * r.theta_blend);
        CHECK(r.mu_cred == doctest::Approx((1 - z) * mu + z * mu * t).epsilon(1e-14));
        const double lo = std::min(mu, mu * t), hi = std::max(mu, mu * t);
        CHECK(r.mu_cred >= lo * (1 - 1e-15));
        CHECK(r.mu_cred <= hi * (1 + 1e-15));
    }
}

TEST_CASE("age-only corollary") {
    const std::vector<double> e{100, 300}, f{0.012, 0.008};
    const auto r = credibility_age_only(e, f, 0.01, 0.05);
    CHECK(r.theta_hat == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(r.z == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(r.predictor == doctest::Approx(0.0098333333333333).epsilon(1e-12));
    CHECK(credibility_age_only(e, f, 0.01, 0.0).predictor == 0.01);
}

TEST_CASE("general path with a constant rate reproduces the age-only corollary") {
    const IntRange ages{50, 54}, years{2001, 2010};
    Matrix<double> e(5, 10), d(5, 10), mu(5, 10);
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (std::size_t ix = 0; ix < 5; ++ix) {
        for (std::size_t it = 0; it < 10; ++it) {
            e(ix, it) = 500.0 * u(gen);
            mu(ix, it) = 0.01 * (1 + 0.1 * static_cast<double>(ix));
            d(ix, it) = std::round(e(ix, it) * mu(ix, it) * 1.3 * u(gen));
        }
    }
    const MortalityTable t("1", ages, years, e, d);
    CredibilityOptions raw;
    raw.binning = false;
    const auto est = estimate_credibility(t, mu, raw);
    for (std::size_t ix = 0; ix < 5; ++ix) {
        std::vector<double> ex(10), fx(10);
        for (std::size_t it = 0; it < 10; ++it) {
            ex[it] = e(ix, it);
            fx[it] = d(ix, it) / e(ix, it);
        }
        const auto& c = est.ages[ix];
        const auto a = credibility_age_only(ex, fx, mu(ix, 0), c.var_theta);
        CHECK(c.theta_hat == doctest::Approx(a.theta_hat).epsilon(1e-14));
        CHECK(c.z == doctest::Approx(a.z).epsilon(1e-14));
        CHECK(credibility_predict(mu(ix, 0), c.theta_hat, c.z).mu_cred == doctest::Approx(a.predictor).epsilon(1e-14));
    }
}

TEST_CASE("estimate_credibility components") {
    const IntRange ages{20, 59}, years{2001, 2015};
    Matrix<double> e(ages.size(), years.size()), d = e, mu = e;
    std::mt19937_64 gen(9);
    for (std::size_t ix = 0; ix < ages.size(); ++ix) {
        const double th = ix < 20 ? 0.75 : 1.25;
        for (std::size_t it = 0; it < years.size(); ++it) {
            e(ix, it) = ix == 5 ? 0.0 : 2000.0;
            mu(ix, it) = 0.001 * std::exp(0.08 * static_cast<double>(ix));
            std::poisson_distribution<long long> p(e(ix, it) * mu(ix, it) * th);
            d(ix, it) = ix == 5 ? 0.0 : static_cast<double>(p(gen));
        }
    }
    const MortalityTable t("2", ages, years, e, d);
    const auto est = estimate_credibility(t, mu);
    REQUIRE(est.ages.size() == ages.size());
    const auto& missing = est.at_age(25);
    CHECK_FALSE(missing.theta_defined);
    CHECK(missing.z == 0.0);
    CHECK(missing.theta_hat == 1.0);
    for (const auto& c : est.ages) {
        CHECK(c.theta_hat >= 0.0);
        CHECK(c.var_theta >= 0.0);
        CHECK(c.var_raw == std::max(c.var_raw_m, 0.0));
        CHECK(c.z >= 0.0);
        CHECK(c.z <= 1.0);
        CHECK((c.z == 0.0) == (c.var_theta == 0.0 || !c.theta_defined));
    }
    // Binned values are piecewise constant: few distinct theta levels.
    std::vector<double> levels;
    for (const auto& c : est.ages) {
        if (c.theta_defined && std::find(levels.begin(), levels.end(), c.theta_hat) == levels.end()) {
            levels.push_back(c.theta_hat);
        }
    }
    CHECK(levels.size() <= 4);
    CHECK(est.at_age(30).theta_hat == doctest::Approx(0.75).epsilon(0.1));
    CHECK(est.at_age(50).theta_hat == doctest::Approx(1.25).epsilon(0.1));
    CHECK_THROWS_AS((void)est.at_age(19), std::out_of_range);

    Matrix<double> wrong(3, 3);
    CHECK_THROWS_AS((void)estimate_credibility(t, wrong), std::invalid_argument);
}

TEST_CASE("credibility forecast rows") {
    CredibilityEstimate est;
    est.population_id = "1";
    est.ages.push_back({60, true, 1.2, 0.01, 0.01, 1.2, 0.01, 50.0, credibility_weight(50.0, 0.01)});
    est.ages.push_back({61, true, 0.9, -0.1, 0.0, 0.9, 0.0, 50.0, 0.0});
    RateForecast rf;
    rf.ages = {60, 61};
    rf.t_prime = 2014;
    rf.horizon = 2;
    rf.mu_bar = Matrix<double>(2, 2);
    rf.sigma2_bar = Matrix<double>(2, 2);
    rf.mu_bar(0, 0) = 0.010;
    rf.mu_bar(0, 1) = 0.009;
    rf.mu_bar(1, 0) = 0.011;
    rf.mu_bar(1, 1) = 0.010;
    const auto rows = credibility_forecast(est, rf);
    REQUIRE(rows.size() == 4);
    CHECK(rows[1].year == 2016);
    CHECK(rows[1].mu_sub == doctest::Approx(0.009 * 1.2));
    CHECK(rows[1].mu_cred == 0.009 * (1.0 + est.ages[0].z * 0.2));
    CHECK(rows[2].mu_cred == rows[2].mu_global);
    for (const auto& r : rows) {
        CHECK(r.mu_cred >= std::min(r.mu_global, r.mu_sub));
        CHECK(r.mu_cred <= std::max(r.mu_global, r.mu_sub));
    }
    std::ostringstream out;
    write_credibility_csv(out, rows);
    CHECK(out.str().rfind("population,age,year,z,theta_hat,var_theta,mu_global,mu_sub,mu_cred\n", 0) == 0);
}
