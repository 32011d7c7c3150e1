#include "credmort/credibility.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace credmort {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c) {
    if (a != b || a != c) throw std::invalid_argument("credibility inputs differ in length");
}

}  // namespace

std::optional<double> theta_mle(std::span<const double> exposure, std::span<const double> deaths,
                                std::span<const double> mu_hat) {
    check_lengths(exposure.size(), deaths.size(), mu_hat.size());
    double d = 0.0, w = 0.0;
    for (std::size_t t = 0; t < exposure.size(); ++t) {
        if (!(exposure[t] > 0.0)) continue;
        d += deaths[t];
        w += exposure[t] * mu_hat[t];
    }
    if (!(w > 0.0)) return std::nullopt;
    return d / w;
}

PluginVariance var_theta_plugin(std::span<const double> exposure, std::span<const double> crude,
                                std::span<const double> mu_hat) {
    check_lengths(exposure.size(), crude.size(), mu_hat.size());
    double sf = 0.0, sm = 0.0, sme = 0.0;
    for (std::size_t t = 0; t < exposure.size(); ++t) {
        if (!(exposure[t] > 0.0)) continue;
        sf += crude[t];
        sm += mu_hat[t];
        sme += mu_hat[t] / exposure[t];
    }
    PluginVariance v;
    if (!(sm > 0.0)) return v;
    v.raw = ((sf - sm) * (sf - sm) - sme) / (sm * sm);
    v.adjusted = std::max(v.raw, 0.0);
    return v;
}

double credibility_weight(double effective_deaths, double var_theta) {
    if (effective_deaths < 0.0 || var_theta < 0.0) {
        throw std::invalid_argument("credibility weight needs non-negative effective deaths and variance");
    }
    if (var_theta == 0.0) return 0.0;
    return effective_deaths / (1.0 / var_theta + effective_deaths);
}

CredibilityPrediction credibility_predict(double mu_bar, double theta_hat, double z) {
    CredibilityPrediction p;
    p.theta_blend = 1.0 + z * (theta_hat - 1.0);
    p.mu_cred = mu_bar * p.theta_blend;
    return p;
}

AgeOnlyCredibility credibility_age_only(std::span<const double> exposure, std::span<const double> crude, double mu_x,
                                        double var_theta) {
    if (exposure.size() != crude.size()) throw std::invalid_argument("credibility inputs differ in length");
    if (!(mu_x > 0.0)) throw std::invalid_argument("age-only credibility needs mu_x > 0");
    double ex = 0.0;
    for (std::size_t t = 0; t < exposure.size(); ++t) {
        if (exposure[t] > 0.0) ex += exposure[t];
    }
    AgeOnlyCredibility r;
    if (ex > 0.0) {
        double s = 0.0;
        for (std::size_t t = 0; t < exposure.size(); ++t) {
            if (exposure[t] > 0.0) s += exposure[t] / ex * crude[t];
        }
        r.theta_hat = s / mu_x;
        r.z = var_theta > 0.0 ? ex / (1.0 / (mu_x * var_theta) + ex) : 0.0;
    }
    r.predictor = mu_x * (1.0 + r.z * (r.theta_hat - 1.0));
    return r;
}

const AgeComponents& CredibilityEstimate::at_age(int age) const {
    for (const auto& a : ages) {
        if (a.age == age) return a;
    }
    throw std::out_of_range("no credibility components for age " + std::to_string(age));
}

CredibilityEstimate estimate_credibility(const MortalityTable& table, const Matrix<double>& mu_hat,
                                         const CredibilityOptions& options) {
    const auto na = table.ages().size();
    const auto nt = table.years().size();
    if (mu_hat.rows() != na || mu_hat.cols() != nt) {
        throw std::invalid_argument("global rates do not cover the grid of population " + table.population_id());
    }
    CredibilityEstimate est;
    est.population_id = table.population_id();
    est.ages.resize(na);
    std::vector<double> crude(nt);
    for (std::size_t ix = 0; ix < na; ++ix) {
        const auto e = table.exposure().row(ix);
        const auto d = table.deaths().row(ix);
        const auto m = mu_hat.row(ix);
        for (std::size_t t = 0; t < nt; ++t) crude[t] = e[t] > 0.0 ? d[t] / e[t] : 0.0;
        auto& c = est.ages[ix];
        c.age = table.ages().at(ix);
        for (std::size_t t = 0; t < nt; ++t) {
            if (e[t] > 0.0) c.effective_deaths += e[t] * m[t];
        }
        if (const auto th = theta_mle(e, d, m)) {
            c.theta_defined = true;
            c.theta_raw = *th;
            const auto v = var_theta_plugin(e, crude, m);
            c.var_raw_m = v.raw;
            c.var_raw = v.adjusted;
        }
        c.theta_hat = c.theta_raw;
        c.var_theta = c.var_raw;
    }

    if (options.binning) {
        std::vector<double> x, th, v;
        for (const auto& c : est.ages) {
            if (!c.theta_defined) continue;
            x.push_back(c.age);
            th.push_back(c.theta_raw);
            v.push_back(c.var_raw);
        }
        if (!x.empty()) {
            const auto bt = cart_bin(x, th, {}, options.cart);
            const auto bv = cart_bin(x, v, {}, options.cart);
            std::size_t k = 0;
            for (auto& c : est.ages) {
                if (!c.theta_defined) continue;
                c.theta_hat = bt.fitted[k];
                c.var_theta = bv.fitted[k];
                ++k;
            }
        }
    }
    for (auto& c : est.ages) {
        c.z = c.theta_defined ? credibility_weight(c.effective_deaths, c.var_theta) : 0.0;
        if (!c.theta_defined) c.theta_hat = 1.0;
    }
    return est;
}

std::vector<CredibilityRow> credibility_forecast(const CredibilityEstimate& estimate, const RateForecast& forecast) {
    std::vector<CredibilityRow> rows;
    rows.reserve(estimate.ages.size() * static_cast<std::size_t>(forecast.horizon));
    for (const auto& c : estimate.ages) {
        if (!forecast.ages.contains(c.age)) continue;
        const auto ix = forecast.ages.index(c.age);
        for (int h = 1; h <= forecast.horizon; ++h) {
            const double mu_bar = forecast.mu_bar(ix, static_cast<std::size_t>(h - 1));
            CredibilityRow r;
            r.population_id = estimate.population_id;
            r.age = c.age;
            r.year = forecast.t_prime + h;
            r.z = c.z;
            r.theta_hat = c.theta_hat;
            r.var_theta = c.var_theta;
            r.mu_global = mu_bar;
            r.mu_sub = mu_bar * c.theta_hat;
            r.mu_cred = credibility_predict(mu_bar, c.theta_hat, c.z).mu_cred;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

void write_credibility_csv(std::ostream& out, std::span<const CredibilityRow> rows) {
    out << "population,age,year,z,theta_hat,var_theta,mu_global,mu_sub,mu_cred\n";
    for (const auto& r : rows) {
        out << r.population_id << ',' << r.age << ',' << r.year << ',' << format_double(r.z) << ','
            << format_double(r.theta_hat) << ',' << format_double(r.var_theta) << ',' << format_double(r.mu_global)
            << ',' << format_double(r.mu_sub) << ',' << format_double(r.mu_cred) << '\n';
    }
}

}  // namespace credmort
