#include "credmort/evalharness.hpp"

#include "credmort/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace credmort {

namespace {

constexpr std::array<Approach, 4> kAll{Approach::A, Approach::B, Approach::C, Approach::D};

bool wants(const EvalPlan& plan, Approach a) {
    return std::find(plan.approaches.begin(), plan.approaches.end(), a) != plan.approaches.end();
}

std::size_t group_of(const std::vector<AgeGroup>& groups, int age) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (age >= groups[g].first && age <= groups[g].last) return g;
    }
    return groups.size();
}

}  // namespace

std::string to_string(Approach a) {
    switch (a) {
        case Approach::A: return "A";
        case Approach::B: return "B";
        case Approach::C: return "C";
        case Approach::D: return "D";
    }
    return "?";
}

Approach parse_approach(const std::string& s) {
    if (s == "A") return Approach::A;
    if (s == "B") return Approach::B;
    if (s == "C") return Approach::C;
    if (s == "D") return Approach::D;
    throw std::invalid_argument("unknown approach '" + s + "' (expected A, B, C or D)");
}

std::vector<AgeGroup> age_brackets(int first, int last, int width) {
    if (width < 1 || last < first) throw std::invalid_argument("age brackets need width >= 1 and first <= last");
    std::vector<AgeGroup> g;
    for (int a = first; a <= last; a += width) g.push_back({a, std::min(a + width - 1, last)});
    return g;
}

std::string to_string(DevianceSign s) { return s == DevianceSign::Paper ? "paper" : "conventional"; }

DevianceSign parse_deviance_sign(const std::string& s) {
    if (s == "conventional") return DevianceSign::Conventional;
    if (s == "paper") return DevianceSign::Paper;
    throw std::invalid_argument("unknown deviance sign '" + s + "' (expected conventional or paper)");
}

std::vector<std::pair<int, int>> rolling_windows(int t_prime, int h) {
    if (h < 1) throw std::invalid_argument("rolling window size must be >= 1");
    std::vector<std::pair<int, int>> w;
    for (int j = 1; j <= h; ++j) w.emplace_back(t_prime + j - 1, t_prime + j);
    return w;
}

std::vector<std::pair<int, int>> rolling_windows(int t_prime, int h, int last_year) {
    if (t_prime + h > last_year) {
        throw std::invalid_argument("test year " + std::to_string(t_prime + h) + " is beyond the last data year " +
                                    std::to_string(last_year));
    }
    return rolling_windows(t_prime, h);
}

double absolute_relative_error(double mu, double crude) { return crude > 0.0 ? std::abs(mu - crude) / crude : 0.0; }

double poisson_deviance(double mu, double crude, double exposure, DevianceSign sign) {
    if (!(mu > 0.0)) throw std::invalid_argument("Poisson deviance needs a positive predicted rate");
    const double flog = crude > 0.0 ? crude * std::log(crude / mu) : 0.0;
    const double conventional = 2.0 * exposure * (flog - crude + mu);
    return sign == DevianceSign::Conventional ? conventional : -conventional;
}

double mare(const ScoredCells& c) {
    if (c.mu.size() != c.crude.size()) throw std::invalid_argument("MARE inputs differ in length");
    if (c.mu.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < c.mu.size(); ++i) s += absolute_relative_error(c.mu[i], c.crude[i]);
    return s / static_cast<double>(c.mu.size());
}

double mean_poisson_deviance(const ScoredCells& c, DevianceSign sign) {
    if (c.mu.size() != c.crude.size() || c.mu.size() != c.exposure.size()) {
        throw std::invalid_argument("deviance inputs differ in length");
    }
    if (c.mu.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < c.mu.size(); ++i) s += poisson_deviance(c.mu[i], c.crude[i], c.exposure[i], sign);
    return s / static_cast<double>(c.mu.size());
}

ReplicationResult run_approaches(const SimOutput& data, const EvalPlan& plan, int replication) {
    if (plan.age_groups.empty()) throw std::invalid_argument("evaluation needs at least one age group");
    int lo = plan.age_groups.front().first, hi = plan.age_groups.front().last;
    for (const auto& g : plan.age_groups) {
        if (g.first > g.last) throw std::invalid_argument("age group " + g.label() + " is empty");
        lo = std::min(lo, g.first);
        hi = std::max(hi, g.last);
    }
    const IntRange ages{lo, hi};
    const IntRange all_years = data.super.years();
    if (!data.super.ages().contains(ages)) throw std::invalid_argument("age groups lie outside the simulated ages");
    if (!all_years.contains(plan.t_prime)) throw std::invalid_argument("t' lies outside the simulated years");
    const auto windows = rolling_windows(plan.t_prime, plan.h, all_years.last);
    if (plan.t_prime + plan.fan_horizon > all_years.last) {
        throw std::invalid_argument("fan horizon runs past the last simulated year");
    }

    std::vector<MortalityTable> pops;
    pops.push_back(data.super.subset(ages, all_years));
    for (const auto& t : data.subpopulations) pops.push_back(t.subset(ages, all_years));
    const auto np = pops.size();
    const auto na = ages.size();
    const auto ng = plan.age_groups.size();

    ReplicationResult res;
    res.replication = replication;
    std::vector<std::array<std::vector<ScoredCells>, 4>> cells(np);
    for (auto& p : cells) {
        for (auto& a : p) a.resize(ng);
    }
    std::vector<int> fallbacks(np, 0);
    ForecastOptions fopts = plan.forecast;

    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto [train_end, test_year] = windows[w];
        const IntRange in_years{all_years.first, train_end};
        const auto test_col = all_years.index(test_year);
        const auto super_in = pops[0].subset(ages, in_years);

        const auto gfit = fit(super_in, plan.global_model);
        if (!gfit.converged) {
            std::cerr << "warning: super-population fit did not converge (replication " << replication
                      << ", window ending " << train_end << ")\n";
        }
        const auto gfc = fit_global_forecast(gfit, fopts);
        if (plan.freeze_orders && w == 0) {
            fopts.kappa_order = gfc.kappa.order;
            if (gfc.gamma) fopts.gamma_order = gfc.gamma->order;
        }
        const int steps = w == 0 ? std::max(1, plan.fan_horizon) : 1;
        const auto rf = forecast_rates(gfit, gfc, steps, plan.forecast.mean_mode);
        const auto mu_hat = fitted_rates(gfit);

        for (std::size_t p = 0; p < np; ++p) {
            const auto in = p == 0 ? super_in : pops[p].subset(ages, in_years);
            const auto est = estimate_credibility(in, mu_hat, plan.credibility);

            std::vector<double> mu_c(na);
            bool own = false;
            if (wants(plan, Approach::C)) {
                if (p == 0) {
                    for (std::size_t ix = 0; ix < na; ++ix) mu_c[ix] = rf.mu_bar(ix, 0);
                    own = true;
                } else {
                    try {
                        const auto cfit = fit(in, plan.global_model);
                        if (cfit.converged) {
                            const auto cfc = fit_global_forecast(cfit, plan.forecast);
                            for (std::size_t ix = 0; ix < na; ++ix) {
                                mu_c[ix] = rate_moments(cfit, cfc, ages.at(ix), 1, plan.forecast.mean_mode).mu_bar;
                            }
                            own = std::all_of(mu_c.begin(), mu_c.end(), [](double v) { return std::isfinite(v) && v > 0.0; });
                        }
                    } catch (const std::exception& e) {
                        std::cerr << "warning: approach C fit failed for population " << in.population_id() << ": "
                                  << e.what() << "\n";
                    }
                    if (!own) {
                        ++fallbacks[p];
                        for (std::size_t ix = 0; ix < na; ++ix) mu_c[ix] = rf.mu_bar(ix, 0);
                    }
                }
            }

            for (std::size_t ix = 0; ix < na; ++ix) {
                const int age = ages.at(ix);
                const auto g = group_of(plan.age_groups, age);
                if (g == ng) continue;
                const double e = pops[p].exposure_at(ix, test_col);
                if (!(e > 0.0)) continue;
                const double f = pops[p].deaths_at(ix, test_col) / e;
                const double mu_bar = rf.mu_bar(ix, 0);
                const auto& c = est.ages[ix];
                const std::array<double, 4> mu{credibility_predict(mu_bar, c.theta_hat, c.z).mu_cred,
                                               mu_bar * c.theta_hat, mu_c[ix], mu_bar};
                for (std::size_t a = 0; a < 4; ++a) {
                    auto& sc = cells[p][a][g];
                    sc.mu.push_back(mu[a]);
                    sc.crude.push_back(f);
                    sc.exposure.push_back(e);
                }
            }

            if (w == 0) {
                if (ages.contains(plan.fan_age)) {
                    const auto ix = ages.index(plan.fan_age);
                    const auto& c = est.ages[ix];
                    std::vector<double> weights;
                    for (std::size_t t = 0; t < in.years().size(); ++t) {
                        if (in.observed(ix, t)) weights.push_back(in.exposure_at(ix, t) * mu_hat(ix, t));
                    }
                    for (int h = 1; h <= plan.fan_horizon; ++h) {
                        const auto j = static_cast<std::size_t>(h - 1);
                        const double mb = rf.mu_bar(ix, j);
                        const double s2 = rf.sigma2_bar(ix, j);
                        const double mu = credibility_predict(mb, c.theta_hat, c.z).mu_cred;
                        double msep = s2 * (c.var_theta + 1.0) + mb * mb * c.var_theta;
                        if (c.effective_deaths > 0.0) {
                            msep = plan.msep_formula == MsepFormula::Closed
                                       ? msep_closed_form(mb, s2, c.var_theta, c.z, weights).msep
                                       : msep_common_effect(mb, s2, c.var_theta, c.z, weights);
                        }
                        const auto col = all_years.index(plan.t_prime + h);
                        const double e = pops[p].exposure_at(ix, col);
                        FanRow r;
                        r.replication = replication;
                        r.population_id = in.population_id();
                        r.age = plan.fan_age;
                        r.year = plan.t_prime + h;
                        r.observed_f = e > 0.0 ? pops[p].deaths_at(ix, col) / e : std::numeric_limits<double>::quiet_NaN();
                        r.mu_hat = mu;
                        r.msep_lo = mu - std::sqrt(msep);
                        r.msep_hi = mu + std::sqrt(msep);
                        if (e > 0.0) {
                            const auto pb = poisson_bounds(mu, e);
                            r.pois_lo = pb.lower;
                            r.pois_hi = pb.upper;
                        } else {
                            r.pois_lo = r.pois_hi = std::numeric_limits<double>::quiet_NaN();
                        }
                        res.fan.push_back(std::move(r));
                    }
                }
                res.credibility_at_t_prime.push_back(est);
            }
        }
    }

    for (std::size_t p = 0; p < np; ++p) {
        for (auto a : kAll) {
            if (!wants(plan, a)) continue;
            for (std::size_t g = 0; g < ng; ++g) {
                const auto& sc = cells[p][static_cast<std::size_t>(a)][g];
                res.metrics.push_back({a, pops[p].population_id(), plan.age_groups[g], replication, mare(sc),
                                       mean_poisson_deviance(sc, plan.deviance_sign)});
            }
        }
        if (p > 0 && wants(plan, Approach::C)) res.fallbacks.emplace_back(pops[p].population_id(), fallbacks[p]);
    }
    return res;
}

std::vector<MetricRow> EvalResult::metrics() const {
    std::vector<MetricRow> out;
    for (const auto& r : replications) out.insert(out.end(), r.metrics.begin(), r.metrics.end());
    return out;
}

std::vector<FanRow> EvalResult::fan() const {
    std::vector<FanRow> out;
    for (const auto& r : replications) out.insert(out.end(), r.fan.begin(), r.fan.end());
    return out;
}

EvalResult evaluate(const SimConfig& sim, const EvalPlan& plan) {
    if (plan.replications < 1) throw std::invalid_argument("evaluation needs at least one replication");
    EvalResult out;
    out.replications.resize(static_cast<std::size_t>(plan.replications));
    parallel_for(out.replications.size(), plan.threads, [&](std::size_t r) {
        SimConfig cfg = sim;
        cfg.seed = plan.seed + r;
        cfg.threads = 1;
        const auto data = simulate(cfg);
        out.replications[r] = run_approaches(data, plan, static_cast<int>(r));
        out.replications[r].seed = cfg.seed;
    });
    return out;
}

double aggregate_mare(std::span<const MetricRow> rows, Approach a, const std::string& population, int replication) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.approach == a && r.population_id == population && r.replication == replication) {
            s += r.mare;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("no metric rows for approach " + to_string(a) + ", population " + population);
    return s / n;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
    out << "approach,population,age_group,replication,mare,deviance\n";
    for (const auto& r : rows) {
        out << to_string(r.approach) << ',' << r.population_id << ',' << r.age_group.label() << ',' << r.replication
            << ',' << format_double(r.mare) << ',' << format_double(r.deviance) << '\n';
    }
}

void write_fan_csv(std::ostream& out, std::span<const FanRow> rows) {
    out << "population,age,year,observed_F,mu_hat,msep_lo,msep_hi,pois_lo,pois_hi\n";
    auto f = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    for (const auto& r : rows) {
        out << r.population_id << ',' << r.age << ',' << r.year << ',' << f(r.observed_f) << ',' << f(r.mu_hat) << ','
            << f(r.msep_lo) << ',' << f(r.msep_hi) << ',' << f(r.pois_lo) << ',' << f(r.pois_hi) << '\n';
    }
}

}  // namespace credmort
