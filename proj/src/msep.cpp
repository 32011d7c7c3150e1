#include "credmort/msep.hpp"

#include "credmort/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace credmort {

namespace {

constexpr std::size_t kChunk = 1u << 16;

double total_weight(std::span<const double> w) {
    double s = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("MSEP weights must be finite and >= 0");
        s += v;
    }
    if (!(s > 0.0)) throw std::invalid_argument("MSEP needs positive effective deaths (theta_hat undefined)");
    return s;
}

void check_inputs(double mu_bar, double sigma2_bar, double v, double z) {
    if (!(mu_bar > 0.0)) throw std::invalid_argument("mu_bar must be positive");
    if (!(sigma2_bar >= 0.0)) throw std::invalid_argument("sigma2_bar must be non-negative");
    if (!(v >= 0.0)) throw std::invalid_argument("Var(Theta) must be non-negative");
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("credibility weight must lie in [0, 1]");
}

std::string fmt_or_empty(double v) { return std::isnan(v) ? std::string() : format_double(v); }

}  // namespace

MsepDecomposition msep_closed_form(double mu_bar, double sigma2_bar, double var_theta, double z,
                                   std::span<const double> weights) {
    check_inputs(mu_bar, sigma2_bar, var_theta, z);
    const double w = total_weight(weights);
    double w2 = 0.0;
    for (double v : weights) w2 += v * v;
    MsepDecomposition d;
    d.mu_bar = mu_bar;
    d.sigma2_bar = sigma2_bar;
    d.var_theta = var_theta;
    d.z = z;
    d.var_mu_theta = sigma2_bar * (var_theta + 1.0) + mu_bar * mu_bar * var_theta;
    d.var_theta_hat = var_theta * w2 / (w * w) + 1.0 / w;
    d.msep = d.var_mu_theta + z * z * mu_bar * mu_bar * d.var_theta_hat;
    return d;
}

double msep_common_effect(double mu_bar, double sigma2_bar, double var_theta, double z,
                          std::span<const double> weights) {
    check_inputs(mu_bar, sigma2_bar, var_theta, z);
    const double w = total_weight(weights);
    return sigma2_bar * (var_theta + 1.0) +
           mu_bar * mu_bar * ((1.0 - z) * (1.0 - z) * var_theta + z * z / w);
}

std::string to_string(ThetaLaw law) { return law == ThetaLaw::TwoPoint ? "two_point" : "lognormal"; }

ThetaLaw parse_theta_law(const std::string& s) {
    if (s == "lognormal") return ThetaLaw::Lognormal;
    if (s == "two_point") return ThetaLaw::TwoPoint;
    throw std::invalid_argument("unknown random-effect law '" + s + "' (expected lognormal or two_point)");
}

ThetaSampler::ThetaSampler(ThetaLaw law, double var_theta) : law_(law), v_(var_theta) {
    if (!(var_theta >= 0.0)) throw std::invalid_argument("Var(Theta) must be non-negative");
    if (law == ThetaLaw::TwoPoint && var_theta >= 1.0) {
        throw std::invalid_argument("two-point law needs Var(Theta) < 1 to stay positive");
    }
    s_ = std::sqrt(std::log1p(var_theta));
    m_ = -0.5 * s_ * s_;
}

double ThetaSampler::operator()(CounterRng& rng) {
    if (v_ == 0.0) return 1.0;
    if (law_ == ThetaLaw::TwoPoint) return rng() >> 63 ? 1.0 + std::sqrt(v_) : 1.0 - std::sqrt(v_);
    std::normal_distribution<double> n(m_, s_);
    return std::exp(n(rng));
}

MonteCarloEstimate msep_monte_carlo(double mu_bar, double sigma2_bar, double var_theta, double z,
                                    std::span<const double> weights, const MonteCarloSpec& spec) {
    check_inputs(mu_bar, sigma2_bar, var_theta, z);
    const double w = total_weight(weights);
    if (spec.n_sims < 2) throw std::invalid_argument("Monte-Carlo MSEP needs at least 2 simulations");
    const double s2 = std::log1p(sigma2_bar / (mu_bar * mu_bar));
    const double ls = std::sqrt(s2);
    const double lm = std::log(mu_bar) - 0.5 * s2;

    const std::size_t chunks = (spec.n_sims + kChunk - 1) / kChunk;
    std::vector<double> sum(chunks), sum2(chunks);
    parallel_for(chunks, spec.threads, [&](std::size_t c) {
        CounterRng rng(stream_key(spec.seed, {c}));
        ThetaSampler theta(spec.law, var_theta);
        std::normal_distribution<double> normal(0.0, 1.0);
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(spec.n_sims, begin + kChunk);
        double s = 0.0, q = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double shared = theta(rng);
            double deaths = 0.0;
            for (double wt : weights) {
                const double th = spec.sharing == EffectSharing::Shared ? shared : theta(rng);
                const double mean = wt * th;
                if (mean > 0.0) deaths += static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
            }
            const double theta_hat = deaths / w;
            const double target_theta = spec.sharing == EffectSharing::Shared ? shared : theta(rng);
            const double mu = sigma2_bar > 0.0 ? std::exp(lm + ls * normal(rng)) : mu_bar;
            const double pred = mu_bar * (1.0 + z * (theta_hat - 1.0));
            const double e = (mu * target_theta - pred) * (mu * target_theta - pred);
            s += e;
            q += e * e;
        }
        sum[c] = s;
        sum2[c] = q;
    });
    const double n = static_cast<double>(spec.n_sims);
    const double s = std::accumulate(sum.begin(), sum.end(), 0.0);
    const double q = std::accumulate(sum2.begin(), sum2.end(), 0.0);
    MonteCarloEstimate r;
    r.msep = s / n;
    r.std_error = std::sqrt(std::max(q / n - r.msep * r.msep, 0.0) / (n - 1.0));
    return r;
}

PoissonBounds poisson_bounds(double mu, double exposure) {
    if (!(exposure > 0.0)) throw std::invalid_argument("Poisson bounds need positive exposure");
    if (!(mu >= 0.0)) throw std::invalid_argument("Poisson bounds need a non-negative rate");
    const double sd = std::sqrt(mu / exposure);
    return {mu - sd, mu + sd};
}

PoissonBounds poisson_bounds_mc(double mu, double exposure, std::size_t n_sims, std::uint64_t seed) {
    if (!(exposure > 0.0)) throw std::invalid_argument("Poisson bounds need positive exposure");
    if (n_sims < 2) throw std::invalid_argument("Poisson bounds need at least 2 simulations");
    CounterRng rng(stream_key(seed, {0x706f6973ULL}));
    std::poisson_distribution<long long> pois(exposure * mu);
    double s = 0.0, q = 0.0;
    for (std::size_t i = 0; i < n_sims; ++i) {
        const double f = static_cast<double>(pois(rng)) / exposure;
        s += f;
        q += f * f;
    }
    const double n = static_cast<double>(n_sims);
    const double m = s / n;
    const double sd = std::sqrt(std::max(q / n - m * m, 0.0) * n / (n - 1.0));
    return {m - sd, m + sd};
}

std::string to_string(MsepFormula f) { return f == MsepFormula::CommonEffect ? "common_effect" : "closed_form"; }

MsepFormula parse_msep_formula(const std::string& s) {
    if (s == "closed_form") return MsepFormula::Closed;
    if (s == "common_effect") return MsepFormula::CommonEffect;
    throw std::invalid_argument("unknown MSEP formula '" + s + "' (expected closed_form or common_effect)");
}

std::vector<MsepRow> credibility_msep(const MortalityTable& table, const Matrix<double>& mu_hat,
                                      const CredibilityEstimate& estimate, const RateForecast& forecast,
                                      MsepFormula formula) {
    const auto nt = table.years().size();
    if (mu_hat.rows() != table.ages().size() || mu_hat.cols() != nt) {
        throw std::invalid_argument("global rates do not cover the grid of population " + table.population_id());
    }
    std::vector<MsepRow> rows;
    for (const auto& c : estimate.ages) {
        if (!forecast.ages.contains(c.age) || !table.ages().contains(c.age)) continue;
        const auto ix = table.ages().index(c.age);
        const auto fx = forecast.ages.index(c.age);
        std::vector<double> w;
        for (std::size_t t = 0; t < nt; ++t) {
            if (table.observed(ix, t)) w.push_back(table.exposure_at(ix, t) * mu_hat(ix, t));
        }
        const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        for (int h = 1; h <= forecast.horizon; ++h) {
            const auto j = static_cast<std::size_t>(h - 1);
            const double mb = forecast.mu_bar(fx, j);
            const double s2 = forecast.sigma2_bar(fx, j);
            MsepRow r;
            r.population_id = estimate.population_id;
            r.age = c.age;
            r.horizon = h;
            r.method = to_string(formula);
            r.z = c.z;
            if (wsum > 0.0) {
                const auto d = msep_closed_form(mb, s2, c.var_theta, c.z, w);
                r.var_mu_theta = d.var_mu_theta;
                r.var_theta_hat = d.var_theta_hat;
                r.msep = formula == MsepFormula::Closed ? d.msep : msep_common_effect(mb, s2, c.var_theta, c.z, w);
            } else {
                r.var_mu_theta = s2 * (c.var_theta + 1.0) + mb * mb * c.var_theta;
                r.var_theta_hat = std::numeric_limits<double>::quiet_NaN();
                r.msep = r.var_mu_theta;
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

double deviance_residual(double deaths, double fitted) {
    if (!(fitted > 0.0)) throw std::invalid_argument("deviance residual needs a positive fitted mean");
    const double dev = deaths > 0.0 ? 2.0 * (deaths * std::log(deaths / fitted) - (deaths - fitted)) : 2.0 * fitted;
    const double r = std::sqrt(std::max(dev, 0.0));
    return deaths < fitted ? -r : r;
}

double invert_deviance_residual(double r, double fitted) {
    if (!(fitted > 0.0)) throw std::invalid_argument("deviance residual needs a positive fitted mean");
    const double target = r * r;
    if (target == 0.0) return fitted;
    if (r < 0.0 && target >= 2.0 * fitted) return 0.0;
    auto g = [&](double d) { return (d > 0.0 ? 2.0 * (d * std::log(d / fitted) - (d - fitted)) : 2.0 * fitted) - target; };
    // g is monotone on each side of `fitted`; bracket then safeguarded Newton.
    double lo, hi;
    if (r > 0.0) {
        lo = fitted;
        hi = fitted + std::abs(r) * std::sqrt(fitted) + target;
        while (g(hi) < 0.0) hi = 2.0 * hi;
    } else {
        lo = 0.0;
        hi = fitted;
    }
    double d = r > 0.0 ? std::min(hi, fitted + r * std::sqrt(fitted)) : std::max(0.5 * fitted, fitted + r * std::sqrt(fitted));
    for (int it = 0; it < 200; ++it) {
        const double gv = g(d);
        if (std::abs(gv) <= 1e-13 * std::max(1.0, target)) break;
        // Keep the bracket oriented so the root stays inside.
        if ((gv < 0.0) == (r > 0.0)) lo = d; else hi = d;
        const double slope = d > 0.0 ? 2.0 * std::log(d / fitted) : 0.0;
        double next = slope != 0.0 ? d - gv / slope : 0.5 * (lo + hi);
        if (!(next > std::min(lo, hi) && next < std::max(lo, hi))) next = 0.5 * (lo + hi);
        if (std::abs(next - d) <= 1e-15 * std::max(1.0, d)) {
            d = next;
            break;
        }
        d = next;
    }
    return std::max(d, 0.0);
}

BootstrapMsep bootstrap_msep_benchmark(const FittedGapc& fit, const MortalityTable& table, int horizon,
                                       const BootstrapOptions& options) {
    if (options.replicates < 200) throw std::invalid_argument("residual bootstrap needs at least 200 replicates");
    if (horizon < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    if (fit.ages != table.ages() || fit.years != table.years()) {
        throw std::invalid_argument("bootstrap: fit and table grids differ");
    }
    const auto na = table.ages().size();
    const auto nt = table.years().size();
    const auto nh = static_cast<std::size_t>(horizon);

    const auto base_fc = fit_global_forecast(fit, options.forecast);
    BootstrapMsep out;
    out.ages = fit.ages;
    out.t_prime = fit.years.last;
    out.horizon = horizon;
    out.point = Matrix<double>(na, nh);
    for (std::size_t ix = 0; ix < na; ++ix) {
        for (std::size_t j = 0; j < nh; ++j) {
            out.point(ix, j) = rate_moments(fit, base_fc, fit.ages.at(ix), static_cast<int>(j) + 1,
                                            options.forecast.mean_mode).mu_bar;
        }
    }

    // Residual pool over cells that enter the likelihood.
    const auto mu = fitted_rates(fit);
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    std::vector<double> resid;
    for (std::size_t ix = 0; ix < na; ++ix) {
        for (std::size_t it = 0; it < nt; ++it) {
            if (!table.observed(ix, it)) continue;
            const int c = fit.years.at(it) - fit.ages.at(ix);
            if (fit.has_cohort() && !fit.gamma_fitted[fit.cohorts.index(c)]) continue;
            cells.emplace_back(ix, it);
            resid.push_back(deviance_residual(table.deaths_at(ix, it), table.exposure_at(ix, it) * mu(ix, it)));
        }
    }
    if (resid.empty()) throw std::invalid_argument("bootstrap: no observed cells");

    const auto b = static_cast<std::size_t>(options.replicates);
    std::vector<Matrix<double>> draws(b);
    std::vector<char> ok(b, 0);
    parallel_for(b, options.threads, [&](std::size_t r) {
        CounterRng rng(stream_key(options.seed, {0x626f6f74ULL, r}));
        std::uniform_int_distribution<std::size_t> pick(0, resid.size() - 1);
        Matrix<double> deaths = table.deaths();
        for (const auto& [ix, it] : cells) {
            deaths(ix, it) = invert_deviance_residual(resid[pick(rng)], table.exposure_at(ix, it) * mu(ix, it));
        }
        try {
            const MortalityTable pseudo(table.population_id(), table.ages(), table.years(), table.exposure(),
                                        std::move(deaths));
            const auto refit = fit_from(pseudo, fit.spec, fit);
            if (!refit.converged) return;
            const auto fc = fit_global_forecast(refit, options.forecast);
            const auto kpath = simulate_index_path(fc.kappa, horizon, rng);
            std::vector<double> gpath;
            int last = 0;
            if (refit.has_cohort()) {
                last = refit.last_fitted_cohort();
                const int needed = refit.years.last + horizon - refit.ages.first - last;
                if (needed > 0) gpath = simulate_index_path(*fc.gamma, needed, rng);
            }
            Matrix<double> m(na, nh);
            for (std::size_t ix = 0; ix < na; ++ix) {
                const int age = refit.ages.at(ix);
                for (std::size_t j = 0; j < nh; ++j) {
                    double eta = refit.alpha[ix] + refit.beta[ix] * kpath[j];
                    if (refit.has_cohort()) {
                        const int c = refit.years.last + static_cast<int>(j) + 1 - age;
                        eta += c <= last ? refit.cohort_effect(std::max(c, refit.cohorts.first))
                                         : gpath[static_cast<std::size_t>(c - last - 1)];
                    }
                    m(ix, j) = std::exp(eta);
                }
            }
            draws[r] = std::move(m);
            ok[r] = 1;
        } catch (const std::exception&) {
            // counted as dropped
        }
    });

    out.msep = Matrix<double>(na, nh);
    for (std::size_t r = 0; r < b; ++r) out.used += ok[r] ? 1 : 0;
    out.dropped = options.replicates - out.used;
    out.unreliable = out.dropped * 5 > options.replicates;
    if (out.used < 2) throw std::runtime_error("bootstrap: fewer than 2 replicates converged");
    for (std::size_t ix = 0; ix < na; ++ix) {
        for (std::size_t j = 0; j < nh; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < b; ++r) {
                if (ok[r]) s += draws[r](ix, j);
            }
            const double mean = s / out.used;
            double v = 0.0;
            for (std::size_t r = 0; r < b; ++r) {
                if (ok[r]) v += (draws[r](ix, j) - mean) * (draws[r](ix, j) - mean);
            }
            v /= out.used - 1;
            const double bias = mean - out.point(ix, j);
            out.msep(ix, j) = v + bias * bias;
        }
    }
    return out;
}

std::vector<MsepRow> bootstrap_rows(const std::string& population_id, const BootstrapMsep& b) {
    std::vector<MsepRow> rows;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t ix = 0; ix < b.ages.size(); ++ix) {
        for (int h = 1; h <= b.horizon; ++h) {
            rows.push_back({population_id, b.ages.at(ix), h, "bootstrap", b.msep(ix, static_cast<std::size_t>(h - 1)),
                            nan, nan, nan});
        }
    }
    return rows;
}

void write_msep_csv(std::ostream& out, std::span<const MsepRow> rows) {
    out << "population,age,horizon,msep,var_mu_theta,var_theta_hat,z,method\n";
    for (const auto& r : rows) {
        out << r.population_id << ',' << r.age << ',' << r.horizon << ',' << fmt_or_empty(r.msep) << ','
            << fmt_or_empty(r.var_mu_theta) << ',' << fmt_or_empty(r.var_theta_hat) << ',' << fmt_or_empty(r.z) << ','
            << r.method << '\n';
    }
}

}  // namespace credmort
