#include "credmort/gapc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace credmort {

std::string to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::LC: return "LC";
        case ModelFamily::APC: return "APC";
        case ModelFamily::RH: return "RH";
    }
    return "?";
}

ModelFamily parse_family(const std::string& s) {
    if (s == "LC") return ModelFamily::LC;
    if (s == "APC") return ModelFamily::APC;
    if (s == "RH") return ModelFamily::RH;
    throw std::invalid_argument("unknown model family '" + s + "' (expected LC, APC or RH)");
}

int FittedGapc::first_fitted_cohort() const {
    for (std::size_t i = 0; i < gamma_fitted.size(); ++i) {
        if (gamma_fitted[i]) return cohorts.at(i);
    }
    throw std::logic_error("model has no fitted cohorts");
}

int FittedGapc::last_fitted_cohort() const {
    for (std::size_t i = gamma_fitted.size(); i-- > 0;) {
        if (gamma_fitted[i]) return cohorts.at(i);
    }
    throw std::logic_error("model has no fitted cohorts");
}

double FittedGapc::cohort_effect(int cohort) const {
    if (!has_cohort()) return 0.0;
    if (!cohorts.contains(cohort)) throw std::out_of_range("cohort outside the fitted range");
    const auto i = cohorts.index(cohort);
    if (gamma_fitted[i]) return gamma[i];
    const int c = std::clamp(cohort, first_fitted_cohort(), last_fitted_cohort());
    return gamma[cohorts.index(c)];
}

double FittedGapc::log_mu(std::size_t ix, std::size_t it) const {
    double eta = alpha[ix] + beta[ix] * kappa[it];
    if (has_cohort()) eta += cohort_effect(years.at(it) - ages.at(ix));
    return eta;
}

int free_parameters(const GapcSpec& spec, std::size_t n_ages, std::size_t n_years, std::size_t n_fitted_cohorts) {
    const int a = static_cast<int>(n_ages);
    const int t = static_cast<int>(n_years);
    const int c = static_cast<int>(n_fitted_cohorts);
    const int ck = spec.center_kappa ? 1 : 0;
    switch (spec.family) {
        case ModelFamily::LC: return 2 * a + t - 1 - ck;
        case ModelFamily::APC: return a + t + c - 2 - ck;
        case ModelFamily::RH: return 2 * a + t + c - 1 - ck - (spec.center_gamma ? 1 : 0);
    }
    return 0;
}

double bic_value(double loglik, int free_params, std::size_t n_obs) {
    return -2.0 * loglik + static_cast<double>(free_params) * std::log(static_cast<double>(n_obs));
}

void apply_constraints(FittedGapc& f) {
    const auto family = f.spec.family;
    if (family == ModelFamily::LC || family == ModelFamily::RH) {
        if (f.spec.center_kappa) {
            const double kbar = std::accumulate(f.kappa.begin(), f.kappa.end(), 0.0) / static_cast<double>(f.kappa.size());
            for (std::size_t x = 0; x < f.alpha.size(); ++x) f.alpha[x] += f.beta[x] * kbar;
            for (auto& k : f.kappa) k -= kbar;
        }
        const double s = std::accumulate(f.beta.begin(), f.beta.end(), 0.0);
        if (s != 0.0 && std::isfinite(s)) {
            for (auto& b : f.beta) b /= s;
            for (auto& k : f.kappa) k *= s;
        }
        if (family == ModelFamily::RH && f.spec.center_gamma) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < f.gamma.size(); ++i) {
                if (f.gamma_fitted[i]) {
                    sum += f.gamma[i];
                    ++n;
                }
            }
            if (n > 0) {
                const double gbar = sum / static_cast<double>(n);
                for (std::size_t i = 0; i < f.gamma.size(); ++i) {
                    if (f.gamma_fitted[i]) f.gamma[i] -= gbar;
                }
                for (auto& a : f.alpha) a += gbar;
            }
        }
        return;
    }

    // APC: remove level and linear trend from gamma, pushing them into kappa and alpha.
    double sum_c = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.gamma.size(); ++i) {
        if (f.gamma_fitted[i]) {
            sum_c += f.cohorts.at(i);
            ++n;
        }
    }
    if (n >= 2) {
        const double cbar = sum_c / static_cast<double>(n);
        double sxx = 0.0;
        double sxy = 0.0;
        double sy = 0.0;
        for (std::size_t i = 0; i < f.gamma.size(); ++i) {
            if (!f.gamma_fitted[i]) continue;
            const double dc = f.cohorts.at(i) - cbar;
            sxx += dc * dc;
            sxy += dc * f.gamma[i];
            sy += f.gamma[i];
        }
        const double level = sy / static_cast<double>(n);
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        for (std::size_t i = 0; i < f.gamma.size(); ++i) {
            if (f.gamma_fitted[i]) f.gamma[i] -= level + slope * (f.cohorts.at(i) - cbar);
        }
        for (std::size_t t = 0; t < f.kappa.size(); ++t) f.kappa[t] += level + slope * (f.years.at(t) - cbar);
        for (std::size_t x = 0; x < f.alpha.size(); ++x) f.alpha[x] -= slope * f.ages.at(x);
    }
    if (f.spec.center_kappa) {
        const double kbar = std::accumulate(f.kappa.begin(), f.kappa.end(), 0.0) / static_cast<double>(f.kappa.size());
        for (auto& k : f.kappa) k -= kbar;
        for (auto& a : f.alpha) a += kbar;
    }
}

namespace {

struct Cell {
    std::uint32_t ix;
    std::uint32_t it;
    std::uint32_t ic;
    double log_e;
    double d;
    double eta = 0.0;
    double dhat = 0.0;
};

double cell_deviance(double d, double dhat) {
    if (d <= 0.0) return 2.0 * dhat;
    return 2.0 * (d * std::log(d / dhat) - (d - dhat));
}

class Fitter {
public:
    Fitter(std::span<const MortalityTable> tables, const GapcSpec& spec) {
        if (tables.empty()) throw std::invalid_argument("fit needs at least one table");
        const auto& first = tables.front();
        for (const auto& t : tables) {
            if (t.ages() != first.ages() || t.years() != first.years()) {
                throw std::invalid_argument("stacked fit needs identical age/year grids");
            }
        }
        fit_.spec = spec;
        fit_.ages = first.ages();
        fit_.years = first.years();
        nA_ = fit_.ages.size();
        nT_ = fit_.years.size();
        if (nA_ < 3 || nT_ < 3) throw std::invalid_argument("fit needs at least 3 ages and 3 years");
        fit_.cohorts = IntRange{fit_.years.first - fit_.ages.last, fit_.years.last - fit_.ages.first};
        nC_ = fit_.cohorts.size();

        // Which grid cells are observed in any population, and how many per cohort.
        std::vector<std::size_t> cohort_count(nC_, 0);
        for (std::size_t x = 0; x < nA_; ++x) {
            for (std::size_t t = 0; t < nT_; ++t) {
                const bool seen = std::any_of(tables.begin(), tables.end(),
                                              [&](const MortalityTable& tb) { return tb.observed(x, t); });
                if (seen) ++cohort_count[cohort_index(x, t)];
            }
        }
        fit_.gamma_fitted.assign(nC_, false);
        if (fit_.has_cohort()) {
            for (std::size_t c = 0; c < nC_; ++c) {
                fit_.gamma_fitted[c] = cohort_count[c] >= static_cast<std::size_t>(std::max(1, spec.min_cohort_cells));
            }
        }

        by_age_.resize(nA_);
        by_year_.resize(nT_);
        by_cohort_.resize(nC_);
        for (const auto& tb : tables) {
            for (std::size_t x = 0; x < nA_; ++x) {
                for (std::size_t t = 0; t < nT_; ++t) {
                    if (!tb.observed(x, t)) continue;
                    const auto c = cohort_index(x, t);
                    if (fit_.has_cohort() && !fit_.gamma_fitted[c]) continue;
                    const auto id = static_cast<std::uint32_t>(cells_.size());
                    cells_.push_back(Cell{static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(t),
                                          static_cast<std::uint32_t>(c), std::log(tb.exposure_at(x, t)),
                                          tb.deaths_at(x, t)});
                    by_age_[x].push_back(id);
                    by_year_[t].push_back(id);
                    by_cohort_[c].push_back(id);
                }
            }
        }
        for (std::size_t x = 0; x < nA_; ++x) {
            if (by_age_[x].empty()) {
                throw std::invalid_argument("age " + std::to_string(fit_.ages.at(x)) + " has no observed cells");
            }
        }
        for (std::size_t t = 0; t < nT_; ++t) {
            if (by_year_[t].empty()) {
                throw std::invalid_argument("year " + std::to_string(fit_.years.at(t)) + " has no observed cells");
            }
        }
        if (fit_.has_cohort() && std::none_of(fit_.gamma_fitted.begin(), fit_.gamma_fitted.end(), [](bool b) { return b; })) {
            throw std::invalid_argument("no cohort has enough observed cells");
        }
    }

    void initialise() {
        fit_.alpha.assign(nA_, 0.0);
        for (std::size_t x = 0; x < nA_; ++x) {
            double sd = 0.0;
            double se = 0.0;
            for (auto id : by_age_[x]) {
                sd += cells_[id].d;
                se += std::exp(cells_[id].log_e);
            }
            // A row without deaths would start at log(0); start it far below instead.
            fit_.alpha[x] = std::log(std::max(sd, 1e-6) / se);
        }
        const bool has_beta = fit_.spec.family != ModelFamily::APC;
        fit_.beta.assign(nA_, has_beta ? 1.0 / static_cast<double>(nA_) : 1.0);
        fit_.kappa.assign(nT_, 0.0);
        fit_.gamma.assign(fit_.has_cohort() ? nC_ : 0, 0.0);
    }

    void warm_start(const FittedGapc& start) {
        if (start.ages != fit_.ages || start.years != fit_.years || start.spec.family != fit_.spec.family) {
            throw std::invalid_argument("warm start model does not match the table grid or family");
        }
        fit_.alpha = start.alpha;
        fit_.beta = start.beta;
        fit_.kappa = start.kappa;
        fit_.gamma.assign(fit_.has_cohort() ? nC_ : 0, 0.0);
        for (std::size_t c = 0; c < fit_.gamma.size(); ++c) {
            if (fit_.gamma_fitted[c] && c < start.gamma.size()) fit_.gamma[c] = start.gamma[c];
        }
    }

    FittedGapc run() {
        refresh();
        double prev = total_deviance();
        if (!std::isfinite(prev)) throw std::runtime_error("non-finite deviance at the starting values");
        fit_.deviance_trace.clear();
        fit_.deviance_trace.push_back(prev);

        const auto family = fit_.spec.family;
        int sweep = 0;
        bool converged = false;
        while (sweep < fit_.spec.max_sweeps) {
            ++sweep;
            for (std::size_t x = 0; x < nA_; ++x) {
                newton(by_age_[x], fit_.alpha[x], [](const Cell&) { return 1.0; });
            }
            for (std::size_t t = 0; t < nT_; ++t) {
                newton(by_year_[t], fit_.kappa[t], [this](const Cell& c) { return fit_.beta[c.ix]; });
            }
            if (family != ModelFamily::APC) {
                for (std::size_t x = 0; x < nA_; ++x) {
                    newton(by_age_[x], fit_.beta[x], [this](const Cell& c) { return fit_.kappa[c.it]; });
                }
            }
            if (fit_.has_cohort()) {
                for (std::size_t c = 0; c < nC_; ++c) {
                    if (fit_.gamma_fitted[c]) newton(by_cohort_[c], fit_.gamma[c], [](const Cell&) { return 1.0; });
                }
            }
            apply_constraints(fit_);
            refresh();
            const double dev = total_deviance();
            if (!std::isfinite(dev)) {
                std::ostringstream msg;
                msg << "non-finite likelihood in sweep " << sweep << "; last finite deviance " << prev;
                throw std::runtime_error(msg.str());
            }
            fit_.deviance_trace.push_back(dev);
            const double change = std::abs(prev - dev);
            prev = dev;
            if (change < fit_.spec.tolerance) {
                converged = true;
                break;
            }
        }

        fit_.deviance = prev;
        fit_.converged = converged;
        fit_.n_iter = sweep;
        fit_.n_obs = cells_.size();
        double ll = 0.0;
        for (const auto& c : cells_) ll += c.d * c.eta - c.dhat - std::lgamma(c.d + 1.0);
        fit_.loglik = ll;
        const auto fitted_cohorts = static_cast<std::size_t>(
            std::count(fit_.gamma_fitted.begin(), fit_.gamma_fitted.end(), true));
        fit_.n_params = free_parameters(fit_.spec, nA_, nT_, fit_.has_cohort() ? fitted_cohorts : 0);
        fit_.bic = bic_value(fit_.loglik, fit_.n_params, fit_.n_obs);
        return fit_;
    }

private:
    [[nodiscard]] std::size_t cohort_index(std::size_t x, std::size_t t) const { return t + (nA_ - 1) - x; }

    void refresh() {
        for (auto& c : cells_) {
            double eta = c.log_e + fit_.alpha[c.ix] + fit_.beta[c.ix] * fit_.kappa[c.it];
            if (fit_.has_cohort()) eta += fit_.gamma[c.ic];
            c.eta = eta;
            c.dhat = std::exp(eta);
        }
    }

    [[nodiscard]] double total_deviance() const {
        double dev = 0.0;
        for (const auto& c : cells_) dev += cell_deviance(c.d, c.dhat);
        return dev;
    }

    // One Newton step for a single parameter; its cells are disjoint from every other
    // parameter of the same block, so blocks update exactly coordinate-wise.
    template <typename Z>
    void newton(const std::vector<std::uint32_t>& ids, double& param, Z&& z_of) {
        double g = 0.0;
        double h = 0.0;
        double scale = 0.0;
        for (auto id : ids) {
            const auto& c = cells_[id];
            const double z = z_of(c);
            g += (c.d - c.dhat) * z;
            h += c.dhat * z * z;
            scale += c.dhat + c.d;
        }
        if (!(h > 0.0) || !std::isfinite(g) || g == 0.0) return;
        double step = g / h;
        for (int halving = 0; halving < 60; ++halving) {
            // change in sum(dhat - d * eta) over the parameter's cells
            double delta = 0.0;
            for (auto id : ids) {
                const auto& c = cells_[id];
                const double dz = step * z_of(c);
                delta += c.dhat * std::expm1(dz) - c.d * dz;
            }
            if (std::isfinite(delta) && delta <= 1e-14 * scale) {
                for (auto id : ids) {
                    auto& c = cells_[id];
                    c.eta += step * z_of(c);
                    c.dhat = std::exp(c.eta);
                }
                param += step;
                return;
            }
            step *= 0.5;
        }
    }

    FittedGapc fit_;
    std::size_t nA_ = 0;
    std::size_t nT_ = 0;
    std::size_t nC_ = 0;
    std::vector<Cell> cells_;
    std::vector<std::vector<std::uint32_t>> by_age_;
    std::vector<std::vector<std::uint32_t>> by_year_;
    std::vector<std::vector<std::uint32_t>> by_cohort_;
};

}  // namespace

FittedGapc fit(const MortalityTable& table, const GapcSpec& spec) {
    Fitter f(std::span<const MortalityTable>(&table, 1), spec);
    f.initialise();
    return f.run();
}

FittedGapc fit_stacked(std::span<const MortalityTable> tables, const GapcSpec& spec) {
    Fitter f(tables, spec);
    f.initialise();
    return f.run();
}

FittedGapc fit_from(const MortalityTable& table, const GapcSpec& spec, const FittedGapc& start) {
    Fitter f(std::span<const MortalityTable>(&table, 1), spec);
    f.initialise();
    f.warm_start(start);
    return f.run();
}

double poisson_loglik(const FittedGapc& fit, const MortalityTable& table) {
    if (table.ages() != fit.ages || table.years() != fit.years) {
        throw std::invalid_argument("table grid does not match the fitted model");
    }
    double ll = 0.0;
    for (std::size_t x = 0; x < fit.ages.size(); ++x) {
        for (std::size_t t = 0; t < fit.years.size(); ++t) {
            if (!table.observed(x, t)) continue;
            if (fit.has_cohort() && !fit.gamma_fitted[fit.cohorts.index(fit.years.at(t) - fit.ages.at(x))]) continue;
            const double eta = std::log(table.exposure_at(x, t)) + fit.log_mu(x, t);
            const double d = table.deaths_at(x, t);
            ll += d * eta - std::exp(eta) - std::lgamma(d + 1.0);
        }
    }
    return ll;
}

double bic(const FittedGapc& fit, const MortalityTable& table) {
    std::size_t n = 0;
    for (std::size_t x = 0; x < fit.ages.size(); ++x) {
        for (std::size_t t = 0; t < fit.years.size(); ++t) {
            if (!table.observed(x, t)) continue;
            if (fit.has_cohort() && !fit.gamma_fitted[fit.cohorts.index(fit.years.at(t) - fit.ages.at(x))]) continue;
            ++n;
        }
    }
    return bic_value(poisson_loglik(fit, table), fit.n_params, n);
}

double predict_mu(const FittedGapc& fit, int age, int year) {
    if (!fit.ages.contains(age) || !fit.years.contains(year)) {
        std::ostringstream msg;
        msg << "(age " << age << ", year " << year << ") is outside the fitted grid (ages " << fit.ages.first << "-"
            << fit.ages.last << ", years " << fit.years.first << "-" << fit.years.last
            << "); use the forecasting functions for out-of-sample rates";
        throw std::out_of_range(msg.str());
    }
    return std::exp(fit.log_mu(fit.ages.index(age), fit.years.index(year)));
}

Matrix<double> fitted_rates(const FittedGapc& fit) {
    Matrix<double> mu(fit.ages.size(), fit.years.size());
    for (std::size_t x = 0; x < fit.ages.size(); ++x) {
        for (std::size_t t = 0; t < fit.years.size(); ++t) mu(x, t) = std::exp(fit.log_mu(x, t));
    }
    return mu;
}

nlohmann::json to_json(const FittedGapc& fit) {
    nlohmann::json j;
    j["family"] = to_string(fit.spec.family);
    j["constraints"] = {{"center_kappa", fit.spec.center_kappa},
                        {"center_gamma", fit.spec.center_gamma},
                        {"min_cohort_cells", fit.spec.min_cohort_cells}};
    j["ages"] = {fit.ages.first, fit.ages.last};
    j["years"] = {fit.years.first, fit.years.last};
    j["alpha"] = fit.alpha;
    j["beta"] = fit.beta;
    j["kappa"] = fit.kappa;
    if (fit.has_cohort()) {
        j["cohorts"] = {fit.cohorts.first, fit.cohorts.last};
        j["gamma"] = fit.gamma;
        j["gamma_fitted"] = fit.gamma_fitted;
    }
    j["diagnostics"] = {{"loglik", fit.loglik},   {"deviance", fit.deviance}, {"bic", fit.bic},
                        {"n_obs", fit.n_obs},     {"n_params", fit.n_params}, {"converged", fit.converged},
                        {"n_iter", fit.n_iter},   {"tolerance", fit.spec.tolerance},
                        {"max_sweeps", fit.spec.max_sweeps}};
    return j;
}

FittedGapc fitted_from_json(const nlohmann::json& j) {
    FittedGapc f;
    f.spec.family = parse_family(j.at("family").get<std::string>());
    const auto& cons = j.at("constraints");
    f.spec.center_kappa = cons.at("center_kappa").get<bool>();
    f.spec.center_gamma = cons.at("center_gamma").get<bool>();
    f.spec.min_cohort_cells = cons.at("min_cohort_cells").get<int>();
    f.ages = IntRange{j.at("ages").at(0).get<int>(), j.at("ages").at(1).get<int>()};
    f.years = IntRange{j.at("years").at(0).get<int>(), j.at("years").at(1).get<int>()};
    f.cohorts = IntRange{f.years.first - f.ages.last, f.years.last - f.ages.first};
    f.alpha = j.at("alpha").get<std::vector<double>>();
    f.beta = j.at("beta").get<std::vector<double>>();
    f.kappa = j.at("kappa").get<std::vector<double>>();
    if (f.has_cohort()) {
        f.gamma = j.at("gamma").get<std::vector<double>>();
        f.gamma_fitted = j.at("gamma_fitted").get<std::vector<bool>>();
    } else {
        f.gamma_fitted.assign(f.cohorts.size(), false);
    }
    const auto& d = j.at("diagnostics");
    f.loglik = d.at("loglik").get<double>();
    f.deviance = d.at("deviance").get<double>();
    f.bic = d.at("bic").get<double>();
    f.n_obs = d.at("n_obs").get<std::size_t>();
    f.n_params = d.at("n_params").get<int>();
    f.converged = d.at("converged").get<bool>();
    f.n_iter = d.at("n_iter").get<int>();
    f.spec.tolerance = d.at("tolerance").get<double>();
    f.spec.max_sweeps = d.at("max_sweeps").get<int>();
    if (f.alpha.size() != f.ages.size() || f.beta.size() != f.ages.size() || f.kappa.size() != f.years.size()) {
        throw std::runtime_error("fitted model JSON: parameter vector lengths do not match ages/years");
    }
    return f;
}

}  // namespace credmort
