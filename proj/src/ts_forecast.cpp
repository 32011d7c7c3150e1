#include "credmort/ts_forecast.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace credmort {

namespace {

constexpr double kMaxCoef = 0.99;

std::vector<double> differences(std::span<const double> s) {
    std::vector<double> d(s.size() - 1);
    for (std::size_t i = 1; i < s.size(); ++i) d[i - 1] = s[i] - s[i - 1];
    return d;
}

double mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void finish(IndexModel& m, double css, std::size_t n, int k) {
    m.n_used = n;
    m.sigma2 = css / static_cast<double>(n);
    // A perfect fit has an unbounded likelihood; a floor keeps BIC finite and ordered.
    const double s2 = std::max(m.sigma2, 1e-300);
    m.loglik = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * s2) + 1.0);
    m.bic = bic_value(m.loglik, k, n);
}

IndexModel fit_rwd(std::span<const double> y) {
    IndexModel m;
    m.order = {0, 1, 0};
    m.drift = mean(y);
    double css = 0.0;
    for (double v : y) css += (v - m.drift) * (v - m.drift);
    finish(m, css, y.size(), 2);
    m.last_residual = y.back() - m.drift;
    return m;
}

IndexModel fit_ar(std::span<const double> y) {
    const std::size_t n = y.size() - 1;
    double mx = 0.0, my = 0.0;
    for (std::size_t t = 1; t < y.size(); ++t) {
        mx += y[t - 1];
        my += y[t];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t t = 1; t < y.size(); ++t) {
        sxx += (y[t - 1] - mx) * (y[t - 1] - mx);
        sxy += (y[t - 1] - mx) * (y[t] - my);
    }
    double phi = sxx > 0.0 ? sxy / sxx : 0.0;
    phi = std::clamp(phi, -kMaxCoef, kMaxCoef);
    const double a = my - phi * mx;

    IndexModel m;
    m.order = {1, 1, 0};
    m.ar = phi;
    m.drift = a / (1.0 - phi);
    double css = 0.0;
    for (std::size_t t = 1; t < y.size(); ++t) {
        const double e = y[t] - a - phi * y[t - 1];
        css += e * e;
        m.last_residual = e;
    }
    finish(m, css, n, 3);
    return m;
}

// CSS of the MA(1) recursion e_t = y_t - c - theta e_{t-1}, e_{-1} = 0, with c profiled.
// e_t is linear in c: e_t = u_t - c v_t.
struct MaProfile {
    double css;
    double drift;
    double last_resid;
};

MaProfile ma_profile(std::span<const double> y, double theta) {
    double u = 0.0, v = 0.0, suv = 0.0, svv = 0.0;
    std::vector<double> us(y.size()), vs(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
        u = y[t] - theta * u;
        v = 1.0 - theta * v;
        us[t] = u;
        vs[t] = v;
        suv += u * v;
        svv += v * v;
    }
    const double c = suv / svv;
    double css = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double e = us[t] - c * vs[t];
        css += e * e;
    }
    return {css, c, us.back() - c * vs.back()};
}

IndexModel fit_ma(std::span<const double> y) {
    double best_theta = 0.0;
    double best_css = std::numeric_limits<double>::infinity();
    for (int k = -99; k <= 99; ++k) {
        const double th = 0.01 * k;
        const double css = ma_profile(y, th).css;
        if (css < best_css) {
            best_css = css;
            best_theta = th;
        }
    }
    // Golden-section refinement around the best grid point.
    double lo = std::max(-kMaxCoef, best_theta - 0.01);
    double hi = std::min(kMaxCoef, best_theta + 0.01);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = ma_profile(y, x1).css, f2 = ma_profile(y, x2).css;
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = ma_profile(y, x1).css;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = ma_profile(y, x2).css;
        }
    }
    const double cand = 0.5 * (lo + hi);
    const auto refined = ma_profile(y, cand);
    const double theta = refined.css < best_css ? cand : best_theta;
    const auto p = ma_profile(y, theta);

    IndexModel m;
    m.order = {0, 1, 1};
    m.ma = theta;
    m.drift = p.drift;
    m.last_residual = p.last_resid;
    finish(m, p.css, y.size(), 3);
    return m;
}

void check_order(ArimaOrder o) {
    if (o.d != 1 || o.p < 0 || o.p > 1 || o.q < 0 || o.q > 1 || (o.p == 1 && o.q == 1)) {
        throw std::invalid_argument("unsupported ARIMA order " + to_string(o) +
                                    " (expected (0,1,0), (1,1,0) or (0,1,1))");
    }
}

void check_series(std::span<const double> series) {
    if (series.size() < 5) throw std::invalid_argument("index series needs at least 5 values");
    for (double v : series) {
        if (!std::isfinite(v)) throw std::invalid_argument("index series holds a non-finite value");
    }
}

bool constant_differences(std::span<const double> y) {
    double scale = 0.0;
    for (double v : y) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * std::max(scale, 1.0);
    return std::all_of(y.begin(), y.end(), [&](double v) { return std::abs(v - y.front()) <= tol; });
}

IndexModel exact_trend(std::span<const double> y) {
    IndexModel m;
    m.order = {0, 1, 0};
    m.drift = y.front();
    m.degenerate = true;
    m.n_used = y.size();
    return m;
}

void set_origin(IndexModel& m, std::span<const double> series) {
    m.last_value = series.back();
    m.last_diff = series[series.size() - 1] - series[series.size() - 2];
}

}  // namespace

std::string to_string(ArimaOrder o) {
    return "(" + std::to_string(o.p) + "," + std::to_string(o.d) + "," + std::to_string(o.q) + ")";
}

std::span<const ArimaOrder> default_candidates() {
    static constexpr std::array<ArimaOrder, 3> c{{{0, 1, 0}, {1, 1, 0}, {0, 1, 1}}};
    return c;
}

IndexModel fit_index_order(std::span<const double> series, ArimaOrder order) {
    check_order(order);
    check_series(series);
    const auto y = differences(series);
    IndexModel m;
    if (constant_differences(y)) {
        m = exact_trend(y);
    } else if (order.p == 1) {
        m = fit_ar(y);
    } else if (order.q == 1) {
        m = fit_ma(y);
    } else {
        m = fit_rwd(y);
    }
    set_origin(m, series);
    return m;
}

IndexModel fit_index(std::span<const double> series, std::span<const ArimaOrder> candidates) {
    check_series(series);
    if (candidates.empty()) throw std::invalid_argument("no candidate ARIMA orders");
    for (auto o : candidates) check_order(o);
    const auto y = differences(series);
    if (constant_differences(y)) {
        auto m = exact_trend(y);
        set_origin(m, series);
        return m;
    }
    IndexModel best;
    bool have = false;
    for (auto o : candidates) {
        auto m = o.p == 1 ? fit_ar(y) : o.q == 1 ? fit_ma(y) : fit_rwd(y);
        if (!have || m.bic < best.bic) {
            best = m;
            have = true;
        }
    }
    set_origin(best, series);
    return best;
}

IndexMoments forecast_index(const IndexModel& model, int h) {
    return forecast_index(model, {model.last_value, model.last_diff, model.last_residual}, h);
}

IndexMoments forecast_index(const IndexModel& m, LastValues origin, int h) {
    if (h < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    const double hd = static_cast<double>(h);
    IndexMoments r;
    if (m.order.p == 1) {
        const double phi = m.ar;
        const double c = m.drift;
        // Sum of the forecast differences c + phi^j (y_T - c), j = 1..h.
        double mean = origin.value;
        double pj = 1.0;
        for (int j = 1; j <= h; ++j) {
            pj *= phi;
            mean += c + pj * (origin.diff - c);
        }
        // Level error weights psi_k = sum_{i=0}^{h-k} phi^i.
        double var = 0.0;
        for (int k = 1; k <= h; ++k) {
            double psi = 0.0, p = 1.0;
            for (int i = 0; i <= h - k; ++i) {
                psi += p;
                p *= phi;
            }
            var += psi * psi;
        }
        r.mean = mean;
        r.variance = m.sigma2 * var;
    } else if (m.order.q == 1) {
        const double th = m.ma;
        r.mean = origin.value + hd * m.drift + th * origin.residual;
        r.variance = m.sigma2 * ((hd - 1.0) * (1.0 + th) * (1.0 + th) + 1.0);
    } else {
        r.mean = origin.value + hd * m.drift;
        r.variance = hd * m.sigma2;
    }
    return r;
}

std::vector<double> simulate_index_path(const IndexModel& m, int h, CounterRng& rng) {
    if (h < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    const double sd = std::sqrt(m.sigma2);
    std::vector<double> path(static_cast<std::size_t>(h));
    double level = m.last_value;
    double diff = m.last_diff;
    double eps_prev = m.last_residual;
    std::normal_distribution<double> normal(0.0, sd);
    for (int j = 0; j < h; ++j) {
        const double e = sd > 0.0 ? normal(rng) : 0.0;
        if (m.order.p == 1) {
            diff = m.drift + m.ar * (diff - m.drift) + e;
        } else if (m.order.q == 1) {
            diff = m.drift + e + m.ma * eps_prev;
        } else {
            diff = m.drift + e;
        }
        eps_prev = e;
        level += diff;
        path[static_cast<std::size_t>(j)] = level;
    }
    return path;
}

std::string to_string(MeanMode m) { return m == MeanMode::Plugin ? "plugin" : "lognormal"; }

MeanMode parse_mean_mode(const std::string& s) {
    if (s == "lognormal") return MeanMode::Lognormal;
    if (s == "plugin") return MeanMode::Plugin;
    throw std::invalid_argument("unknown mean mode '" + s + "' (expected lognormal or plugin)");
}

RateMoments lognormal_rate_moments(double a, double b, double m, double s2, MeanMode mode) {
    const double eta = a + b * m;
    const double v = b * b * s2;
    RateMoments r;
    r.mu_bar = mode == MeanMode::Plugin ? std::exp(eta) : std::exp(eta + 0.5 * v);
    r.sigma2_bar = std::expm1(v) * std::exp(2.0 * eta + v);
    return r;
}

GlobalForecast fit_global_forecast(const FittedGapc& fit, const ForecastOptions& options) {
    GlobalForecast g;
    g.kappa = options.kappa_order ? fit_index_order(fit.kappa, *options.kappa_order) : fit_index(fit.kappa);
    if (fit.has_cohort()) {
        const int c0 = fit.first_fitted_cohort();
        const int c1 = fit.last_fitted_cohort();
        std::vector<double> series;
        for (int c = c0; c <= c1; ++c) series.push_back(fit.gamma[fit.cohorts.index(c)]);
        g.gamma = options.gamma_order ? fit_index_order(series, *options.gamma_order) : fit_index(series);
    }
    return g;
}

RateMoments rate_moments(const FittedGapc& fit, const GlobalForecast& fc, int age, int h, MeanMode mode) {
    if (!fit.ages.contains(age)) throw std::out_of_range("age " + std::to_string(age) + " outside the fitted ages");
    const auto k = forecast_index(fc.kappa, h);
    const auto ix = fit.ages.index(age);
    double a = fit.alpha[ix];
    double mean_extra = 0.0;
    double var_extra = 0.0;
    if (fit.has_cohort()) {
        const int cohort = fit.years.last + h - age;
        const int last = fit.last_fitted_cohort();
        if (cohort <= last) {
            a += fit.cohort_effect(std::max(cohort, fit.cohorts.first));
        } else {
            if (!fc.gamma) throw std::invalid_argument("cohort index forecast missing");
            const auto g = forecast_index(*fc.gamma, cohort - last);
            mean_extra = g.mean;
            var_extra = g.variance;
        }
    }
    // kappa and gamma forecasts are independent, so their variances add on the log scale.
    const double b = fit.beta[ix];
    const double eta = a + b * k.mean + mean_extra;
    const double v = b * b * k.variance + var_extra;
    RateMoments r;
    r.mu_bar = mode == MeanMode::Plugin ? std::exp(eta) : std::exp(eta + 0.5 * v);
    r.sigma2_bar = std::expm1(v) * std::exp(2.0 * eta + v);
    return r;
}

RateForecast forecast_rates(const FittedGapc& fit, const GlobalForecast& fc, int horizon, MeanMode mode) {
    if (horizon < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    RateForecast r;
    r.ages = fit.ages;
    r.t_prime = fit.years.last;
    r.horizon = horizon;
    const auto h = static_cast<std::size_t>(horizon);
    r.mu_bar = Matrix<double>(fit.ages.size(), h);
    r.sigma2_bar = Matrix<double>(fit.ages.size(), h);
    for (std::size_t ix = 0; ix < fit.ages.size(); ++ix) {
        for (std::size_t j = 0; j < h; ++j) {
            const auto m = rate_moments(fit, fc, fit.ages.at(ix), static_cast<int>(j) + 1, mode);
            r.mu_bar(ix, j) = m.mu_bar;
            r.sigma2_bar(ix, j) = m.sigma2_bar;
        }
    }
    return r;
}

nlohmann::json to_json(const IndexModel& m) {
    return {{"order", {m.order.p, m.order.d, m.order.q}},
            {"drift", m.drift},
            {"ar", m.ar},
            {"ma", m.ma},
            {"sigma2", m.sigma2},
            {"loglik", m.loglik},
            {"bic", m.bic},
            {"n_used", m.n_used},
            {"degenerate", m.degenerate},
            {"last_value", m.last_value},
            {"last_diff", m.last_diff},
            {"last_residual", m.last_residual}};
}

IndexModel index_model_from_json(const nlohmann::json& j) {
    IndexModel m;
    const auto& o = j.at("order");
    m.order = {o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>()};
    check_order(m.order);
    m.drift = j.at("drift").get<double>();
    m.ar = j.at("ar").get<double>();
    m.ma = j.at("ma").get<double>();
    m.sigma2 = j.at("sigma2").get<double>();
    m.loglik = j.at("loglik").get<double>();
    m.bic = j.at("bic").get<double>();
    m.n_used = j.at("n_used").get<std::size_t>();
    m.degenerate = j.at("degenerate").get<bool>();
    m.last_value = j.at("last_value").get<double>();
    m.last_diff = j.at("last_diff").get<double>();
    m.last_residual = j.at("last_residual").get<double>();
    return m;
}

nlohmann::json to_json(const GlobalForecast& f) {
    nlohmann::json j;
    j["kappa"] = to_json(f.kappa);
    j["gamma"] = f.gamma ? to_json(*f.gamma) : nlohmann::json(nullptr);
    return j;
}

GlobalForecast global_forecast_from_json(const nlohmann::json& j) {
    GlobalForecast f;
    f.kappa = index_model_from_json(j.at("kappa"));
    if (j.contains("gamma") && !j.at("gamma").is_null()) f.gamma = index_model_from_json(j.at("gamma"));
    return f;
}

}  // namespace credmort
