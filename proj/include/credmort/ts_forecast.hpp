#pragma once

#include "credmort/gapc.hpp"
#include "credmort/mortality_table.hpp"
#include "credmort/rng.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace credmort {

struct ArimaOrder {
    int p = 0;
    int d = 1;
    int q = 0;
    friend bool operator==(const ArimaOrder&, const ArimaOrder&) = default;
};

[[nodiscard]] std::string to_string(ArimaOrder o);

/// ARIMA(p,1,q) with drift for a fitted period or cohort index, p, q <= 1.
/// Conditional-sum-of-squares estimates; `drift` is the mean of the differenced series.
struct IndexModel {
    ArimaOrder order;
    double drift = 0.0;
    double ar = 0.0;
    double ma = 0.0;
    double sigma2 = 0.0;
    double loglik = 0.0;
    double bic = 0.0;
    std::size_t n_used = 0;
    /// Exact linear trend: no innovation variance, likelihood undefined.
    bool degenerate = false;
    // State at the forecast origin.
    double last_value = 0.0;
    double last_diff = 0.0;
    double last_residual = 0.0;
};

/// Forecast origin for an index: its last level, last first difference and last
/// innovation (only the MA term uses the latter).
struct LastValues {
    double value = 0.0;
    double diff = 0.0;
    double residual = 0.0;
};

struct IndexMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// (0,1,0), (1,1,0), (0,1,1), all with drift.
[[nodiscard]] std::span<const ArimaOrder> default_candidates();

/// Fits every candidate and returns the minimum-BIC model. Needs at least 5 values.
/// A series with constant differences gives (0,1,0) with zero innovation variance.
[[nodiscard]] IndexModel fit_index(std::span<const double> series,
                                   std::span<const ArimaOrder> candidates = default_candidates());

/// Fits one given order.
[[nodiscard]] IndexModel fit_index_order(std::span<const double> series, ArimaOrder order);

/// Exact h-step Gaussian predictive mean and variance of the index level.
[[nodiscard]] IndexMoments forecast_index(const IndexModel& model, int h);
[[nodiscard]] IndexMoments forecast_index(const IndexModel& model, LastValues origin, int h);

/// One simulated future path of levels (h values) from the model's origin.
[[nodiscard]] std::vector<double> simulate_index_path(const IndexModel& model, int h, CounterRng& rng);

enum class MeanMode { Lognormal, Plugin };

[[nodiscard]] std::string to_string(MeanMode m);
[[nodiscard]] MeanMode parse_mean_mode(const std::string& s);

/// Conditional mean and variance of a future central rate.
struct RateMoments {
    double mu_bar = 0.0;
    double sigma2_bar = 0.0;
};

/// Moments of exp(a + b K) with K ~ Normal(m, s2):
///   mu_bar = exp(a + b m + b^2 s2 / 2)            (Plugin: exp(a + b m))
///   sigma2_bar = (exp(b^2 s2) - 1) exp(2(a + b m) + b^2 s2)
[[nodiscard]] RateMoments lognormal_rate_moments(double a, double b, double m, double s2,
                                                 MeanMode mode = MeanMode::Lognormal);

/// Index models of a fitted GAPC predictor: kappa always, gamma when the family has a
/// cohort term. Future cohorts beyond the last fitted one are extrapolated by the
/// gamma model; kappa and gamma forecasts are treated as independent.
struct GlobalForecast {
    IndexModel kappa;
    std::optional<IndexModel> gamma;
};

struct ForecastOptions {
    MeanMode mean_mode = MeanMode::Lognormal;
    /// When set, these orders are refitted instead of running BIC selection.
    std::optional<ArimaOrder> kappa_order;
    std::optional<ArimaOrder> gamma_order;
};

[[nodiscard]] GlobalForecast fit_global_forecast(const FittedGapc& fit, const ForecastOptions& options = {});

/// mu_bar and sigma2_bar for age x, h years after the last fitted year.
[[nodiscard]] RateMoments rate_moments(const FittedGapc& fit, const GlobalForecast& forecast, int age, int h,
                                       MeanMode mode = MeanMode::Lognormal);

/// Rate forecasts for every fitted age and horizons 1..horizon.
struct RateForecast {
    IntRange ages;
    int t_prime = 0;
    int horizon = 0;
    Matrix<double> mu_bar;      // ages x horizon, column h-1
    Matrix<double> sigma2_bar;  // ages x horizon
};

[[nodiscard]] RateForecast forecast_rates(const FittedGapc& fit, const GlobalForecast& forecast, int horizon,
                                          MeanMode mode = MeanMode::Lognormal);

[[nodiscard]] nlohmann::json to_json(const IndexModel& m);
[[nodiscard]] IndexModel index_model_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const GlobalForecast& f);
[[nodiscard]] GlobalForecast global_forecast_from_json(const nlohmann::json& j);

}  // namespace credmort
