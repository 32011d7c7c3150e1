#pragma once

#include "credmort/cart.hpp"
#include "credmort/mortality_table.hpp"
#include "credmort/ts_forecast.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace credmort {

/// Relative-survival MLE for one age: sum D / sum E mu_hat over observed cells.
/// Empty when the effective deaths sum E mu_hat vanish.
[[nodiscard]] std::optional<double> theta_mle(std::span<const double> exposure, std::span<const double> deaths,
                                              std::span<const double> mu_hat);

struct PluginVariance {
    double raw = 0.0;       // moment estimator, may be negative
    double adjusted = 0.0;  // max(raw, 0)
};

/// Moment plug-in estimator of Var(Theta) for one age:
///   [(sum F - sum mu)^2 - sum mu/E] / (sum mu)^2
/// over cells with E > 0, followed by the zero adjustment.
[[nodiscard]] PluginVariance var_theta_plugin(std::span<const double> exposure, std::span<const double> crude,
                                              std::span<const double> mu_hat);

/// Z = W / (1/V + W); zero when V = 0.
[[nodiscard]] double credibility_weight(double effective_deaths, double var_theta);

struct CredibilityPrediction {
    double mu_cred = 0.0;
    double theta_blend = 1.0;  // 1 + Z (theta_hat - 1)
};

/// mu_cred = mu_bar * (1 + Z (theta_hat - 1)), the convex combination
/// (1 - Z) mu_bar + Z mu_bar theta_hat written as a single scale factor.
[[nodiscard]] CredibilityPrediction credibility_predict(double mu_bar, double theta_hat, double z);

/// Age-only special case with deterministic rate mu_x:
///   Z = E_x / (1/(mu_x V) + E_x),  theta_hat = sum_t (E_t / E_x) F_t / mu_x.
struct AgeOnlyCredibility {
    double theta_hat = 1.0;
    double z = 0.0;
    double predictor = 0.0;
};

[[nodiscard]] AgeOnlyCredibility credibility_age_only(std::span<const double> exposure,
                                                      std::span<const double> crude, double mu_x, double var_theta);

struct CredibilityOptions {
    /// Smooth theta_hat and Var(Theta) over age with CART before they are used.
    bool binning = true;
    CartOptions cart;
};

/// Per-age components for one sub-population. Raw and binned values are both kept;
/// `theta_hat` and `var_theta` are the ones fed into Z and the predictor.
struct AgeComponents {
    int age = 0;
    bool theta_defined = false;
    double theta_raw = 1.0;
    double var_raw_m = 0.0;
    double var_raw = 0.0;
    double theta_hat = 1.0;
    double var_theta = 0.0;
    double effective_deaths = 0.0;  // W = sum_t E mu_hat
    double z = 0.0;
};

struct CredibilityEstimate {
    std::string population_id;
    std::vector<AgeComponents> ages;

    [[nodiscard]] const AgeComponents& at_age(int age) const;
};

/// Components for `table` against in-sample global rates on the same grid (ages x years).
[[nodiscard]] CredibilityEstimate estimate_credibility(const MortalityTable& table, const Matrix<double>& mu_hat,
                                                       const CredibilityOptions& options = {});

struct CredibilityRow {
    std::string population_id;
    int age = 0;
    int year = 0;
    double z = 0.0;
    double theta_hat = 1.0;
    double var_theta = 0.0;
    double mu_global = 0.0;
    double mu_sub = 0.0;
    double mu_cred = 0.0;
};

/// Blends the global forecast with the sub-population estimate for every age and horizon.
[[nodiscard]] std::vector<CredibilityRow> credibility_forecast(const CredibilityEstimate& estimate,
                                                               const RateForecast& forecast);

/// CSV `population,age,year,z,theta_hat,var_theta,mu_global,mu_sub,mu_cred`.
void write_credibility_csv(std::ostream& out, std::span<const CredibilityRow> rows);

}  // namespace credmort
