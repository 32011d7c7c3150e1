#pragma once

#include "credmort/mortality_table.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace credmort {

enum class ModelFamily { LC, APC, RH };

[[nodiscard]] std::string to_string(ModelFamily f);
[[nodiscard]] ModelFamily parse_family(const std::string& s);

/// Generalised age-period-cohort predictor with identification constraints.
///
///   LC : alpha_x + beta_x kappa_t            sum beta = 1, sum kappa = 0
///   APC: alpha_x + kappa_t + gamma_{t-x}     sum gamma = 0, sum c gamma_c = 0, sum kappa = 0
///   RH : alpha_x + beta_x kappa_t + gamma_c  sum beta = 1, sum kappa = 0, sum gamma = 0
///
/// The kappa location constraints (and the RH gamma one) are switchable; switching one
/// off leaves the fitted rates unchanged but frees one parameter in the BIC count.
struct GapcSpec {
    ModelFamily family = ModelFamily::LC;
    bool center_kappa = true;
    bool center_gamma = true;  // RH only; APC always carries its two cohort constraints
    /// Cohorts observed in fewer cells are left out of the likelihood (their gamma is
    /// not identified by the data).
    int min_cohort_cells = 3;
    double tolerance = 1e-8;  // absolute deviance change between sweeps
    int max_sweeps = 10000;
};

struct FittedGapc {
    GapcSpec spec;
    IntRange ages;
    IntRange years;
    IntRange cohorts;  // years.first - ages.last .. years.last - ages.first
    std::vector<double> alpha;
    std::vector<double> beta;   // all ones for APC
    std::vector<double> kappa;
    std::vector<double> gamma;  // empty for LC
    std::vector<bool> gamma_fitted;
    double loglik = 0.0;        // full Poisson log-likelihood
    double deviance = 0.0;
    double bic = 0.0;
    std::size_t n_obs = 0;
    int n_params = 0;
    bool converged = false;
    int n_iter = 0;
    /// Deviance at the start and after every sweep (not serialised).
    std::vector<double> deviance_trace;

    [[nodiscard]] bool has_cohort() const noexcept { return spec.family != ModelFamily::LC; }
    /// Fitted cohorts form a contiguous block; these return its ends.
    [[nodiscard]] int first_fitted_cohort() const;
    [[nodiscard]] int last_fitted_cohort() const;
    /// gamma for any in-sample cohort; unfitted edge cohorts take the nearest fitted value.
    [[nodiscard]] double cohort_effect(int cohort) const;
    /// In-sample linear predictor log mu.
    [[nodiscard]] double log_mu(std::size_t ix, std::size_t it) const;
};

/// Poisson maximum likelihood by cyclic block Newton with step halving, so the
/// deviance never increases between sweeps. Identification constraints are
/// re-imposed after every sweep.
[[nodiscard]] FittedGapc fit(const MortalityTable& table, const GapcSpec& spec);

/// Fit with one shared mu over several populations observed on the same grid; each
/// population's cells enter the likelihood separately.
[[nodiscard]] FittedGapc fit_stacked(std::span<const MortalityTable> tables, const GapcSpec& spec);

/// Warm-started fit (used by the bootstrap). `start` must share the table's grid.
[[nodiscard]] FittedGapc fit_from(const MortalityTable& table, const GapcSpec& spec, const FittedGapc& start);

/// Free parameters: raw parameter count minus one per active constraint.
[[nodiscard]] int free_parameters(const GapcSpec& spec, std::size_t n_ages, std::size_t n_years,
                                  std::size_t n_fitted_cohorts);

/// -2 loglik + k log n.
[[nodiscard]] double bic_value(double loglik, int free_params, std::size_t n_obs);

/// Full Poisson log-likelihood of the fitted rates on `table` (observed cells only;
/// cells of unfitted cohorts are skipped).
[[nodiscard]] double poisson_loglik(const FittedGapc& fit, const MortalityTable& table);

/// BIC recomputed from the table.
[[nodiscard]] double bic(const FittedGapc& fit, const MortalityTable& table);

/// exp(linear predictor) for an in-sample (age, year). Throws std::out_of_range for
/// anything outside the fitted grid; forecasts live in ts_forecast.
[[nodiscard]] double predict_mu(const FittedGapc& fit, int age, int year);

/// Fitted rates on the whole in-sample grid (ages x years).
[[nodiscard]] Matrix<double> fitted_rates(const FittedGapc& fit);

/// Reapply the identification constraints (mu is unchanged).
void apply_constraints(FittedGapc& fit);

[[nodiscard]] nlohmann::json to_json(const FittedGapc& fit);
[[nodiscard]] FittedGapc fitted_from_json(const nlohmann::json& j);

}  // namespace credmort
