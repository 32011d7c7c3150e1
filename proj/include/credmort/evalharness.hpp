#pragma once

#include "credmort/credibility.hpp"
#include "credmort/gapc.hpp"
#include "credmort/msep.hpp"
#include "credmort/popsim.hpp"
#include "credmort/ts_forecast.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace credmort {

/// A: credibility predictor, B: relative survival mu_bar theta_hat,
/// C: the population's own GAPC forecast, D: the super-population forecast.
enum class Approach { A, B, C, D };

[[nodiscard]] std::string to_string(Approach a);
[[nodiscard]] Approach parse_approach(const std::string& s);

struct AgeGroup {
    int first = 0;
    int last = 0;
    [[nodiscard]] std::string label() const { return std::to_string(first) + "-" + std::to_string(last); }
    friend bool operator==(const AgeGroup&, const AgeGroup&) = default;
};

/// Consecutive brackets of `width` years from `first` up to `last`.
[[nodiscard]] std::vector<AgeGroup> age_brackets(int first, int last, int width);

enum class DevianceSign {
    Conventional,  // 2E (F log(F/mu) - F + mu), non-negative
    Paper,         // -2E (mu - F + F log(F/mu)) as displayed in the source formula
};

[[nodiscard]] std::string to_string(DevianceSign s);
[[nodiscard]] DevianceSign parse_deviance_sign(const std::string& s);

struct EvalPlan {
    int t_prime = 2014;
    int h = 6;
    std::vector<AgeGroup> age_groups = age_brackets(16, 85, 5);
    std::vector<Approach> approaches{Approach::A, Approach::B, Approach::C, Approach::D};
    int replications = 3;
    std::uint64_t seed = 20240601;
    GapcSpec global_model;
    ForecastOptions forecast;
    CredibilityOptions credibility;
    MsepFormula msep_formula = MsepFormula::Closed;
    /// Reuse the ARIMA orders selected at the first window instead of re-selecting.
    bool freeze_orders = false;
    DevianceSign deviance_sign = DevianceSign::Conventional;
    int fan_age = 65;
    int fan_horizon = 5;
    int threads = 1;
};

/// (t', t'+1), (t'+1, t'+2), ..., (t'+h-1, t'+h). When `last_year` is given, a test
/// year past it is an error.
[[nodiscard]] std::vector<std::pair<int, int>> rolling_windows(int t_prime, int h);
[[nodiscard]] std::vector<std::pair<int, int>> rolling_windows(int t_prime, int h, int last_year);

/// Absolute relative error |mu - F| / F, zero when F = 0.
[[nodiscard]] double absolute_relative_error(double mu, double crude);

/// Cell Poisson deviance; F log(F/mu) is taken as 0 for F = 0. Throws for mu <= 0.
[[nodiscard]] double poisson_deviance(double mu, double crude, double exposure,
                                      DevianceSign sign = DevianceSign::Conventional);

/// Predictions and observations over ages x test years; cells with zero exposure
/// are skipped.
struct ScoredCells {
    std::vector<double> mu;
    std::vector<double> crude;
    std::vector<double> exposure;
};

[[nodiscard]] double mare(const ScoredCells& cells);
[[nodiscard]] double mean_poisson_deviance(const ScoredCells& cells, DevianceSign sign = DevianceSign::Conventional);

struct MetricRow {
    Approach approach = Approach::A;
    std::string population_id;
    AgeGroup age_group;
    int replication = 0;
    double mare = 0.0;
    double deviance = 0.0;
};

struct FanRow {
    int replication = 0;
    std::string population_id;
    int age = 0;
    int year = 0;
    double observed_f = 0.0;
    double mu_hat = 0.0;
    double msep_lo = 0.0;
    double msep_hi = 0.0;
    double pois_lo = 0.0;
    double pois_hi = 0.0;
};

struct ReplicationResult {
    int replication = 0;
    std::uint64_t seed = 0;
    std::vector<MetricRow> metrics;
    std::vector<FanRow> fan;
    /// Credibility components at t' per population ("0" first, then sub-populations).
    std::vector<CredibilityEstimate> credibility_at_t_prime;
    /// Windows in which approach C fell back to D, per population.
    std::vector<std::pair<std::string, int>> fallbacks;
};

/// Runs every approach over the rolling windows on one simulated data set.
[[nodiscard]] ReplicationResult run_approaches(const SimOutput& data, const EvalPlan& plan, int replication = 0);

struct EvalResult {
    std::vector<ReplicationResult> replications;

    [[nodiscard]] std::vector<MetricRow> metrics() const;
    [[nodiscard]] std::vector<FanRow> fan() const;
};

/// Simulates `plan.replications` independent data sets (replication r uses seed
/// plan.seed + r) and evaluates each.
[[nodiscard]] EvalResult evaluate(const SimConfig& sim, const EvalPlan& plan);

/// Mean metric over age groups for one approach, population and replication.
[[nodiscard]] double aggregate_mare(std::span<const MetricRow> rows, Approach a, const std::string& population,
                                    int replication);

/// `approach,population,age_group,replication,mare,deviance`.
void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);
/// `population,age,year,observed_F,mu_hat,msep_lo,msep_hi,pois_lo,pois_hi`.
void write_fan_csv(std::ostream& out, std::span<const FanRow> rows);

}  // namespace credmort
