#pragma once

#include "credmort/mortality_table.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace credmort {

/// Law of the per-age relative-risk factor of a sub-population.
struct EffectLaw {
    enum class Kind { Constant, Uniform };
    Kind kind = Kind::Constant;
    double lower = 1.0;  // Constant: the value
    double upper = 1.0;

    [[nodiscard]] static EffectLaw constant(double v) { return {Kind::Constant, v, v}; }
    [[nodiscard]] static EffectLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
};

struct SubPopulationSpec {
    std::string id;
    double cohort_size = 0.0;  // individuals entering at the youngest age, every year
    EffectLaw law;
};

/// Baseline log-odds of death, linear in age with a linear calendar improvement:
///   delta(x, t) = intercept + age_slope x + year_slope (t - reference_year).
struct GompertzBaseline {
    double intercept = -10.6;
    double age_slope = 0.095;
    double year_slope = -0.015;
    double reference_year = 2000.0;

    [[nodiscard]] double operator()(int age, int year) const {
        return intercept + age_slope * age + year_slope * (year - reference_year);
    }
};

/// Tabulated baseline over (ages, years). Lookups before the first year use the
/// first column and after the last year the last column; ages must be covered.
struct DeltaMatrix {
    IntRange ages;
    IntRange years;
    Matrix<double> delta;

    [[nodiscard]] double operator()(int age, int year) const;
};

/// CSV `age,year,delta`, one row per cell of a full rectangle.
[[nodiscard]] DeltaMatrix read_delta_csv(const std::string& path);
[[nodiscard]] DeltaMatrix read_delta_csv(std::istream& in);

struct SimConfig {
    IntRange ages{0, 110};
    IntRange years{1971, 2020};
    std::vector<SubPopulationSpec> subpopulations{
        {"1", 5000.0, EffectLaw::uniform(0.7, 0.8)},
        {"2", 500.0, EffectLaw::uniform(1.2, 1.3)},
        {"3", 94500.0, EffectLaw::constant(1.0)},
    };
    GompertzBaseline gompertz;
    /// Replaces the parametric baseline when set.
    std::optional<DeltaMatrix> delta;
    std::uint64_t seed = 20240601;
    int threads = 1;

    [[nodiscard]] double baseline(int age, int year) const { return delta ? (*delta)(age, year) : gompertz(age, year); }
};

struct SimOutput {
    /// Lives on ages.first..ages.last+1 x years.first..years.last+1 per sub-population.
    std::vector<RawLivesTable> raw;
    /// Lexis-converted tables on ages x years, one per sub-population.
    std::vector<MortalityTable> subpopulations;
    /// Cell-wise sum of the sub-populations, id "0".
    MortalityTable super;
    /// Realised effect per age (rows) and sub-population (columns).
    Matrix<double> theta;
};

/// theta e^delta / (1 + theta e^delta).
[[nodiscard]] double death_prob(double delta, double theta);

/// Closed-cohort binomial simulation. Every cohort enters at the youngest age with
/// its sub-population's size; cohorts that are already older at the first year are
/// simulated from their entry year. One effect per (age, sub-population) is drawn
/// for the whole run. Deterministic in (config, seed), whatever `threads` is.
[[nodiscard]] SimOutput simulate(const SimConfig& config);

/// |(1 - q)^N - exp(-N theta e^delta)| / (1 - q)^N with theta e^delta = q / (1 - q),
/// the odds the binomial model induces.
[[nodiscard]] double poisson_approx_rel_error(double q, double n);

/// Maximum of poisson_approx_rel_error over a grid of q at fixed N.
[[nodiscard]] double poisson_approx_check(std::span<const double> q, double n);

/// `population,age,theta`.
void write_theta_csv(std::ostream& out, const SimConfig& config, const SimOutput& sim);

}  // namespace credmort
