#pragma once

#include "credmort/credibility.hpp"
#include "credmort/gapc.hpp"
#include "credmort/mortality_table.hpp"
#include "credmort/rng.hpp"
#include "credmort/ts_forecast.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace credmort {

struct MsepDecomposition {
    double mu_bar = 0.0;
    double sigma2_bar = 0.0;
    double var_theta = 0.0;
    double z = 0.0;
    double var_mu_theta = 0.0;   // Var(mu(Theta) | G)
    double var_theta_hat = 0.0;  // Var(theta_hat | G)
    double msep = 0.0;           // var_mu_theta + z^2 mu_bar^2 var_theta_hat
};

/// Closed-form MSEP of the credibility predictor. `weights` are the in-sample E_t mu_t.
///   Var(mu(Theta)) = sigma2_bar (V + 1) + mu_bar^2 V
///   Var(theta_hat) = V sum w^2 / (sum w)^2 + 1 / sum w
/// Exact when the random effect is drawn afresh for every calendar year.
[[nodiscard]] MsepDecomposition msep_closed_form(double mu_bar, double sigma2_bar, double var_theta, double z,
                                                 std::span<const double> weights);

/// Exact MSEP when one random effect is shared by all years (past and future):
///   sigma2_bar (V + 1) + mu_bar^2 [(1 - Z)^2 V + Z^2 / W].
[[nodiscard]] double msep_common_effect(double mu_bar, double sigma2_bar, double var_theta, double z,
                                        std::span<const double> weights);

enum class ThetaLaw { Lognormal, TwoPoint };
enum class EffectSharing { PerYear, Shared };

[[nodiscard]] std::string to_string(ThetaLaw law);
[[nodiscard]] ThetaLaw parse_theta_law(const std::string& s);

/// Draws of a mean-one random effect with variance V. The two-point law puts mass
/// 1/2 on 1 +- sqrt(V) and needs V < 1.
class ThetaSampler {
public:
    ThetaSampler(ThetaLaw law, double var_theta);
    double operator()(CounterRng& rng);

private:
    ThetaLaw law_;
    double v_;
    double m_ = 0.0;
    double s_ = 0.0;
};

struct MonteCarloSpec {
    ThetaLaw law = ThetaLaw::Lognormal;
    EffectSharing sharing = EffectSharing::PerYear;
    std::size_t n_sims = 1'000'000;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct MonteCarloEstimate {
    double msep = 0.0;
    double std_error = 0.0;
};

/// Empirical squared prediction error of mu_bar (1 + Z (theta_hat - 1)) for the target
/// mu Theta: mu is lognormal with mean mu_bar and variance sigma2_bar, in-sample deaths
/// are Poisson(w_t Theta_t). Simulations run in fixed chunks with derived streams, so
/// the result does not depend on `threads`.
[[nodiscard]] MonteCarloEstimate msep_monte_carlo(double mu_bar, double sigma2_bar, double var_theta, double z,
                                                  std::span<const double> weights, const MonteCarloSpec& spec);

struct PoissonBounds {
    double lower = 0.0;
    double upper = 0.0;
};

/// mu +- sqrt(mu / E): one standard deviation of D/E with D ~ Poisson(E mu).
[[nodiscard]] PoissonBounds poisson_bounds(double mu, double exposure);
/// The same bounds from simulated counts (sample mean +- sample standard deviation).
[[nodiscard]] PoissonBounds poisson_bounds_mc(double mu, double exposure, std::size_t n_sims, std::uint64_t seed);

struct MsepRow {
    std::string population_id;
    int age = 0;
    int horizon = 0;
    std::string method;
    double msep = 0.0;
    // Closed-form components; NaN for the bootstrap rows.
    double var_mu_theta = 0.0;
    double var_theta_hat = 0.0;
    double z = 0.0;
};

enum class MsepFormula { Closed, CommonEffect };

[[nodiscard]] std::string to_string(MsepFormula f);
[[nodiscard]] MsepFormula parse_msep_formula(const std::string& s);

/// Credibility MSEP for every age and horizon of one sub-population.
[[nodiscard]] std::vector<MsepRow> credibility_msep(const MortalityTable& table, const Matrix<double>& mu_hat,
                                                    const CredibilityEstimate& estimate, const RateForecast& forecast,
                                                    MsepFormula formula = MsepFormula::Closed);

struct BootstrapOptions {
    int replicates = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    ForecastOptions forecast;
};

struct BootstrapMsep {
    IntRange ages;
    int t_prime = 0;
    int horizon = 0;
    Matrix<double> point;  // ages x horizon
    Matrix<double> msep;   // ages x horizon
    int used = 0;
    int dropped = 0;
    /// More than 20% of the refits failed or did not converge.
    bool unreliable = false;
};

/// Residual-bootstrap MSEP of a population's own GAPC forecast. Deviance residuals are
/// resampled, inverted to pseudo counts (floored at zero), the model is refitted and
/// one future index path is simulated per replicate. MSEP = variance of the replicate
/// forecasts + squared bias against the point forecast of `fit`.
[[nodiscard]] BootstrapMsep bootstrap_msep_benchmark(const FittedGapc& fit, const MortalityTable& table, int horizon,
                                                     const BootstrapOptions& options = {});

/// Signed deviance residual of a Poisson count against its fitted mean.
[[nodiscard]] double deviance_residual(double deaths, double fitted);
/// Count whose deviance residual against `fitted` equals r; zero when none exists.
[[nodiscard]] double invert_deviance_residual(double r, double fitted);

[[nodiscard]] std::vector<MsepRow> bootstrap_rows(const std::string& population_id, const BootstrapMsep& b);

/// CSV `population,age,horizon,msep,var_mu_theta,var_theta_hat,z,method`.
void write_msep_csv(std::ostream& out, std::span<const MsepRow> rows);

}  // namespace credmort
