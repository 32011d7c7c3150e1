#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace credmort {

struct CartOptions {
    int folds = 5;
    /// Pick the simplest subtree whose CV error is within one standard error of the
    /// minimum; otherwise the minimum-error subtree.
    bool one_se_rule = true;
};

/// Piecewise-constant fit over an ordered covariate.
struct CartFit {
    /// First covariate value of each bin, increasing.
    std::vector<double> bin_starts;
    std::vector<double> bin_means;
    /// Fitted value per input point.
    std::vector<double> fitted;
    /// Cost-complexity penalty chosen by cross-validation.
    double alpha = 0.0;

    [[nodiscard]] std::size_t bins() const noexcept { return bin_means.size(); }
    [[nodiscard]] double predict(double x) const;
};

/// Univariate L2 regression tree: exhaustive split search, grown to purity, then
/// pruned by cost-complexity with the penalty chosen by k-fold cross-validation.
/// Folds are assigned by position (point i goes to fold i mod k), so the result is
/// deterministic. `x` must be strictly increasing; `weights` may be empty (unit).
[[nodiscard]] CartFit cart_bin(std::span<const double> x, std::span<const double> y,
                               std::span<const double> weights = {}, const CartOptions& options = {});

}  // namespace credmort
