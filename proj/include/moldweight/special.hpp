#pragma once

// Special functions shared by the ACF significance test and the t-test.

namespace moldweight::special {

/// Standard normal CDF.
[[nodiscard]] double normal_cdf(double x);

/// Inverse of the standard normal CDF for p in (0, 1). Acklam's rational
/// approximation followed by one Halley refinement step (~1e-15 relative).
[[nodiscard]] double normal_quantile(double p);

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1],
/// evaluated with the modified Lentz continued fraction.
[[nodiscard]] double incomplete_beta(double a, double b, double x);

}  // namespace moldweight::special
