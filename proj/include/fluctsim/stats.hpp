#pragma once

#include <span>
#include <vector>

namespace fluctsim {

double mean(std::span<const double> xs);
double sample_std(std::span<const double> xs); // n-1 denominator, 0 for n < 2

// Normal-approximation 95% confidence half-width, 1.96 * s / sqrt(n).
double ci_half_95(std::span<const double> xs);

// Mann-Kendall trend statistic, normal approximation with tie correction.
// Positive z indicates an increasing trend. |z| > 1.6449 is significant
// one-sided at the 0.95 level.
double mann_kendall_z(std::span<const double> xs);

struct LinearFit {
    double intercept = 0;
    double slope = 0;
    double r2 = 1; // coefficient of determination
};

// Ordinary least squares y = intercept + slope * x.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

} // namespace fluctsim
