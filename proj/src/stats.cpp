#include "fluctsim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fluctsim {

double mean(std::span<const double> xs) {
    if (xs.empty()) return 0;
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
    if (xs.size() < 2) return 0;
    double m = mean(xs);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double ci_half_95(std::span<const double> xs) {
    if (xs.size() < 2) return 0;
    return 1.96 * sample_std(xs) / std::sqrt(static_cast<double>(xs.size()));
}

double mann_kendall_z(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n < 3) return 0;
    long long s = 0;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (xs[j] > xs[i]) ++s;
            else if (xs[j] < xs[i]) --s;
        }
    // tie correction
    std::map<double, long long> ties;
    for (double x : xs) ++ties[x];
    double var = static_cast<double>(n) * (n - 1) * (2.0 * n + 5) / 18.0;
    for (auto& [v, t] : ties)
        if (t > 1) var -= static_cast<double>(t) * (t - 1) * (2.0 * t + 5) / 18.0;
    if (var <= 0) return 0;
    double num = 0;
    if (s > 0) num = static_cast<double>(s) - 1;
    else if (s < 0) num = static_cast<double>(s) + 1;
    return num / std::sqrt(var);
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("linear_fit: need two equally sized series");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    if (denom == 0) throw std::invalid_argument("linear_fit: degenerate x values");
    LinearFit fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss_res = 0, ss_tot = 0, ym = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double pred = fit.intercept + fit.slope * x[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - ym) * (y[i] - ym);
    }
    fit.r2 = ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

} // namespace fluctsim
