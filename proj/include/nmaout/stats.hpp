#pragma once

// Scalar densities and robust summaries shared by the model, the sampler and
// the discrepancy measures. Everything here is pure and allocation-light.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace nmaout::stats {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inv_logit(double x) noexcept {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

inline double log_binomial_coefficient(int n, int k) noexcept {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Binomial log-pmf parameterised by the logit of the success probability,
// minus the binomial coefficient: r*log(p) + (n-r)*log(1-p).
inline double binomial_kernel_logit(int r, int n, double lin) noexcept {
    return r * lin - n * softplus(lin);
}

inline double normal_logpdf(double x, double mean, double sd) noexcept {
    const double z = (x - mean) / sd;
    return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

inline double beta_logpdf(double x, double a, double b) noexcept {
    if (x <= 0.0 || x >= 1.0) return -INFINITY;
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) -
           std::lgamma(a) - std::lgamma(b);
}

// Log-density of N(0, Sigma) with Sigma = tau2/2 * (I + 11') in `values.size()`
// dimensions: tau2 on the diagonal, tau2/2 off the diagonal.
double compound_symmetry_logpdf(std::span<const double> values, double tau2) noexcept;

double median(std::vector<double> values);
double median_absolute_deviation(std::span<const double> values, double centre);

// Linear-interpolated sample quantile (type 7).
double quantile(std::vector<double> values, double prob);

double mean(std::span<const double> values) noexcept;
double variance(std::span<const double> values) noexcept;

struct GaussHermiteRule {
    std::vector<double> nodes;    // roots of the physicists' Hermite polynomial
    std::vector<double> weights;  // for the weight function exp(-x^2)
};

// Golub-Welsch free construction via Newton iteration on the recurrence.
GaussHermiteRule gauss_hermite(std::size_t order);

// Lower-triangular Cholesky factor of a dense row-major n x n matrix.
// Returns false when the matrix is not positive definite.
bool cholesky(std::span<const double> matrix, std::size_t n, std::span<double> lower);

// Standard normal CDF.
inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace nmaout::stats
