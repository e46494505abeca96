#include "nmaout/stats.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace nmaout::stats {

double compound_symmetry_logpdf(std::span<const double> values, double tau2) noexcept {
    const auto m = static_cast<double>(values.size());
    if (values.empty()) return 0.0;
    if (!(tau2 > 0.0)) return -INFINITY;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double v : values) {
        sum += v;
        sum_sq += v * v;
    }
    // Sigma^{-1} = (2/tau2) (I - 11'/(m+1)),  log|Sigma| = m log(tau2/2) + log(m+1)
    const double quad = (2.0 / tau2) * (sum_sq - sum * sum / (m + 1.0));
    const double log_det = m * std::log(0.5 * tau2) + std::log(m + 1.0);
    return -0.5 * (m * kLog2Pi + log_det + quad);
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty sample");
    const std::size_t n = values.size();
    const std::size_t mid = n / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double median_absolute_deviation(std::span<const double> values, double centre) {
    std::vector<double> dev(values.size());
    std::transform(values.begin(), values.end(), dev.begin(),
                   [centre](double v) { return std::abs(v - centre); });
    return median(std::move(dev));
}

double quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double mean(std::span<const double> values) noexcept {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double variance(std::span<const double> values) noexcept {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return s / static_cast<double>(values.size() - 1);
}

GaussHermiteRule gauss_hermite(std::size_t order) {
    if (order == 0) throw std::invalid_argument("Gauss-Hermite order must be positive");
    GaussHermiteRule rule;
    rule.nodes.assign(order, 0.0);
    rule.weights.assign(order, 0.0);
    const auto n = static_cast<int>(order);
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    const int half = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < half; ++i) {
        // Initial guesses for the largest roots first, then interpolate inward.
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * rule.nodes[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * rule.nodes[1];
        } else {
            z = 2.0 * z - rule.nodes[static_cast<std::size_t>(i - 2)];
        }
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = pim4;
            double p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-14) break;
        }
        rule.nodes[static_cast<std::size_t>(i)] = z;
        rule.nodes[static_cast<std::size_t>(n - 1 - i)] = -z;
        rule.weights[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
        rule.weights[static_cast<std::size_t>(n - 1 - i)] = 2.0 / (pp * pp);
    }
    return rule;
}

bool cholesky(std::span<const double> matrix, std::size_t n, std::span<double> lower) {
    std::fill(lower.begin(), lower.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = matrix[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= lower[i * n + k] * lower[j * n + k];
            if (i == j) {
                if (!(s > 0.0)) return false;
                lower[i * n + i] = std::sqrt(s);
            } else {
                lower[i * n + j] = s / lower[j * n + j];
            }
        }
    }
    return true;
}

}  // namespace nmaout::stats
