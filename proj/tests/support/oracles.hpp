#pragma once

// Independent reference computations and toy targets shared by the unit and
// acceptance tests. Nothing here calls into the library's numerics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "nmaout/data.hpp"
#include "nmaout/mcmc.hpp"
#include "nmaout/model.hpp"

namespace oracle {

// Composite Simpson on [lo, hi] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n = 20000) {
    if (n % 2) ++n;
    const double h = (hi - lo) / n;
    double s = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Binomial log-pmf straight from the definition.
inline double binom_logpmf(int r, int n, double p) {
    double v = std::lgamma(n + 1.0) - std::lgamma(r + 1.0) - std::lgamma(n - r + 1.0);
    if (r > 0) v += r * std::log(p);
    if (n > r) v += (n - r) * std::log1p(-p);
    return v;
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x) without overflow or loss far out in either tail.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binomial log-pmf on the logit scale; stays finite where expit saturates.
inline double binom_logpmf_logit(int r, int n, double x) {
    return std::lgamma(n + 1.0) - std::lgamma(r + 1.0) - std::lgamma(n - r + 1.0) - r * softplus(-x) -
           (n - r) * softplus(x);
}

// Arm-by-arm log-likelihood of the random-effects model (with the mean shift
// and power weights when the spec has them), written out longhand.
inline double log_likelihood(const nmaout::NetworkDataset& ds, const nmaout::ParameterState& s,
                             const nmaout::ModelSpec& spec) {
    double total = 0.0;
    for (std::size_t i = 0; i < ds.num_studies(); ++i) {
        const auto& st = ds.study(i);
        const int b = st.baseline();
        double w = 1.0;
        if (const auto* dw = spec.downweighting()) {
            for (std::size_t j = 0; j < dw->studies.size(); ++j) {
                if (dw->studies[j] == i) w = (*s.weights)[j];
            }
        }
        double study = 0.0;
        int slot = 0;
        for (const auto& arm : st.arms()) {
            double lin = s.mu[i];
            if (arm.treatment != b) {
                const double tk = arm.treatment == 1 ? 0.0 : s.theta[static_cast<std::size_t>(arm.treatment - 2)];
                const double tb = b == 1 ? 0.0 : s.theta[static_cast<std::size_t>(b - 2)];
                lin += tk - tb + s.delta[i][static_cast<std::size_t>(slot)];
                if (const auto* ms = spec.shift(); ms && ms->study == i) {
                    lin += (*s.eta)[static_cast<std::size_t>(slot)];
                }
                ++slot;
            }
            study += binom_logpmf(arm.events, arm.total, expit(lin));
        }
        total += w * study;
    }
    return total;
}

// Random connected network: a spanning chain through all K treatments plus
// random extra studies, some of them three-arm.
inline nmaout::NetworkDataset random_network(std::mt19937_64& rng, int K, int extra) {
    std::uniform_int_distribution<int> size(10, 300);
    std::vector<nmaout::Study> studies;
    auto make = [&](std::vector<int> ts) {
        std::vector<nmaout::Arm> arms;
        for (int t : ts) {
            const int n = size(rng);
            arms.push_back({t, std::uniform_int_distribution<int>(0, n)(rng), n});
        }
        studies.emplace_back("s" + std::to_string(studies.size() + 1), std::move(arms));
    };
    for (int k = 1; k < K; ++k) make({k, k + 1});
    std::uniform_int_distribution<int> tr(1, K);
    for (int e = 0; e < extra; ++e) {
        std::vector<int> ts;
        const int m = std::bernoulli_distribution(0.3)(rng) && K >= 3 ? 3 : 2;
        while (static_cast<int>(ts.size()) < m) {
            const int t = tr(rng);
            if (std::find(ts.begin(), ts.end(), t) == ts.end()) ts.push_back(t);
        }
        std::shuffle(ts.begin(), ts.end(), rng);
        make(ts);
    }
    return nmaout::NetworkDataset(std::move(studies), K);
}

inline nmaout::ParameterState random_state(std::mt19937_64& rng, const nmaout::NetworkDataset& ds,
                                           const nmaout::ModelSpec& spec) {
    auto s = nmaout::ParameterState::zeros(ds, spec);
    std::normal_distribution<double> z(0.0, 1.0);
    for (auto& m : s.mu) m = 1.5 * z(rng);
    for (auto& t : s.theta) t = z(rng);
    for (auto& d : s.delta) {
        for (auto& v : d) v = 0.5 * z(rng);
    }
    s.tau2 = std::uniform_real_distribution<double>(0.01, 2.0)(rng);
    if (s.eta) {
        for (auto& v : *s.eta) v = z(rng);
    }
    if (s.weights) {
        for (auto& v : *s.weights) v = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    }
    return s;
}

// One-parameter target on x = logit(p): Binomial(r | n, expit(x)) with either
// a N(0, sd^2) prior on x or a uniform prior on p (logistic density on x).
// The likelihood carries its binomial coefficient so marginals are exact.
class BinomialToy : public nmaout::MoveModel {
public:
    enum class Prior { normal, uniform_p };

    BinomialToy(int r, int n, Prior prior, double sd, double temperature)
        : r_(r), n_(n), prior_(prior), sd_(sd), t_(temperature), x_(0.0) {}

    std::size_t num_moves() const override { return 1; }
    std::size_t move_group(std::size_t) const override { return 0; }
    std::vector<std::string> group_names() const override { return {"x"}; }
    double initial_step(std::size_t) const override { return 1.0; }

    double propose(std::size_t, double inc) override {
        old_ = x_;
        const double before = log_target();
        x_ += inc;
        return log_target() - before;
    }
    void accept() override {}
    void reject() override { x_ = old_; }

    double log_prior() const {
        if (prior_ == Prior::normal) return -0.5 * std::log(2 * M_PI * sd_ * sd_) - 0.5 * x_ * x_ / (sd_ * sd_);
        return -softplus(-x_) - softplus(x_);
    }
    double log_likelihood() const override { return binom_logpmf_logit(r_, n_, x_); }
    double log_target() const override { return t_ == 0.0 ? log_prior() : log_prior() + t_ * log_likelihood(); }
    std::vector<std::string> parameter_names() const override { return {"x"}; }
    void record(std::span<double> out) const override { out[0] = x_; }

private:
    int r_, n_;
    Prior prior_;
    double sd_, t_;
    double x_, old_ = 0.0;
};

// Two-sample-free KS statistic of draws against a continuous CDF.
inline double ks_statistic(std::vector<double> draws, const std::function<double(double)>& cdf) {
    std::sort(draws.begin(), draws.end());
    const double n = static_cast<double>(draws.size());
    double d = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const double f = cdf(draws[i]);
        d = std::max({d, f - i / n, (i + 1) / n - f});
    }
    return d;
}

inline double normal_cdf(double x, double sd) { return 0.5 * std::erfc(-x / (sd * std::sqrt(2.0))); }

}  // namespace oracle
