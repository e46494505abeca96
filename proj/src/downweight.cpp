#include "nmaout/downweight.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "nmaout/errors.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

namespace {

double parse_positive(std::string_view s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !(v > 0.0)) {
        throw ValidationError("invalid beta hyperparameter '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

BetaPrior parse_beta_prior(std::string_view text) {
    if (text == "moderate") return {3.0, 3.0};
    if (text == "severe") return {2.0, 5.0};
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw ValidationError("unknown down-weighting level '" + std::string(text) + "' (use moderate, severe or a:b)");
    }
    return {parse_positive(text.substr(0, colon)), parse_positive(text.substr(colon + 1))};
}

void DownweightPlan::validate(const NetworkDataset& ds) const {
    if (entries.empty()) throw ValidationError("down-weighting plan is empty");
    for (const auto& [id, prior] : entries) {
        ds.study_index(id);
        if (!(prior.a > 0.0 && prior.b > 0.0)) throw ValidationError("beta hyperparameters must be positive");
    }
}

ModelSpec DownweightPlan::model_spec(const NetworkDataset& ds, const PriorConfig& priors) const {
    validate(ds);
    std::vector<std::size_t> idx;
    std::vector<BetaPrior> pri;
    for (const auto& [id, prior] : entries) {
        idx.push_back(ds.study_index(id));
        pri.push_back(prior);
    }
    return ModelSpec::downweighted(std::move(idx), std::move(pri), priors);
}

DownweightPlan parse_plan(std::span<const std::string> items, BetaPrior fallback) {
    DownweightPlan plan;
    for (const auto& item : items) {
        std::string_view s = item;
        std::string_view id = s;
        BetaPrior prior = fallback;
        if (const auto eq = s.find('='); eq != std::string_view::npos) {
            id = s.substr(0, eq);
            prior = parse_beta_prior(s.substr(eq + 1));
        }
        if (id.starts_with("study")) id.remove_prefix(5);
        if (id.empty()) throw ValidationError("empty study id in plan entry '" + item + "'");
        plan.entries.emplace_back(std::string(id), prior);
    }
    return plan;
}

const ContrastSummary& ComparisonSummary::contrast(TreatmentId h, TreatmentId k) const {
    for (const auto& c : contrasts) {
        if (c.h == h && c.k == k) return c;
    }
    throw ValidationError("no summary for contrast " + std::to_string(k) + " vs " + std::to_string(h));
}

namespace {

IntervalSummary interval(const std::vector<double>& v) {
    return {stats::median(v), stats::quantile(v, 0.025), stats::quantile(v, 0.975)};
}

}  // namespace

ComparisonSummary summarize(const NetworkDataset& ds, const PosteriorSamples& samples, std::string analysis) {
    const auto& layout = samples.layout();
    if (!layout) throw ValidationError("samples carry no parameter layout");
    ComparisonSummary out;
    out.analysis = std::move(analysis);
    const int K = ds.num_treatments();
    std::vector<std::vector<double>> theta(static_cast<std::size_t>(K + 1));
    for (int k = 2; k <= K; ++k) {
        theta[static_cast<std::size_t>(k)] = samples.pooled(layout->num_studies + static_cast<std::size_t>(k - 2));
    }
    const std::size_t S = samples.total_draws();
    for (int h = 1; h <= K; ++h) {
        for (int k = 1; k <= K; ++k) {
            if (h == k) continue;
            std::vector<double> lor(S);
            for (std::size_t s = 0; s < S; ++s) {
                const double tk = k == 1 ? 0.0 : theta[static_cast<std::size_t>(k)][s];
                const double th = h == 1 ? 0.0 : theta[static_cast<std::size_t>(h)][s];
                lor[s] = tk - th;
            }
            const auto iv = interval(lor);
            ContrastSummary c;
            c.h = h;
            c.k = k;
            c.label = ds.label(k) + " vs " + ds.label(h);
            c.log_or_median = iv.median;
            c.odds_ratio = {std::exp(iv.median), std::exp(iv.ci_low), std::exp(iv.ci_high)};
            out.contrasts.push_back(std::move(c));
        }
    }
    out.tau2 = interval(samples.pooled(layout->tau2_index));
    if (layout->has_weights) {
        for (std::size_t j = 0; j < layout->weights_size; ++j) {
            const std::size_t p = layout->weights_offset + j;
            out.weights.emplace_back(std::string(samples.names()[p]), interval(samples.pooled(p)));
        }
    }
    return out;
}

FitResult standard_fit(const NetworkDataset& ds, const SamplerConfig& cfg, const PriorConfig& priors) {
    auto samples = sample(ds, ModelSpec::standard(priors), cfg);
    auto summary = summarize(ds, samples, "full");
    return {std::move(samples), std::move(summary)};
}

FitResult downweighted_fit(const NetworkDataset& ds, const DownweightPlan& plan, const SamplerConfig& cfg,
                           const PriorConfig& priors) {
    auto samples = sample(ds, plan.model_spec(ds, priors), cfg);
    auto summary = summarize(ds, samples, "downweighted");
    return {std::move(samples), std::move(summary)};
}

FitResult exclusion_fit(const NetworkDataset& ds, std::span<const std::string> excluded, const SamplerConfig& cfg,
                        const PriorConfig& priors) {
    std::vector<std::size_t> idx;
    for (const auto& id : excluded) idx.push_back(ds.study_index(id));
    const auto reduced = ds.without(idx);
    auto samples = sample(reduced, ModelSpec::standard(priors), cfg);
    auto summary = summarize(reduced, samples, "excluded");
    return {std::move(samples), std::move(summary)};
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

nlohmann::ordered_json interval_json(const IntervalSummary& iv) {
    return {{"median", iv.median}, {"ci_low", iv.ci_low}, {"ci_high", iv.ci_high}};
}

}  // namespace

std::string comparisons_to_csv(std::span<const ComparisonSummary> summaries) {
    std::string out = "contrast,analysis,or_median,ci_low,ci_high\n";
    auto row = [&](const std::string& name, const std::string& analysis, const IntervalSummary& iv) {
        out += csv_field(name) + ',' + analysis + ',' + num(iv.median) + ',' + num(iv.ci_low) + ',' + num(iv.ci_high) +
               '\n';
    };
    for (const auto& s : summaries) {
        for (const auto& c : s.contrasts) {
            if (c.h < c.k) row(c.label, s.analysis, c.odds_ratio);
        }
        row("tau2", s.analysis, s.tau2);
        for (const auto& [name, iv] : s.weights) row(name, s.analysis, iv);
    }
    return out;
}

std::string comparisons_to_json(std::span<const ComparisonSummary> summaries) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : summaries) {
        nlohmann::ordered_json j;
        j["analysis"] = s.analysis;
        auto& cs = j["contrasts"] = nlohmann::ordered_json::array();
        for (const auto& c : s.contrasts) {
            if (c.h > c.k) continue;
            nlohmann::ordered_json cj = interval_json(c.odds_ratio);
            cj["contrast"] = c.label;
            cj["treatment"] = c.k;
            cj["comparator"] = c.h;
            cs.push_back(std::move(cj));
        }
        j["tau2"] = interval_json(s.tau2);
        if (!s.weights.empty()) {
            auto& ws = j["weights"] = nlohmann::ordered_json::object();
            for (const auto& [name, iv] : s.weights) ws[name] = interval_json(iv);
        }
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

std::vector<BiasEntry> relative_bias(const ComparisonSummary& estimates, std::span<const double> truth) {
    std::vector<BiasEntry> out;
    const int K = static_cast<int>(truth.size()) + 1;
    auto t1 = [&](int k) { return k == 1 ? 0.0 : truth[static_cast<std::size_t>(k - 2)]; };
    for (int h = 1; h <= K; ++h) {
        for (int k = h + 1; k <= K; ++k) {
            const double t = t1(k) - t1(h);
            const double est = estimates.contrast(h, k).log_or_median;
            BiasEntry e{h, k, 0.0, false};
            if (t == 0.0) {
                e.value = est - t;
                e.absolute = true;
            } else {
                e.value = (est - t) / t;
            }
            out.push_back(e);
        }
    }
    return out;
}

}  // namespace nmaout
