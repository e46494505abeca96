#include "nmaout/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "nmaout/errors.hpp"
#include "nmaout/parallel.hpp"
#include "nmaout/rng.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

void SamplerConfig::validate() const {
    if (iterations == 0) throw ValidationError("iterations must be positive");
    if (burn_in >= iterations) throw ValidationError("burn-in must be smaller than the iteration count");
    if (chains == 0) throw ValidationError("at least one chain is required");
    if (thin == 0) throw ValidationError("thin must be positive");
    if (adapt_window == 0) throw ValidationError("adaptation window must be positive");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw ValidationError("target acceptance must lie in (0,1)");
    if (!(temperature >= 0.0 && temperature <= 1.0)) throw ValidationError("temperature must lie in [0,1]");
    if (draws_per_chain() == 0) throw ValidationError("no draws left after burn-in and thinning");
}

// ---- layout ----------------------------------------------------------------

StateLayout StateLayout::build(const NetworkDataset& ds, const ModelSpec& spec) {
    StateLayout l;
    l.num_studies = ds.num_studies();
    l.num_theta = static_cast<std::size_t>(ds.num_treatments() - 1);
    std::size_t at = l.num_studies + l.num_theta;
    for (const auto& s : ds.studies()) {
        l.delta_offset.push_back(at);
        l.delta_size.push_back(s.num_arms() - 1);
        at += s.num_arms() - 1;
    }
    l.tau2_index = at++;
    if (const auto* ms = spec.shift()) {
        l.has_eta = true;
        l.eta_offset = at;
        l.eta_size = ds.study(ms->study).num_arms() - 1;
        at += l.eta_size;
    }
    if (const auto* dw = spec.downweighting()) {
        l.has_weights = true;
        l.weights_offset = at;
        l.weights_size = dw->studies.size();
        at += l.weights_size;
    }
    l.size = at;
    return l;
}

std::vector<std::string> StateLayout::names(const NetworkDataset& ds, const ModelSpec& spec) const {
    std::vector<std::string> n(size);
    for (std::size_t i = 0; i < num_studies; ++i) n[i] = "mu[" + ds.study(i).id() + "]";
    for (std::size_t k = 0; k < num_theta; ++k) n[num_studies + k] = "theta[" + std::to_string(k + 2) + "]";
    for (std::size_t i = 0; i < num_studies; ++i) {
        const auto& s = ds.study(i);
        std::size_t j = 0;
        for (std::size_t a = 0; a < s.num_arms(); ++a) {
            if (a == s.baseline_arm()) continue;
            n[delta_offset[i] + j++] = "delta[" + s.id() + "," + std::to_string(s.arms()[a].treatment) + "]";
        }
    }
    n[tau2_index] = "tau2";
    if (has_eta) {
        const auto& s = ds.study(spec.shift()->study);
        std::size_t j = 0;
        for (std::size_t a = 0; a < s.num_arms(); ++a) {
            if (a == s.baseline_arm()) continue;
            n[eta_offset + j++] = "eta[" + std::to_string(s.arms()[a].treatment) + "]";
        }
    }
    if (has_weights) {
        const auto& dw = *spec.downweighting();
        for (std::size_t j = 0; j < weights_size; ++j) n[weights_offset + j] = "w[" + ds.study(dw.studies[j]).id() + "]";
    }
    return n;
}

void StateLayout::pack(const ParameterState& s, std::span<double> out) const {
    std::copy(s.mu.begin(), s.mu.end(), out.begin());
    std::copy(s.theta.begin(), s.theta.end(), out.begin() + static_cast<std::ptrdiff_t>(num_studies));
    for (std::size_t i = 0; i < num_studies; ++i) {
        std::copy(s.delta[i].begin(), s.delta[i].end(), out.begin() + static_cast<std::ptrdiff_t>(delta_offset[i]));
    }
    out[tau2_index] = s.tau2;
    if (has_eta) std::copy(s.eta->begin(), s.eta->end(), out.begin() + static_cast<std::ptrdiff_t>(eta_offset));
    if (has_weights) {
        std::copy(s.weights->begin(), s.weights->end(), out.begin() + static_cast<std::ptrdiff_t>(weights_offset));
    }
}

ParameterState StateLayout::unpack(std::span<const double> row) const {
    ParameterState s;
    s.mu.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(num_studies));
    s.theta.assign(row.begin() + static_cast<std::ptrdiff_t>(num_studies),
                   row.begin() + static_cast<std::ptrdiff_t>(num_studies + num_theta));
    s.delta.resize(num_studies);
    for (std::size_t i = 0; i < num_studies; ++i) {
        const auto b = row.begin() + static_cast<std::ptrdiff_t>(delta_offset[i]);
        s.delta[i].assign(b, b + static_cast<std::ptrdiff_t>(delta_size[i]));
    }
    s.tau2 = row[tau2_index];
    if (has_eta) {
        const auto b = row.begin() + static_cast<std::ptrdiff_t>(eta_offset);
        s.eta = std::vector<double>(b, b + static_cast<std::ptrdiff_t>(eta_size));
    }
    if (has_weights) {
        const auto b = row.begin() + static_cast<std::ptrdiff_t>(weights_offset);
        s.weights = std::vector<double>(b, b + static_cast<std::ptrdiff_t>(weights_size));
    }
    return s;
}

// ---- samples ---------------------------------------------------------------

PosteriorSamples::PosteriorSamples(std::vector<std::string> names, std::vector<std::vector<double>> draws,
                                   std::vector<std::vector<double>> loglik, std::size_t draws_per_chain)
    : names_(std::move(names)), draws_(std::move(draws)), loglik_(std::move(loglik)), per_chain_(draws_per_chain) {}

std::size_t PosteriorSamples::param_index(std::string_view name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

std::span<const double> PosteriorSamples::row(std::size_t chain, std::size_t s) const {
    return std::span<const double>(draws_.at(chain)).subspan(s * names_.size(), names_.size());
}

std::vector<double> PosteriorSamples::chain_series(std::size_t chain, std::size_t param) const {
    std::vector<double> out(per_chain_);
    for (std::size_t s = 0; s < per_chain_; ++s) out[s] = value(chain, s, param);
    return out;
}

std::vector<std::vector<double>> PosteriorSamples::series(std::size_t param) const {
    std::vector<std::vector<double>> out;
    for (std::size_t c = 0; c < num_chains(); ++c) out.push_back(chain_series(c, param));
    return out;
}

std::vector<double> PosteriorSamples::pooled(std::size_t param) const {
    std::vector<double> out;
    out.reserve(total_draws());
    for (std::size_t c = 0; c < num_chains(); ++c) {
        for (std::size_t s = 0; s < per_chain_; ++s) out.push_back(value(c, s, param));
    }
    return out;
}

std::vector<double> PosteriorSamples::pooled_log_likelihood() const {
    std::vector<double> out;
    out.reserve(total_draws());
    for (const auto& c : loglik_) out.insert(out.end(), c.begin(), c.end());
    return out;
}

ParameterState PosteriorSamples::state(std::size_t chain, std::size_t s) const {
    if (!layout_) throw ValidationError("samples carry no parameter layout");
    return layout_->unpack(row(chain, s));
}

// ---- engine ----------------------------------------------------------------

namespace {

struct ChainOutput {
    std::vector<double> draws;
    std::vector<double> loglik;
    std::vector<double> accept_rate;  // per group, post burn-in
    std::vector<double> steps;
    std::vector<std::vector<double>> step_trace;
};

ChainOutput run_one_chain(MoveModel& model, const SamplerConfig& cfg, std::size_t chain) {
    const std::size_t moves = model.num_moves();
    const auto groups = model.group_names();
    const std::size_t params = model.parameter_names().size();
    if (!std::isfinite(model.log_target())) {
        throw SamplerError("non-finite log posterior at the initial state (chain " + std::to_string(chain + 1) + ")");
    }

    Rng rng = make_stream(cfg.seed, {tag(StreamTag::chain), chain});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<double> log_step(moves);
    for (std::size_t m = 0; m < moves; ++m) log_step[m] = std::log(model.initial_step(m));
    std::vector<std::size_t> window_accepts(moves, 0);
    std::vector<std::size_t> burn_group_accepts(groups.size(), 0);
    std::vector<std::size_t> post_group_accepts(groups.size(), 0);
    std::vector<std::size_t> group_size(groups.size(), 0);
    for (std::size_t m = 0; m < moves; ++m) ++group_size[model.move_group(m)];

    ChainOutput out;
    out.draws.reserve(cfg.draws_per_chain() * params);
    out.loglik.reserve(cfg.draws_per_chain());
    std::vector<double> row(params);
    std::size_t batch = 0;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const bool burning = it < cfg.burn_in;
        for (std::size_t m = 0; m < moves; ++m) {
            const double inc = std::exp(log_step[m]) * normal(rng);
            const double log_alpha = model.propose(m, inc);
            const bool ok = log_alpha >= 0.0 || (std::isfinite(log_alpha) && std::log(unif(rng)) < log_alpha);
            if (ok) {
                model.accept();
                ++window_accepts[m];
                ++(burning ? burn_group_accepts : post_group_accepts)[model.move_group(m)];
            } else {
                model.reject();
            }
        }
        if ((it + 1) % cfg.adapt_window == 0) {
            if (burning) {
                ++batch;
                const double gain = std::min(1.0, 3.0 / std::sqrt(static_cast<double>(batch)));
                for (std::size_t m = 0; m < moves; ++m) {
                    const double rate = static_cast<double>(window_accepts[m]) / static_cast<double>(cfg.adapt_window);
                    log_step[m] = std::clamp(log_step[m] + gain * (rate - cfg.target_accept), -25.0, 6.0);
                }
            }
            std::fill(window_accepts.begin(), window_accepts.end(), 0);
            if (cfg.trace_steps) {
                std::vector<double> st(moves);
                for (std::size_t m = 0; m < moves; ++m) st[m] = std::exp(log_step[m]);
                out.step_trace.push_back(std::move(st));
            }
        }
        if (it + 1 == cfg.burn_in) {
            std::fill(window_accepts.begin(), window_accepts.end(), 0);
            for (std::size_t g = 0; g < groups.size(); ++g) {
                if (group_size[g] > 0 && burn_group_accepts[g] == 0) {
                    throw SamplerError("no proposal accepted in block '" + groups[g] + "' during burn-in (chain " +
                                       std::to_string(chain + 1) + ")");
                }
            }
        }
        if (!burning && (it - cfg.burn_in + 1) % cfg.thin == 0) {
            model.record(row);
            out.draws.insert(out.draws.end(), row.begin(), row.end());
            out.loglik.push_back(model.log_likelihood());
        }
    }

    const double post_iters = static_cast<double>(cfg.iterations - cfg.burn_in);
    out.accept_rate.resize(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        out.accept_rate[g] = group_size[g] == 0 ? 0.0
                                                : static_cast<double>(post_group_accepts[g]) /
                                                      (post_iters * static_cast<double>(group_size[g]));
    }
    out.steps.resize(moves);
    for (std::size_t m = 0; m < moves; ++m) out.steps[m] = std::exp(log_step[m]);
    return out;
}

}  // namespace

PosteriorSamples run_chains(const MoveModelFactory& factory, const SamplerConfig& cfg) {
    cfg.validate();
    std::vector<ChainOutput> outputs(cfg.chains);
    std::vector<std::string> names;
    std::vector<std::string> groups;
    {
        auto probe = factory(0);
        names = probe->parameter_names();
        groups = probe->group_names();
    }
    parallel_for(cfg.chains, cfg.threads, [&](std::size_t c) {
        auto model = factory(c);
        outputs[c] = run_one_chain(*model, cfg, c);
    });

    std::vector<std::vector<double>> draws;
    std::vector<std::vector<double>> loglik;
    for (auto& o : outputs) {
        draws.push_back(std::move(o.draws));
        loglik.push_back(std::move(o.loglik));
    }
    PosteriorSamples out(std::move(names), std::move(draws), std::move(loglik), cfg.draws_per_chain());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        PosteriorSamples::GroupAcceptance ga{groups[g], {}};
        for (const auto& o : outputs) ga.per_chain.push_back(o.accept_rate[g]);
        out.accept_rates.push_back(std::move(ga));
    }
    for (auto& o : outputs) {
        out.step_sizes.push_back(std::move(o.steps));
        out.step_trace.push_back(std::move(o.step_trace));
    }
    return out;
}

// ---- diagnostics -----------------------------------------------------------

double rhat(std::span<const std::vector<double>> chains) {
    if (chains.size() < 2) throw ValidationError("R-hat needs at least two chains");
    std::size_t n = chains[0].size();
    for (const auto& c : chains) n = std::min(n, c.size());
    if (n < 4) throw ValidationError("R-hat needs at least four draws per chain");
    const std::size_t half = n / 2;
    std::vector<double> means;
    std::vector<double> vars;
    for (const auto& c : chains) {
        for (int part = 0; part < 2; ++part) {
            const std::span<const double> seg(c.data() + (part == 0 ? 0 : n - half), half);
            means.push_back(stats::mean(seg));
            vars.push_back(stats::variance(seg));
        }
    }
    const double w = stats::mean(vars);
    const double b = static_cast<double>(half) * stats::variance(means);
    if (!(w > 0.0) && !(b > 0.0)) throw ValidationError("R-hat undefined for a constant series");
    if (!(w > 0.0)) return INFINITY;
    const double nd = static_cast<double>(half);
    const double var_plus = (nd - 1.0) / nd * w + b / nd;
    return std::sqrt(var_plus / w);
}

double rhat(const PosteriorSamples& samples, std::size_t param) {
    const auto s = samples.series(param);
    return rhat(std::span<const std::vector<double>>(s));
}

double rhat(const PosteriorSamples& samples, std::string_view param) {
    return rhat(samples, samples.param_index(param));
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
    if (chains.empty()) throw ValidationError("ESS needs at least one chain");
    std::size_t n = chains[0].size();
    for (const auto& c : chains) n = std::min(n, c.size());
    const std::size_t m = chains.size();
    if (n * m < 100) throw ValidationError("ESS needs at least 100 draws");

    std::vector<double> means(m);
    std::vector<double> vars(m);
    for (std::size_t c = 0; c < m; ++c) {
        const std::span<const double> seg(chains[c].data(), n);
        means[c] = stats::mean(seg);
        vars[c] = stats::variance(seg);
    }
    const double w = stats::mean(vars);
    const double nd = static_cast<double>(n);
    const double b_over_n = m > 1 ? stats::variance(means) : 0.0;
    const double var_plus = (nd - 1.0) / nd * w + b_over_n;
    if (!(var_plus > 0.0)) throw ValidationError("ESS undefined for a constant series");

    // Mean within-chain autocovariance at lag t (biased, divisor n).
    auto autocov = [&](std::size_t t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const auto& x = chains[c];
            double s = 0.0;
            for (std::size_t i = 0; i + t < n; ++i) s += (x[i] - means[c]) * (x[i + t] - means[c]);
            acc += s / nd;
        }
        return acc / static_cast<double>(m);
    };
    const double gamma0 = autocov(0);
    auto rho = [&](std::size_t t) { return t == 0 ? 1.0 : 1.0 - (gamma0 - autocov(t)) / var_plus; };

    double sum_pairs = 0.0;
    double prev_pair = INFINITY;
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = rho(2 * k) + rho(2 * k + 1);
        if (!(pair > 0.0)) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        sum_pairs += pair;
    }
    const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(static_cast<double>(n * m)));
    return std::min(static_cast<double>(n * m) / tau, static_cast<double>(n * m));
}

double effective_sample_size(const PosteriorSamples& samples, std::size_t param) {
    const auto s = samples.series(param);
    return effective_sample_size(std::span<const std::vector<double>>(s));
}

double effective_sample_size(const PosteriorSamples& samples, std::string_view param) {
    return effective_sample_size(samples, samples.param_index(param));
}

RhatSummary max_rhat(const PosteriorSamples& samples) {
    RhatSummary out;
    for (std::size_t p = 0; p < samples.num_params(); ++p) {
        double r = 1.0;
        try {
            r = rhat(samples, p);
        } catch (const ValidationError&) {
            continue;
        }
        if (r > out.max_rhat || !std::isfinite(r)) {
            out.max_rhat = r;
            out.worst_param = std::string(samples.names()[p]);
        }
    }
    return out;
}

void write_draws_csv(const PosteriorSamples& samples, std::ostream& out) {
    out << "chain,iter,param,value\n";
    char buf[64];
    for (std::size_t c = 0; c < samples.num_chains(); ++c) {
        for (std::size_t s = 0; s < samples.draws_per_chain(); ++s) {
            for (std::size_t p = 0; p < samples.num_params(); ++p) {
                std::snprintf(buf, sizeof buf, "%.17g", samples.value(c, s, p));
                out << c + 1 << ',' << s + 1 << ',' << samples.names()[p] << ',' << buf << '\n';
            }
        }
    }
}

}  // namespace nmaout
