#include "nmaout/simgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nmaout/errors.hpp"
#include "nmaout/rng.hpp"
#include "nmaout/stats.hpp"

#ifndef NMAOUT_DATA_DIR
#define NMAOUT_DATA_DIR "data"
#endif

namespace nmaout {

namespace {

constexpr double kTau2Grid[] = {0.0, 0.032, 0.096, 0.287};
constexpr int kMaxRedraws = 100;

std::string_view fixture_name(Geometry g) noexcept {
    switch (g) {
        case Geometry::balanced_100: return "balanced_100";
        case Geometry::unbalanced_well_35: return "well_35";
        case Geometry::unbalanced_fair_27: return "fair_27";
        case Geometry::unbalanced_poor_15: return "poor_15";
    }
    return "?";
}

int parse_int(std::string_view s, std::string_view what) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError("geometry fixture: bad " + std::string(what) + " '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

std::string_view to_string(Geometry g) noexcept {
    switch (g) {
        case Geometry::balanced_100: return "balanced_100";
        case Geometry::unbalanced_well_35: return "unbalanced_well_35";
        case Geometry::unbalanced_fair_27: return "unbalanced_fair_27";
        case Geometry::unbalanced_poor_15: return "unbalanced_poor_15";
    }
    return "?";
}

Geometry parse_geometry(std::string_view s) {
    for (auto g : {Geometry::balanced_100, Geometry::unbalanced_well_35, Geometry::unbalanced_fair_27,
                   Geometry::unbalanced_poor_15}) {
        if (s == to_string(g) || s == fixture_name(g)) return g;
    }
    throw ValidationError("unknown geometry '" + std::string(s) + "'");
}

int GeometrySpec::total_studies() const noexcept {
    int n = 0;
    for (const auto& e : edges) n += e.studies;
    return n;
}

std::filesystem::path data_directory() {
    if (const char* env = std::getenv("NMAOUT_DATA_DIR"); env && *env) return env;
    return NMAOUT_DATA_DIR;
}

GeometrySpec parse_geometry_csv(std::string_view text, Geometry g) {
    GeometrySpec spec;
    spec.geometry = g;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string_view> f;
        std::string_view rest = line;
        for (;;) {
            const auto c = rest.find(',');
            f.push_back(rest.substr(0, c));
            if (c == std::string_view::npos) break;
            rest.remove_prefix(c + 1);
        }
        if (f.size() != 3) throw ValidationError("geometry fixture: expected 3 fields in '" + line + "'");
        GeometryEdge e{parse_int(f[0], "treatment"), parse_int(f[1], "treatment"), parse_int(f[2], "study count")};
        if (e.a < 1 || e.b < 1 || e.a == e.b || e.studies < 1) {
            throw ValidationError("geometry fixture: invalid edge '" + line + "'");
        }
        spec.num_treatments = std::max({spec.num_treatments, e.a, e.b});
        spec.edges.push_back(e);
    }
    if (spec.edges.empty()) throw ValidationError("geometry fixture has no edges");
    return spec;
}

GeometrySpec load_geometry(Geometry g) {
    const auto path = data_directory() / "geometries" / (std::string(fixture_name(g)) + ".csv");
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open geometry fixture " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_geometry_csv(ss.str(), g);
}

void SimScenario::validate() const {
    if (std::find(std::begin(kTau2Grid), std::end(kTau2Grid), tau2) == std::end(kTau2Grid)) {
        throw ValidationError("tau2 must be one of 0, 0.032, 0.096, 0.287");
    }
    if (severity != 2.5 && severity != 3.0) throw ValidationError("severity must be 2.5 or 3");
    if (num_outliers != 0 && num_outliers != 1 && num_outliers != 3) {
        throw ValidationError("num_outliers must be 0, 1 or 3");
    }
    const bool known = (s_range.first == 4.0 && s_range.second == 12.25) ||
                       (s_range.first == 0.25 && s_range.second == 4.0);
    if (!known) throw ValidationError("s_range must be (4, 12.25) or (0.25, 4)");
}

double SimScenario::contamination() const noexcept { return severity * std::sqrt(s_range.second + tau2); }

std::vector<SimScenario> scenario_grid() {
    std::vector<SimScenario> out;
    int id = 1;
    for (auto g : {Geometry::balanced_100, Geometry::unbalanced_well_35, Geometry::unbalanced_fair_27,
                   Geometry::unbalanced_poor_15}) {
        for (int outliers : {1, 3}) {
            for (double t : kTau2Grid) {
                SimScenario s;
                s.id = id++;
                s.geometry = g;
                s.tau2 = t;
                s.num_outliers = outliers;
                out.push_back(s);
            }
        }
    }
    return out;
}

SimScenario grid_scenario(int id) {
    if (id < 1 || id > 32) throw ValidationError("scenario id must be in 1..32");
    return scenario_grid()[static_cast<std::size_t>(id - 1)];
}

GeneratedNetwork generate(const SimScenario& scenario) { return generate(scenario, load_geometry(scenario.geometry)); }

GeneratedNetwork generate(const SimScenario& scenario, const GeometrySpec& geometry) {
    scenario.validate();
    const int K = geometry.num_treatments;
    const int N = geometry.total_studies();
    if (scenario.num_outliers > N) throw ValidationError("more outliers than studies");

    Rng rng = make_stream(scenario.seed, {tag(StreamTag::simulation)});
    std::uniform_real_distribution<double> arm_size(50.0, 200.0);
    std::uniform_real_distribution<double> base_risk(0.4, 0.6);
    std::normal_distribution<double> z(0.0, 1.0);

    std::vector<double> truth(static_cast<std::size_t>(K - 1));
    for (int k = 2; k <= K; ++k) truth[static_cast<std::size_t>(k - 2)] = static_cast<double>(k - 1) / (K - 1);
    auto theta1 = [&](int k) { return k == 1 ? 0.0 : truth[static_cast<std::size_t>(k - 2)]; };

    const double s2 = std::uniform_real_distribution<double>(scenario.s_range.first, scenario.s_range.second)(rng);
    const double C = scenario.contamination();

    std::vector<std::size_t> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> direction(static_cast<std::size_t>(N), 0);
    for (int j = 0; j < scenario.num_outliers; ++j) {
        direction[order[static_cast<std::size_t>(j)]] = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
    }

    const double tau = std::sqrt(scenario.tau2);
    std::vector<Study> studies;
    std::vector<double> drawn;
    studies.reserve(static_cast<std::size_t>(N));
    std::size_t i = 0;
    for (const auto& e : geometry.edges) {
        const int a = std::min(e.a, e.b);
        const int b = std::max(e.a, e.b);
        for (int c = 0; c < e.studies; ++c, ++i) {
            const int na = static_cast<int>(std::lround(arm_size(rng)));
            const int nb = static_cast<int>(std::lround(arm_size(rng)));
            const double pa = base_risk(rng);
            const double mean = theta1(b) - theta1(a) + direction[i] * C;
            double lor = 0.0;
            double pb = 0.0;
            int tries = 0;
            do {
                if (++tries > kMaxRedraws) throw ValidationError("could not draw a valid event probability");
                lor = mean + tau * z(rng);
                pb = stats::inv_logit(stats::logit(pa) + lor);
            } while (!(pb > 0.0 && pb < 1.0));
            const int ra = std::binomial_distribution<int>(na, pa)(rng);
            const int rb = std::binomial_distribution<int>(nb, pb)(rng);
            studies.emplace_back(std::to_string(i + 1), std::vector<Arm>{{a, ra, na}, {b, rb, nb}});
            drawn.push_back(lor);
        }
    }

    GeneratedNetwork out{NetworkDataset(std::move(studies), K), std::move(truth), {}, {}, std::move(drawn), C, s2};
    for (std::size_t s = 0; s < direction.size(); ++s) {
        if (direction[s] == 0) continue;
        out.outlier_ids.push_back(std::to_string(s + 1));
        out.outlier_directions.push_back(direction[s]);
    }
    return out;
}

std::string truth_to_json(const SimScenario& scenario, const GeneratedNetwork& net) {
    nlohmann::ordered_json j;
    j["scenario"] = scenario.id;
    j["geometry"] = to_string(scenario.geometry);
    j["tau2"] = scenario.tau2;
    j["num_outliers"] = scenario.num_outliers;
    j["severity"] = scenario.severity;
    j["s_range"] = {scenario.s_range.first, scenario.s_range.second};
    j["seed"] = scenario.seed;
    j["contamination"] = net.contamination;
    j["s2"] = net.s2;
    j["theta_true"] = net.truth;
    auto& outs = j["outliers"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < net.outlier_ids.size(); ++k) {
        outs.push_back({{"study", net.outlier_ids[k]}, {"direction", net.outlier_directions[k]}});
    }
    j["study_log_or"] = net.study_log_or;
    return j.dump(2) + "\n";
}

}  // namespace nmaout
