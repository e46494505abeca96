#pragma once

// Synthetic contaminated networks for the simulation study.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nmaout/data.hpp"

namespace nmaout {

enum class Geometry { balanced_100, unbalanced_well_35, unbalanced_fair_27, unbalanced_poor_15 };

std::string_view to_string(Geometry g) noexcept;
// Accepts the enum names and the short fixture names ("fair_27", ...).
Geometry parse_geometry(std::string_view s);

struct GeometryEdge {
    TreatmentId a = 1;
    TreatmentId b = 2;
    int studies = 0;
};

struct GeometrySpec {
    Geometry geometry = Geometry::balanced_100;
    int num_treatments = 0;
    std::vector<GeometryEdge> edges;

    int total_studies() const noexcept;
};

// $NMAOUT_DATA_DIR if set, else the source tree's data/ directory.
std::filesystem::path data_directory();

// Fixture CSV `treatment_a,treatment_b,studies` under data/geometries/.
GeometrySpec load_geometry(Geometry g);
GeometrySpec parse_geometry_csv(std::string_view text, Geometry g);

struct SimScenario {
    int id = 0;  // 1..32 for grid rows, 0 for ad hoc
    Geometry geometry = Geometry::balanced_100;
    double tau2 = 0.0;
    int num_outliers = 1;
    double severity = 3.0;
    std::pair<double, double> s_range{0.25, 4.0};  // (s2_min, s2_max)
    std::uint64_t seed = 1;

    void validate() const;
    // Shift size C = severity * sqrt(s2_max + tau2).
    double contamination() const noexcept;
};

// 4 geometries x {1, 3} outliers x 4 tau2 values, numbered as in the
// published scenario table: tau2 varies fastest, then outlier count.
std::vector<SimScenario> scenario_grid();
SimScenario grid_scenario(int id);

struct GeneratedNetwork {
    NetworkDataset dataset;
    std::vector<double> truth;  // theta_12 .. theta_1K
    std::vector<std::string> outlier_ids;
    std::vector<int> outlier_directions;  // +1 / -1, parallel to outlier_ids
    std::vector<double> study_log_or;     // drawn log-OR per study, dataset order
    double contamination = 0.0;
    double s2 = 0.0;  // per-replication variance draw from s_range
};

// Deterministic in the scenario (including its seed).
GeneratedNetwork generate(const SimScenario& scenario);
GeneratedNetwork generate(const SimScenario& scenario, const GeometrySpec& geometry);

// Sidecar JSON with the scenario, true effects and outlier assignment.
std::string truth_to_json(const SimScenario& scenario, const GeneratedNetwork& net);

}  // namespace nmaout
