#pragma once

// Seeded Monte Carlo experiments over the scenario grid: generate, detect,
// down-weight what was flagged, and aggregate into detection and false-positive tables.
// Every replication is checkpointed as flat CSV so interrupted runs resume.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nmaout/detection.hpp"
#include "nmaout/model.hpp"
#include "nmaout/simgen.hpp"

namespace nmaout {

struct ExperimentConfig {
    std::vector<int> scenarios;  // grid ids 1..32
    std::size_t replications = 50;
    SamplerConfig mcmc = desk_sampler();
    DetectionThresholds thresholds;
    std::filesystem::path output_dir = "bench_out";
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    bool contaminated_runs = true;  // the scenario with its outliers (detection, bias)
    bool null_runs = true;          // same geometry and tau2 without outliers (false positives)
    bool bias = true;               // down-weight flagged studies and score relative bias

    double severity = 3.0;
    std::pair<double, double> s_range{0.25, 4.0};
    BfEstimator estimator = BfEstimator::savage_dickey;
    PriorConfig priors;
    BetaPrior downweight_prior{3.0, 3.0};
    ReplicationMode mode = ReplicationMode::mixed;
    SdoPool sdo_pool = SdoPool::replicate;
    bool resume = true;

    static SamplerConfig desk_sampler();     // 10000 iterations, 2000 burn-in, 2 chains
    static ExperimentConfig paper_scale();  // 1000 replications, 50000 / 10000
    void validate() const;
    std::string fingerprint() const;  // canonical JSON of everything that affects results
};

struct Table1Row {
    int scenario = 0;
    Geometry geometry = Geometry::balanced_100;
    double tau2 = 0.0;
    int num_outliers = 0;
    int outlier_slot = 0;  // 1-based, in generation order
    double mean_bf = 0.0;  // arithmetic mean; +inf if it overflows
    double mean_log_bf = 0.0;
    double mean_p_L = 0.0;
    double mean_p_SDO = 0.0;
    double mean_p_G = 0.0;
    std::size_t reps = 0;
    std::size_t failed = 0;
};

// Proportions are over every study tested in every successful null replication.
struct Table2Row {
    Geometry geometry = Geometry::balanced_100;
    double tau2 = 0.0;
    double fp_bf = 0.0;
    double fp_pL = 0.0;
    double fp_pSDO = 0.0;
    double fp_pG = 0.0;
    double fp_any = 0.0;
    std::size_t studies = 0;
    std::size_t reps = 0;
    std::size_t failed = 0;
};

struct BiasRow {
    int scenario = 0;
    TreatmentId h = 1;
    TreatmentId k = 2;
    bool outlier_touched = false;
    double bias_plain = 0.0;  // relative bias of the Monte Carlo mean estimate
    double bias_downweighted = 0.0;
    std::size_t reps = 0;
};

// Per scenario: replications where mean |relative bias| over the
// outlier-touched contrasts is strictly smaller after down-weighting.
struct BiasImprovement {
    int scenario = 0;
    std::size_t reps = 0;
    std::size_t improved = 0;
    double fraction() const noexcept { return reps ? static_cast<double>(improved) / reps : 0.0; }
};

struct ExperimentResult {
    std::vector<Table1Row> table1;
    std::vector<Table2Row> table2;
    std::vector<BiasRow> bias;
    std::vector<BiasImprovement> bias_improvement;
    std::vector<std::string> failures;  // "<checkpoint>: <message>"
};

std::string table1_to_csv(const std::vector<Table1Row>& rows);
std::string table2_to_csv(const std::vector<Table2Row>& rows);
std::string bias_to_csv(const std::vector<BiasRow>& rows);
std::string bias_improvement_to_csv(const std::vector<BiasImprovement>& rows);

// Progress callback: (finished replications, total replications).
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

// Runs (or resumes) every replication, then aggregates from the checkpoint
// files and writes table1.csv, table2.csv, bias.csv and bias_summary.csv
// into output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Aggregation only, over whatever checkpoints exist.
ExperimentResult aggregate_checkpoints(const ExperimentConfig& cfg);

}  // namespace nmaout
