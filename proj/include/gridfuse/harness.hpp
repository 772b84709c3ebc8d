#pragma once

// Monte-Carlo experiment runner: ground truth once per scenario, then per
// instance measurement synthesis, stand-alone and combined estimation, and
// scoring. Reports are written as estimates.csv, metrics.json, manifest.json,
// plus timing.csv and (time series only) soc_series.csv.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridfuse/estimator/estimate.hpp"
#include "gridfuse/scenario.hpp"

namespace gridfuse {

/// One scored quantity. Family "solve" rows carry the iteration count of one
/// solve (component names the solve) and its convergence flag.
struct EstimateRecord {
    int instance = 0;
    std::string routine;  ///< "standalone" or "combined"
    std::string family;   ///< v_pv, v_sh, i_pv, p_pv, v_bt, v_oc, v_soc, i_bt, p_bt, grid_vm, param, solve
    std::string component;
    int step = 0;
    double estimate = 0.0;
    double truth = 0.0;
    bool converged = true;
};

struct TimingRecord {
    int instance = 0;
    std::string routine;
    double seconds = 0.0;
};

struct RunReport {
    std::string scenario_id;
    std::uint64_t base_seed = 1;
    int n_instances = 0;
    std::string config_json;  ///< canonical configuration
    std::vector<EstimateRecord> records;  ///< ordered by instance, routine, step
    std::vector<TimingRecord> timing;
};

struct RunOptions {
    std::optional<int> instances;
    std::optional<std::uint64_t> seed;
    int threads = 0;  ///< 0 picks the hardware concurrency; GRIDFUSE_THREADS overrides
    est::SolveOptions solve;
};

/// Thread count after applying GRIDFUSE_THREADS and the hardware default.
int resolve_threads(int requested);

/// Ground truth per time instant (a single entry for snapshot scenarios).
std::vector<GroundTruth> scenario_truth(const ScenarioConfig& config, const GridCase& grid);

RunReport run_scenario(const ScenarioConfig& config, const RunOptions& opts = {});

/// Metrics JSON recomputed from records alone (the `report` self-consistency path).
std::string metrics_json(const RunReport& report);
std::string manifest_json(const RunReport& report);
std::string estimates_csv(const std::vector<EstimateRecord>& records);
std::vector<EstimateRecord> parse_estimates_csv(const std::string& text);

/// Writes estimates.csv, metrics.json, manifest.json, timing.csv and, when the
/// run has battery steps, soc_series.csv. Throws DataError for unwritable paths.
void write_report(const RunReport& report, const std::filesystem::path& dir);

/// Rebuilds a report (without timing) from a directory written by write_report.
RunReport read_report(const std::filesystem::path& dir);

/// Mean absolute SoC error (percentage points of SoC) per estimation step for a routine.
std::vector<std::pair<int, double>> soc_error_series(const RunReport& report, const std::string& routine);

}  // namespace gridfuse
