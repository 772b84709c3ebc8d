#pragma once

// Ground-truth generation: DC operating points of every DER, the AC power
// flow with DER injections, battery SoC trajectories, and synthesized
// (noisy, optionally biased) measurements.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gridfuse/measurements.hpp"

namespace gridfuse {

/// PV operating input: irradiance (W/m2), cell temperature (C) and the DC
/// terminal voltage held by the tracker.
struct PvOperatingPoint {
    double irradiance = 1000.0;
    double t_cell = 25.0;
    double v_op = 0.0;
};

/// Battery snapshot input: SoC and scheduled DC current (positive discharging).
struct BatterySchedule {
    double v_soc = 0.5;
    double i_bt = 0.0;
};

struct GroundTruth {
    std::vector<Complex> voltages;       ///< per bus index
    std::vector<Complex> bus_injection;  ///< non-DER net injection per bus index (generation minus load)
    std::vector<PvState> pv;
    std::vector<double> pv_ac;           ///< real power injected at the point of interconnection, pu
    std::vector<double> pv_eta;
    std::vector<BatteryState> battery;
    std::vector<double> battery_ac;      ///< injected real power, negative while charging
    std::vector<double> battery_eta;     ///< efficiency of the active converter
    std::vector<Dispatch> dispatch;
    int iterations = 0;
    double max_residual = 0.0;
};

struct PowerFlowOptions {
    double tol = 1e-12;
    int max_iterations = 50;
    int efficiency_iterations = 5;
    double efficiency_tol = 1e-8;
    double verify_tol = 1e-10;
};

/// Solves DC sides, converter efficiencies and the AC power flow; verifies that
/// every device, coupling and bus balance residual is below opts.verify_tol.
GroundTruth solve_combined_powerflow(const GridCase& grid, const DerFleet& fleet,
                                     std::span<const PvOperatingPoint> pv_points,
                                     std::span<const BatterySchedule> schedule, const PowerFlowOptions& opts = {});

/// SoC trajectory of length n_steps + 1 from soc0 under the current profile
/// (n_steps + 1 samples, index 0 is the current at the initial instant). The
/// trapezoid includes self-discharge through r_sd.
std::vector<double> step_soc(const BatterySystem& bt, std::span<const double> i_bt_profile, int n_steps, double dt,
                             double soc0);

struct NoiseModel {
    double rtu_sigma = 0.001;  ///< pu, RTU and meter channels
    double der_sigma = 0.1;    ///< device units, DC channels
    /// Drawn noise is sigma * draw_scale; weights always use sigma. Zero gives exact data.
    double draw_scale = 1.0;
};

/// Pure function of (truth, noise model, seed, stream). The stream separates
/// time steps of one instance.
MeasurementSet synthesize_measurements(const GridCase& grid, const DerFleet& fleet, const GroundTruth& truth,
                                       const NoiseModel& noise, std::uint64_t seed, std::uint64_t stream = 0);

/// Target names: "<der>.v", "<der>.i", "<pv>.ph", "rtu<bus>.p|q|v".
struct BadData {
    std::string target;
    double bias = 0.0;
};

/// Multiplies each target by (1 + bias) and flags it. Throws DataError for unknown targets.
MeasurementSet inject_bad_data(const MeasurementSet& meas, const DerFleet& fleet, std::span<const BadData> spec);

struct ParameterError {
    std::string path;  ///< "<der>.<field>"
    double rel_error = 0.0;
};

struct PerturbedFleet {
    DerFleet fleet;                        ///< what the estimator is told
    std::map<std::string, double> truth;  ///< true values of the perturbed parameters
};

PerturbedFleet perturb_parameters(const DerFleet& fleet, std::span<const ParameterError> errors);

/// Reads a parameter by path; throws DataError for unknown paths.
double parameter_value(const DerFleet& fleet, const std::string& path);

}  // namespace gridfuse
