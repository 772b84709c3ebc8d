#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridfuse/estimator/assemble.hpp"
#include "gridfuse/estimator/solver.hpp"

namespace gridfuse::est {

/// Estimated physical state extracted from a solved problem.
struct SystemEstimate {
    Estimates raw;
    std::vector<Complex> voltages;  ///< per bus index; empty without a grid
    std::vector<PvState> pv;
    std::vector<BatteryState> battery;
    std::map<std::string, double> params;
};

SystemEstimate extract(const AssembledProblem& assembled, const Estimates& raw, const DerFleet& fleet);

/// CktSE on the bus RTUs and DER meters.
SystemEstimate estimate_standalone_grid(const GridCase& grid, const MeasurementSet& meas,
                                        const SolveOptions& opts = {});

/// PV-SE for one PV.
SystemEstimate estimate_standalone_pv(const PvSystem& pv, const PvReading& reading,
                                      const std::vector<std::string>& unknown_params = {},
                                      const SolveOptions& opts = {});

/// Bt-SE for one battery, chained on the previous step when given.
SystemEstimate estimate_standalone_battery(const BatterySystem& bt, const BatteryReading& reading,
                                           const std::optional<BatteryHistory>& previous,
                                           const std::vector<std::string>& unknown_params = {},
                                           const SolveOptions& opts = {});

/// Combined estimator. Efficiencies start from measured power and are refreshed
/// once from the converged estimate, followed by a warm re-solve.
SystemEstimate estimate_combined(const GridCase& grid, const DerFleet& fleet, const MeasurementSet& meas,
                                 const std::vector<std::string>& unknown_params,
                                 const std::vector<std::optional<BatteryHistory>>& previous,
                                 const std::vector<Dispatch>& dispatch, const SolveOptions& opts = {});

/// Efficiencies implied by a solution of a combined problem.
std::vector<double> refreshed_efficiencies(const AssembledProblem& assembled, std::span<const double> x,
                                           const GridCase& grid, const DerFleet& fleet);

}  // namespace gridfuse::est
