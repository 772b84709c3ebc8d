#pragma once

// Builds estimation problems from circuits and measurements.
//
// Grid part: one KCL row pair per bus that hosts a measurement circuit or is
// zero-injection. Every bus RTU and every DER point-of-interconnection meter is
// a measurement circuit drawing (G + jB) V + n. The reference bus carries an
// angle pin (V_i = 0) and a magnitude anchor (V_r = |V|_z + n), without which
// the all-RTU problem is homogeneous in V and V = 0 would be optimal.
//
// DER part: PV and battery measurement circuits, the SoC trapezoid step, and
// two coupling rows (real and reactive power balance) that tie a DER's DC
// power to its meter circuit at the point of interconnection.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridfuse/estimator/problem.hpp"
#include "gridfuse/measurements.hpp"

namespace gridfuse::est {

/// State of the previous step, from an earlier estimate or the initial condition.
/// The trapezoid's previous-current term is (v_oc - v_bt)/R_SE for a known
/// resistance; when R_SE is unknown it uses i_bt, so that the wrong nominal
/// resistance never enters through the history.
struct BatteryHistory {
    double v_oc = 0.0;
    double v_bt = 0.0;
    double i_bt = 0.0;
};

struct CircuitLayout {
    std::size_t bus_index = 0;
    std::size_t n_real = 0;
    std::size_t n_imag = 0;
    double g = 0.0;
    double b = 0.0;
};

struct GridLayout {
    std::vector<std::size_t> v_real;  ///< per bus index
    std::vector<std::size_t> v_imag;
    std::vector<CircuitLayout> rtu;   ///< parallel to MeasurementSet::rtu
    std::vector<CircuitLayout> pv_poi;
    std::vector<CircuitLayout> bt_poi;
    std::size_t anchor_noise = 0;
};

struct PvLayout {
    std::size_t v_sh = 0, v_pv = 0, i_pv = 0, n_ph = 0, n_i = 0, n_v = 0;
    std::optional<std::size_t> r_s, r_sh;
    int efficiency_slot = -1;
};

struct BatteryLayout {
    std::size_t v_oc = 0, v_bt = 0, i_bt = 0, n_i = 0, n_v = 0;
    std::optional<std::size_t> r_se;
    int efficiency_slot = -1;
    Dispatch dispatch = Dispatch::discharging;
};

struct ProblemLayout {
    std::optional<GridLayout> grid;
    std::vector<PvLayout> pv;
    std::vector<BatteryLayout> battery;
    std::map<std::string, std::size_t> params;  ///< "<der>.<field>" to variable index
};

struct AssembledProblem {
    EstimationProblem problem;
    ProblemLayout layout;
};

/// Parameters that may be declared unknown: PV r_s and r_sh, battery r_se.
bool is_declared_parameter(const std::string& path, const DerFleet& fleet);

/// CktSE: grid constraints with every bus RTU and DER meter as a measurement circuit.
AssembledProblem assemble_grid(const GridCase& grid, const MeasurementSet& meas);

/// PV-SE for one PV. Unknown parameters naming this PV are promoted to variables.
AssembledProblem assemble_pv(const PvSystem& pv, const PvReading& reading,
                             const std::vector<std::string>& unknown_params = {});

/// Bt-SE for one battery; the SoC trapezoid row is added when `previous` is set.
AssembledProblem assemble_battery(const BatterySystem& bt, const BatteryReading& reading,
                                  const std::optional<BatteryHistory>& previous,
                                  const std::vector<std::string>& unknown_params = {});

/// Combined estimator: grid, every DER circuit, and the coupling rows.
/// `previous` and `dispatch` are parallel to fleet.battery.
AssembledProblem assemble_combined(const GridCase& grid, const DerFleet& fleet, const MeasurementSet& meas,
                                   const std::vector<std::string>& unknown_params,
                                   const std::vector<std::optional<BatteryHistory>>& previous,
                                   const std::vector<Dispatch>& dispatch);

}  // namespace gridfuse::est
