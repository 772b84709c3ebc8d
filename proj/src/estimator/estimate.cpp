#include "gridfuse/estimator/estimate.hpp"

#include <algorithm>

#include "gridfuse/error.hpp"

namespace gridfuse::est {

namespace {

// DER systems in a layout appear in fleet order, but standalone problems hold
// only one; find the system by the variable name prefix.
const PvSystem& pv_for(const EstimationProblem& p, const PvLayout& l, const DerFleet& fleet) {
    const std::string& name = p.variables()[l.v_pv].name;
    for (const auto& pv : fleet.pv)
        if (name == pv.name + ".v_pv") return pv;
    throw DataError("PV for variable " + name + " not in fleet");
}

const BatterySystem& bt_for(const EstimationProblem& p, const BatteryLayout& l, const DerFleet& fleet) {
    const std::string& name = p.variables()[l.v_bt].name;
    for (const auto& bt : fleet.battery)
        if (name == bt.name + ".v_bt") return bt;
    throw DataError("battery for variable " + name + " not in fleet");
}

double ac_drawn(const CircuitLayout& c, const GridLayout& g, std::span<const double> x) {
    const double vr = x[g.v_real[c.bus_index]], vi = x[g.v_imag[c.bus_index]];
    return c.g * (vr * vr + vi * vi) + vr * x[c.n_real] + vi * x[c.n_imag];
}

}  // namespace

SystemEstimate extract(const AssembledProblem& a, const Estimates& raw, const DerFleet& fleet) {
    SystemEstimate out;
    out.raw = raw;
    const auto& x = raw.x;
    if (a.layout.grid) {
        const auto& g = *a.layout.grid;
        for (std::size_t k = 0; k < g.v_real.size(); ++k) out.voltages.emplace_back(x[g.v_real[k]], x[g.v_imag[k]]);
    }
    for (const auto& l : a.layout.pv) {
        const PvSystem& sys = pv_for(a.problem, l, fleet);
        PvState s;
        s.v_sh = x[l.v_sh];
        s.v_pv = x[l.v_pv];
        s.i_pv = x[l.i_pv];
        s.i_d = diode_current(s.v_sh, sys.i_0, sys.a);
        s.i_ph = s.i_d + s.v_sh / (l.r_sh ? x[*l.r_sh] : sys.r_sh) + s.i_pv;
        s.p_pv = s.v_pv * s.i_pv;
        out.pv.push_back(s);
    }
    for (const auto& l : a.layout.battery) {
        const BatterySystem& sys = bt_for(a.problem, l, fleet);
        BatteryState s;
        s.v_oc = x[l.v_oc];
        s.v_bt = x[l.v_bt];
        s.i_bt = x[l.i_bt];
        s.v_soc = (s.v_oc - sys.ocv_a) / sys.ocv_b;
        s.p_bt = s.v_bt * s.i_bt;
        out.battery.push_back(s);
    }
    for (const auto& [path, j] : a.layout.params) out.params.emplace(path, x[j]);
    return out;
}

SystemEstimate estimate_standalone_grid(const GridCase& grid, const MeasurementSet& meas, const SolveOptions& opts) {
    const AssembledProblem a = assemble_grid(grid, meas);
    const auto x0 = a.problem.initial_point();
    return extract(a, solve(a.problem, x0, opts), DerFleet{});
}

SystemEstimate estimate_standalone_pv(const PvSystem& pv, const PvReading& reading,
                                      const std::vector<std::string>& unknown, const SolveOptions& opts) {
    const AssembledProblem a = assemble_pv(pv, reading, unknown);
    const auto x0 = a.problem.initial_point();
    DerFleet fleet;
    fleet.pv.push_back(pv);
    return extract(a, solve(a.problem, x0, opts), fleet);
}

SystemEstimate estimate_standalone_battery(const BatterySystem& bt, const BatteryReading& reading,
                                           const std::optional<BatteryHistory>& previous,
                                           const std::vector<std::string>& unknown, const SolveOptions& opts) {
    const AssembledProblem a = assemble_battery(bt, reading, previous, unknown);
    const auto x0 = a.problem.initial_point();
    DerFleet fleet;
    fleet.battery.push_back(bt);
    return extract(a, solve(a.problem, x0, opts), fleet);
}

std::vector<double> refreshed_efficiencies(const AssembledProblem& a, std::span<const double> x, const GridCase& grid,
                                           const DerFleet& fleet) {
    std::vector<double> eta = a.problem.efficiencies();
    const double base_w = grid.base_mva() * 1e6;
    for (std::size_t k = 0; k < a.layout.pv.size(); ++k) {
        const auto& l = a.layout.pv[k];
        const PvSystem& sys = fleet.pv[k];
        const double p = std::max(0.0, sys.n_parallel_scale * x[l.v_pv] * x[l.i_pv]);
        eta[static_cast<std::size_t>(l.efficiency_slot)] = inverter_efficiency(p, sys.inverter);
    }
    for (std::size_t k = 0; k < a.layout.battery.size(); ++k) {
        const auto& l = a.layout.battery[k];
        const BatterySystem& sys = fleet.battery[k];
        double value = 0.0;
        if (l.dispatch == Dispatch::discharging) {
            value = inverter_efficiency(std::max(0.0, sys.n_parallel_scale * x[l.v_bt] * x[l.i_bt]), sys.inverter);
        } else {
            const double drawn = ac_drawn(a.layout.grid->bt_poi[k], *a.layout.grid, x);
            value = inverter_efficiency(std::max(0.0, drawn) * base_w, sys.rectifier);
        }
        eta[static_cast<std::size_t>(l.efficiency_slot)] = value;
    }
    return eta;
}

SystemEstimate estimate_combined(const GridCase& grid, const DerFleet& fleet, const MeasurementSet& meas,
                                 const std::vector<std::string>& unknown,
                                 const std::vector<std::optional<BatteryHistory>>& previous,
                                 const std::vector<Dispatch>& dispatch, const SolveOptions& opts) {
    AssembledProblem a = assemble_combined(grid, fleet, meas, unknown, previous, dispatch);
    const auto x0 = a.problem.initial_point();
    Estimates first = solve(a.problem, x0, opts);
    if (!first.converged || a.problem.efficiencies().empty()) return extract(a, first, fleet);

    a.problem = a.problem.with_efficiencies(refreshed_efficiencies(a, first.x, grid, fleet));
    Estimates second = solve(a.problem, first.x, first.lambda, opts);
    second.iterations += first.iterations;
    return extract(a, second, fleet);
}

}  // namespace gridfuse::est
