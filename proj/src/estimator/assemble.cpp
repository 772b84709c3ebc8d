#include "gridfuse/estimator/assemble.hpp"

#include <algorithm>
#include <set>

#include "gridfuse/error.hpp"

namespace gridfuse::est {

namespace {

struct ParamPath {
    std::string der;
    std::string field;
};

ParamPath split_path(const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
        throw DataError("malformed parameter path '" + path + "'");
    return {path.substr(0, dot), path.substr(dot + 1)};
}

bool names_field(const std::vector<std::string>& unknown, const std::string& der, const std::string& field) {
    return std::find(unknown.begin(), unknown.end(), der + "." + field) != unknown.end();
}

class Builder {
public:
    AssembledProblem out;

    std::size_t var(std::string name, VarKind kind, double init, double step_limit = 0.0) {
        return out.problem.add_variable({std::move(name), kind, init, step_limit});
    }

    std::size_t noise(std::string name, double sigma) {
        const std::size_t j = var(std::move(name), VarKind::noise, 0.0);
        out.problem.add_objective(j, 1.0 / (sigma * sigma));
        return j;
    }

    std::size_t param(const std::string& path, double nominal) {
        const std::size_t j = var(path, VarKind::parameter, nominal);
        out.layout.params.emplace(path, j);
        return j;
    }

    void add_grid(const GridCase& grid, const MeasurementSet& meas) {
        const Admittance y = build_admittance(grid);
        GridLayout g;
        const std::size_t nb = grid.size();
        for (std::size_t k = 0; k < nb; ++k) {
            const auto id = std::to_string(grid.buses()[k].id);
            g.v_real.push_back(var("vr" + id, VarKind::voltage_real, 1.0));
            g.v_imag.push_back(var("vi" + id, VarKind::voltage_imag, 0.0));
        }

        std::vector<std::vector<const CircuitLayout*>> at_bus(nb);
        const auto add_circuit = [&](const RtuMeasurement& m, const std::string& tag) {
            if (!grid.has_bus(m.bus)) throw DataError("measurement " + tag + " on unknown bus " + std::to_string(m.bus));
            const FeatureConductance fc = m.conductance();
            CircuitLayout c;
            c.bus_index = grid.index_of(m.bus);
            c.n_real = noise("nr_" + tag, m.sigma);
            c.n_imag = noise("ni_" + tag, m.sigma);
            c.g = fc.g;
            c.b = fc.b;
            return c;
        };

        std::set<BusId> seen;
        for (const auto& m : meas.rtu) {
            if (!grid.is_rtu(m.bus)) throw DataError("RTU measurement on bus " + std::to_string(m.bus) + " not in the RTU set");
            if (!seen.insert(m.bus).second) throw DataError("duplicate RTU measurement on bus " + std::to_string(m.bus));
            g.rtu.push_back(add_circuit(m, "rtu" + std::to_string(m.bus)));
        }
        for (BusId id : grid.rtu_buses())
            if (!seen.contains(id)) throw DataError("missing RTU measurement for bus " + std::to_string(id));
        for (std::size_t k = 0; k < meas.pv_poi.size(); ++k)
            g.pv_poi.push_back(add_circuit(meas.pv_poi[k], "pvpoi" + std::to_string(k)));
        for (std::size_t k = 0; k < meas.bt_poi.size(); ++k)
            g.bt_poi.push_back(add_circuit(meas.bt_poi[k], "btpoi" + std::to_string(k)));

        for (const auto* list : {&g.rtu, &g.pv_poi, &g.bt_poi})
            for (const auto& c : *list) at_bus[c.bus_index].push_back(&c);

        for (std::size_t k = 0; k < nb; ++k) {
            const BusId id = grid.buses()[k].id;
            const bool zi = grid.is_zero_injection(id) && at_bus[k].empty();
            if (at_bus[k].empty() && !grid.is_zero_injection(id)) continue;  // unmeasured, non-zero: no equation

            Row re, im;
            re.name = (zi ? "zi_r" : "kcl_r") + std::to_string(id);
            im.name = (zi ? "zi_i" : "kcl_i") + std::to_string(id);
            re.family = im.family = zi ? RowFamily::zero_injection : RowFamily::grid_kcl;

            const auto row = static_cast<Eigen::Index>(k);
            double diag_g = 0.0, diag_b = 0.0;
            for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(y.y, row); it; ++it) {
                const auto l = static_cast<std::size_t>(it.col());
                const double gl = it.value().real(), bl = it.value().imag();
                if (l == k) {
                    diag_g += gl;
                    diag_b += bl;
                    continue;
                }
                re.linear.push_back({g.v_real[l], gl});
                re.linear.push_back({g.v_imag[l], -bl});
                im.linear.push_back({g.v_imag[l], gl});
                im.linear.push_back({g.v_real[l], bl});
            }
            for (const auto* c : at_bus[k]) {
                diag_g += c->g;
                diag_b += c->b;
                re.linear.push_back({c->n_real, 1.0});
                im.linear.push_back({c->n_imag, 1.0});
            }
            re.linear.push_back({g.v_real[k], diag_g});
            re.linear.push_back({g.v_imag[k], -diag_b});
            im.linear.push_back({g.v_imag[k], diag_g});
            im.linear.push_back({g.v_real[k], diag_b});
            out.problem.add_row(std::move(re));
            out.problem.add_row(std::move(im));
        }

        // Reference: angle pin and magnitude anchor.
        const std::size_t ref = grid.reference_index();
        const RtuMeasurement* anchor = meas.rtu_at(grid.buses()[ref].id);
        if (anchor == nullptr) {
            for (const auto* list : {&meas.pv_poi, &meas.bt_poi})
                for (const auto& m : *list)
                    if (m.bus == grid.buses()[ref].id && anchor == nullptr) anchor = &m;
        }
        if (anchor == nullptr) throw DataError("reference bus lacks a voltage magnitude measurement");
        if (!(anchor->v_z > 0.0)) throw DataError("invalid voltage magnitude measurement");

        Row angle;
        angle.name = "ref_angle";
        angle.family = RowFamily::reference;
        angle.linear.push_back({g.v_imag[ref], 1.0});
        out.problem.add_row(std::move(angle));

        g.anchor_noise = noise("n_vref", anchor->sigma);
        Row mag;
        mag.name = "ref_magnitude";
        mag.family = RowFamily::reference;
        mag.constant = -anchor->v_z;
        mag.linear.push_back({g.v_real[ref], 1.0});
        mag.linear.push_back({g.anchor_noise, -1.0});
        out.problem.add_row(std::move(mag));

        out.layout.grid = std::move(g);
    }

    PvLayout add_pv(const PvSystem& pv, const PvReading& r, const std::vector<std::string>& unknown) {
        validate(pv);
        const std::string& nm = pv.name;
        PvLayout l;
        l.v_sh = var(nm + ".v_sh", VarKind::diode_voltage, r.z.z_v + pv.r_s * r.z.z_i, 2.0 * pv.a);
        l.v_pv = var(nm + ".v_pv", VarKind::dc_voltage, r.z.z_v);
        l.i_pv = var(nm + ".i_pv", VarKind::dc_current, r.z.z_i);
        l.n_ph = noise(nm + ".n_ph", r.sigma_ph);
        l.n_i = noise(nm + ".n_i", r.sigma_i);
        l.n_v = noise(nm + ".n_v", r.sigma_v);
        if (names_field(unknown, nm, "r_s")) l.r_s = param(nm + ".r_s", pv.r_s);
        if (names_field(unknown, nm, "r_sh")) l.r_sh = param(nm + ".r_sh", pv.r_sh);

        Row r1;
        r1.name = nm + ".photocurrent_kcl";
        r1.family = RowFamily::pv_circuit;
        r1.constant = -r.z.z_ph;
        r1.linear = {{l.n_ph, -1.0}, {l.i_pv, 1.0}};
        r1.diode = DiodeTerm{l.v_sh, pv.i_0, pv.a, 1.0};
        if (l.r_sh)
            r1.quotient = QuotientTerm{1.0, {{l.v_sh, 1.0}}, 0.0, *l.r_sh};
        else
            r1.linear.push_back({l.v_sh, 1.0 / pv.r_sh});
        out.problem.add_row(std::move(r1));

        Row r2;
        r2.name = nm + ".current_meter";
        r2.family = RowFamily::pv_circuit;
        r2.constant = r.z.z_i;
        r2.linear = {{l.i_pv, -1.0}, {l.n_i, 1.0}};
        out.problem.add_row(std::move(r2));

        Row r3;
        r3.name = nm + ".series_kvl";
        r3.family = RowFamily::pv_circuit;
        if (l.r_s) {
            // Voltage form: the current form (V_SH - V_PV) / R_S has a spurious
            // stationary point as R_S grows without bound.
            r3.linear = {{l.v_sh, 1.0}, {l.v_pv, -1.0}};
            r3.bilinear = {{*l.r_s, l.i_pv, -1.0}};
        } else {
            r3.linear = {{l.i_pv, 1.0}, {l.v_sh, -1.0 / pv.r_s}, {l.v_pv, 1.0 / pv.r_s}};
        }
        out.problem.add_row(std::move(r3));

        Row r4;
        r4.name = nm + ".voltage_meter";
        r4.family = RowFamily::pv_circuit;
        r4.constant = r.z.z_v;
        r4.linear = {{l.v_pv, -1.0}, {l.n_v, 1.0}};
        out.problem.add_row(std::move(r4));
        return l;
    }

    BatteryLayout add_battery(const BatterySystem& bt, const BatteryReading& r,
                              const std::optional<BatteryHistory>& prev, const std::vector<std::string>& unknown) {
        validate(bt);
        const std::string& nm = bt.name;
        BatteryLayout l;
        const double v_oc0 = prev ? prev->v_oc : r.z.z_v + bt.r_se * r.z.z_i;
        l.v_oc = var(nm + ".v_oc", VarKind::dc_voltage, v_oc0);
        l.v_bt = var(nm + ".v_bt", VarKind::dc_voltage, r.z.z_v);
        l.i_bt = var(nm + ".i_bt", VarKind::dc_current, r.z.z_i);
        l.n_i = noise(nm + ".n_i", r.sigma_i);
        l.n_v = noise(nm + ".n_v", r.sigma_v);
        if (names_field(unknown, nm, "r_se")) {
            // Without the SoC row, v_oc and r_se share a single equation.
            if (!prev) throw DataError("parameter " + nm + ".r_se is unidentifiable without a previous step");
            l.r_se = param(nm + ".r_se", bt.r_se);
        }

        Row r1;
        r1.name = nm + ".current_meter";
        r1.family = RowFamily::battery_circuit;
        r1.constant = r.z.z_i;
        r1.linear = {{l.i_bt, -1.0}, {l.n_i, 1.0}};
        out.problem.add_row(std::move(r1));

        Row r2;
        r2.name = nm + ".series_kvl";
        r2.family = RowFamily::battery_circuit;
        if (l.r_se) {
            // Voltage form, as for the PV series resistance.
            r2.linear = {{l.v_oc, 1.0}, {l.v_bt, -1.0}};
            r2.bilinear = {{*l.r_se, l.i_bt, -1.0}};
        } else {
            r2.linear = {{l.i_bt, 1.0}, {l.v_bt, 1.0 / bt.r_se}, {l.v_oc, -1.0 / bt.r_se}};
        }
        out.problem.add_row(std::move(r2));

        Row r3;
        r3.name = nm + ".voltage_meter";
        r3.family = RowFamily::battery_circuit;
        r3.constant = r.z.z_v;
        r3.linear = {{l.v_bt, -1.0}, {l.n_v, 1.0}};
        out.problem.add_row(std::move(r3));

        if (prev) {
            if (bt.ocv_b == 0.0) throw DataError("degenerate OCV map");
            const double k = bt.dt / (2.0 * bt.c_cap);
            const double carried = prev->v_oc - prev->v_bt;
            Row s;
            s.name = nm + ".soc_trapezoid";
            s.family = RowFamily::soc_trapezoid;
            s.constant = -prev->v_oc / bt.ocv_b;
            s.linear = {{l.v_oc, 1.0 / bt.ocv_b}};
            if (l.r_se) {
                // The series row makes i_bt equal (v_oc - v_bt) / R_SE at every feasible point.
                s.constant += k * prev->i_bt;
                s.linear.push_back({l.i_bt, k});
            } else {
                s.constant += k * carried / bt.r_se;
                s.linear.front().coeff += k / bt.r_se;
                s.linear.push_back({l.v_bt, -k / bt.r_se});
            }
            out.problem.add_row(std::move(s));
        }
        return l;
    }

    /// Real and reactive power balance between a DC plant and its meter circuit.
    /// `ac_scaled` puts the efficiency on the AC terms (rectification).
    void add_coupling(const std::string& nm, std::size_t i_dc, std::size_t v_dc, double dc_to_pu,
                      const CircuitLayout& c, int slot, bool ac_scaled) {
        const GridLayout& g = *out.layout.grid;
        const std::size_t vr = g.v_real[c.bus_index], vi = g.v_imag[c.bus_index];

        Row p;
        p.name = nm + ".coupling_p";
        p.family = RowFamily::coupling;
        p.efficiency_slot = slot;
        p.bilinear = {
            {i_dc, v_dc, dc_to_pu, !ac_scaled},
            {vr, vr, c.g, ac_scaled},
            {vi, vi, c.g, ac_scaled},
            {vr, c.n_real, 1.0, ac_scaled},
            {vi, c.n_imag, 1.0, ac_scaled},
        };
        out.problem.add_row(std::move(p));

        Row q;
        q.name = nm + ".coupling_q";
        q.family = RowFamily::coupling;
        q.bilinear = {
            {vr, vr, c.b, false},
            {vi, vi, c.b, false},
            {vi, c.n_real, -1.0, false},
            {vr, c.n_imag, 1.0, false},
        };
        out.problem.add_row(std::move(q));
    }
};

void check_unknowns(const std::vector<std::string>& unknown, const DerFleet& fleet) {
    for (const auto& path : unknown)
        if (!is_declared_parameter(path, fleet)) throw DataError("unknown parameter path '" + path + "'");
}

double measured_dc_watts(double scale, double v, double i) { return std::max(0.0, scale * v * i); }

}  // namespace

bool is_declared_parameter(const std::string& path, const DerFleet& fleet) {
    const ParamPath p = split_path(path);
    for (const auto& pv : fleet.pv)
        if (pv.name == p.der) return p.field == "r_s" || p.field == "r_sh";
    for (const auto& bt : fleet.battery)
        if (bt.name == p.der) return p.field == "r_se";
    return false;
}

AssembledProblem assemble_grid(const GridCase& grid, const MeasurementSet& meas) {
    Builder b;
    b.add_grid(grid, meas);
    b.out.problem.validate();
    return std::move(b.out);
}

AssembledProblem assemble_pv(const PvSystem& pv, const PvReading& reading, const std::vector<std::string>& unknown) {
    DerFleet single;
    single.pv.push_back(pv);
    for (const auto& path : unknown)
        if (split_path(path).der == pv.name && !is_declared_parameter(path, single))
            throw DataError("unknown parameter path '" + path + "'");
    Builder b;
    b.out.layout.pv.push_back(b.add_pv(pv, reading, unknown));
    b.out.problem.validate();
    return std::move(b.out);
}

AssembledProblem assemble_battery(const BatterySystem& bt, const BatteryReading& reading,
                                  const std::optional<BatteryHistory>& previous,
                                  const std::vector<std::string>& unknown) {
    DerFleet single;
    single.battery.push_back(bt);
    for (const auto& path : unknown)
        if (split_path(path).der == bt.name && !is_declared_parameter(path, single))
            throw DataError("unknown parameter path '" + path + "'");
    Builder b;
    b.out.layout.battery.push_back(b.add_battery(bt, reading, previous, unknown));
    b.out.problem.validate();
    return std::move(b.out);
}

AssembledProblem assemble_combined(const GridCase& grid, const DerFleet& fleet, const MeasurementSet& meas,
                                   const std::vector<std::string>& unknown,
                                   const std::vector<std::optional<BatteryHistory>>& previous,
                                   const std::vector<Dispatch>& dispatch) {
    check_unknowns(unknown, fleet);
    if (meas.pv.size() != fleet.pv.size() || meas.pv_poi.size() != fleet.pv.size())
        throw DataError("missing PV measurements for a declared PV circuit");
    if (meas.battery.size() != fleet.battery.size() || meas.bt_poi.size() != fleet.battery.size())
        throw DataError("missing battery measurements for a declared battery circuit");
    if (previous.size() != fleet.battery.size() || dispatch.size() != fleet.battery.size())
        throw DataError("battery history and dispatch must cover every battery");
    for (std::size_t k = 0; k < fleet.pv.size(); ++k)
        if (meas.pv_poi[k].bus != fleet.pv[k].bus)
            throw DataError("PV " + fleet.pv[k].name + " meter is not on its attachment bus");
    for (std::size_t k = 0; k < fleet.battery.size(); ++k)
        if (meas.bt_poi[k].bus != fleet.battery[k].bus)
            throw DataError("battery " + fleet.battery[k].name + " meter is not on its attachment bus");

    Builder b;
    b.add_grid(grid, meas);
    const double base = grid.base_mva();

    for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
        const PvSystem& pv = fleet.pv[k];
        PvLayout l = b.add_pv(pv, meas.pv[k], unknown);
        const double p_w = measured_dc_watts(pv.n_parallel_scale, meas.pv[k].z.z_v, meas.pv[k].z.z_i);
        l.efficiency_slot = static_cast<int>(b.out.problem.add_efficiency(inverter_efficiency(p_w, pv.inverter)));
        b.add_coupling(pv.name, l.i_pv, l.v_pv, pv.n_parallel_scale / (base * 1e6), b.out.layout.grid->pv_poi[k],
                       l.efficiency_slot, false);
        b.out.layout.pv.push_back(l);
    }
    for (std::size_t k = 0; k < fleet.battery.size(); ++k) {
        const BatterySystem& bt = fleet.battery[k];
        BatteryLayout l = b.add_battery(bt, meas.battery[k], previous[k], unknown);
        l.dispatch = dispatch[k];
        double eta = 0.0;
        if (dispatch[k] == Dispatch::discharging) {
            eta = inverter_efficiency(measured_dc_watts(bt.n_parallel_scale, meas.battery[k].z.z_v, meas.battery[k].z.z_i),
                                      bt.inverter);
        } else {
            eta = inverter_efficiency(std::max(0.0, meas.bt_poi[k].p_z) * base * 1e6, bt.rectifier);
        }
        l.efficiency_slot = static_cast<int>(b.out.problem.add_efficiency(eta));
        b.add_coupling(bt.name, l.i_bt, l.v_bt, bt.n_parallel_scale / (base * 1e6), b.out.layout.grid->bt_poi[k],
                       l.efficiency_slot, dispatch[k] == Dispatch::charging);
        b.out.layout.battery.push_back(l);
    }
    b.out.problem.validate();
    return std::move(b.out);
}

}  // namespace gridfuse::est
